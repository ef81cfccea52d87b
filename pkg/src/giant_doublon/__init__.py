"""Giant-emitter pairs emitting doublons into a nonlinear coupled-cavity array."""
from __future__ import annotations

__version__ = "0.1.0"
