"""Exponential-decay fits of excited-state populations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NonMonotonic


@dataclass(frozen=True)
class DecayFit:
    rate: float
    residual: float      # rms of the log-population residual
    intercept: float
    samples: int


def fit_decay_rate(times, population, window=None, rise_tol: float = 1e-3) -> DecayFit:
    """Log-linear least-squares slope of population(t) inside ``window``.

    Raises NonMonotonic when the population rises by more than ``rise_tol``
    (relative) between samples, which signals oscillatory or bound dynamics.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(population, dtype=float)
    if window is not None:
        lo, hi = window
        m = (t >= lo) & (t <= hi)
        t, p = t[m], p[m]
    if t.size < 20:
        raise ConfigurationError(f"need at least 20 samples in the fit window, got {t.size}")
    if np.any(p <= 0):
        raise NonMonotonic("population reaches zero inside the window")
    rise = np.diff(p) / p[:-1]
    if np.any(rise > rise_tol):
        raise NonMonotonic(f"population rises by {rise.max():.3g} (relative) between samples")
    y = np.log(p)
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * t + icpt)
    return DecayFit(float(-slope), float(np.sqrt(np.mean(res ** 2))), float(icpt), int(t.size))
