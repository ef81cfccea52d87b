from __future__ import annotations

import contextlib

import pytest

_RESULTS: dict[int, tuple[str, bool, list[str]]] = {}


class _Recorder:
    def __init__(self):
        self.ok = True
        self.details: list[str] = []

    def check(self, cond, detail: str) -> bool:
        cond = bool(cond)
        self.ok &= cond
        self.details.append(("" if cond else "FAILED ") + detail)
        return cond


@pytest.fixture
def criterion():
    """``with criterion(n, title) as rec: rec.check(cond, detail)``; one summary line per n."""

    @contextlib.contextmanager
    def _ctx(number: int, title: str):
        rec = _Recorder()
        try:
            yield rec
        except BaseException as exc:
            rec.ok = False
            rec.details.append(f"error {type(exc).__name__}: {exc}")
            raise
        finally:
            line = f"criterion {number:2d} {'PASS' if rec.ok else 'FAIL'}: {title} | " + "; ".join(rec.details)
            print(line)
            _RESULTS[number] = (title, rec.ok, rec.details)
        assert rec.ok, "; ".join(d for d in rec.details if d.startswith("FAILED"))

    return _ctx


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, details = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} | " + "; ".join(details))
