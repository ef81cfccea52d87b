"""Parameter sweeps: grid jobs, bounded-parallel scheduler, keyed aggregation."""
from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig, build_pair
from .effective import decay_and_chirality

__all__ = ["JobResult", "SweepResult", "make_jobs", "evaluate_job", "schedule", "run_sweep", "RESULT_COLUMNS"]

RESULT_COLUMNS = {
    "chirality": ("gamma_plus", "gamma_minus", "total_rate", "chiral_factor", "resonant_K"),
    "emission": ("fitted_rate", "analytic_rate", "rate_error", "chiral_factor", "analytic_chiral_factor",
                 "max_single_photon"),
}


@dataclass(frozen=True)
class JobResult:
    key: tuple[int, ...]
    values: dict
    status: str                       # "ok" | "failed"
    results: dict = field(default_factory=dict)
    error_type: str = ""
    message: str = ""


@dataclass
class SweepResult:
    quantity: str
    axes: list[str]
    jobs: list[JobResult]

    @property
    def failed(self) -> list[JobResult]:
        return [j for j in self.jobs if j.status != "ok"]

    def table(self) -> dict[str, np.ndarray]:
        """Aggregated columns ordered by grid index (independent of completion order)."""
        jobs = sorted(self.jobs, key=lambda j: j.key)
        cols: dict[str, np.ndarray] = {}
        for k, name in enumerate(self.axes):
            cols[f"i_{name}"] = np.array([j.key[k] for j in jobs])
        for name in self.axes:
            cols[name] = np.array([j.values[name] for j in jobs], float)
        for c in RESULT_COLUMNS[self.quantity]:
            cols[c] = np.array([j.results.get(c, math.nan) for j in jobs], float)
        return cols

    def status_table(self) -> dict[str, np.ndarray]:
        jobs = sorted(self.jobs, key=lambda j: j.key)
        clean = lambda s: s.replace(",", ";").replace("\n", " ")
        return {"job": np.array(["-".join(map(str, j.key)) for j in jobs]),
                "status": np.array([j.status for j in jobs]),
                "error_type": np.array([j.error_type or "-" for j in jobs]),
                "message": np.array([clean(j.message) or "-" for j in jobs])}


def make_jobs(config: RunConfig) -> list[tuple[tuple[int, ...], dict]]:
    """One payload per grid point; payloads are plain data so they pickle cheaply."""
    base = {"params": config.waveguide, "pair_spec": config.pair_specs[0],
            "quantity": config.sweep_quantity, "options": dict(config.options)}
    return [(key, dict(base, values=values)) for key, values in config.grid()]


def _job_system(payload):
    params = payload["params"]
    spec = dict(payload["pair_spec"])
    values = payload["values"]
    if "nonlinearity" in values:
        params = replace(params, nonlinearity=values["nonlinearity"])
    explicit = "emitters" in spec
    if not explicit:
        for k, v in values.items():
            if k != "nonlinearity":
                spec[k] = int(round(v)) if k in ("separation", "size") else v
    pair = build_pair(spec)
    if explicit:
        if "phase_1" in values or "phase_2" in values:
            pair = pair.with_phases(values.get("phase_1", pair.emitter_1.relative_phase),
                                    values.get("phase_2", pair.emitter_2.relative_phase))
        if "coupling" in values:
            pair = pair.with_coupling(values["coupling"])
        if "detuning" in values:
            pair = pair.with_detuning(values["detuning"])
    pair.check_geometry(params.num_sites)
    return params, pair


def evaluate_job(key, payload) -> JobResult:
    """Run one grid point; any exception becomes a failure record."""
    try:
        params, pair = _job_system(payload)
        if payload["quantity"] == "chirality":
            an = decay_and_chirality(pair, params)
            res = {"gamma_plus": an.gamma_plus, "gamma_minus": an.gamma_minus, "total_rate": an.total_rate,
                   "chiral_factor": an.chiral_factor, "resonant_K": an.resonant_K}
        else:
            from .protocols import run_emission

            o = payload["options"]
            em = run_emission(params, pair, t_final=o["t_final"], ramp=o["ramp"], dt=o["dt"],
                              samples=o["samples"], stark_compensation=o["stark_compensation"],
                              correlation_range=0)
            res = {"fitted_rate": em.fit.rate, "analytic_rate": em.analytic.total_rate,
                   "rate_error": em.rate_error, "chiral_factor": em.chiral_factor,
                   "analytic_chiral_factor": em.analytic.chiral_factor,
                   "max_single_photon": float(np.max(em.trace.single_photon))}
        return JobResult(key, payload["values"], "ok", res)
    except Exception as exc:  # noqa: BLE001 - per-job isolation is the point
        return JobResult(key, payload["values"], "failed", {}, type(exc).__name__, str(exc))


def schedule(jobs, worker=evaluate_job, parallelism: int = 1) -> list:
    """Run ``worker(key, payload)`` for every job with at most ``parallelism`` processes."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1 or len(jobs) <= 1:
        return [worker(k, p) for k, p in jobs]
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
    out = []
    with ProcessPoolExecutor(max_workers=parallelism, mp_context=ctx) as ex:
        futures = [ex.submit(worker, k, p) for k, p in jobs]
        for f in as_completed(futures):
            out.append(f.result())
    return out


def run_sweep(config: RunConfig, parallelism: int = 1) -> SweepResult:
    jobs = make_jobs(config)
    return SweepResult(config.sweep_quantity, [a.name for a in config.axes], schedule(jobs, parallelism=parallelism))
