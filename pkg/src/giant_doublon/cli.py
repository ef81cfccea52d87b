"""Command-line driver: ``giant-doublon <experiment> --config run.yaml --out dir``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 sweep finished with failed jobs. Failures leave ``error.json`` in the
output directory and one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, RunConfig, load_config
from .errors import ConfigurationError, DoublonError, OnBandSingularity, OutOfBand, ResonantSinglePhoton
from .io import (format_number, sha256_file, write_csv, write_density_matrix, write_field_binary,
                 write_field_csv, write_json)

__all__ = ["main", "run", "preflight", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL", "EXIT_PARTIAL"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
MANIFEST = "manifest.json"
# parameter problems that only show up once the physics is evaluated
_CONFIG_ERRORS = (ConfigurationError, OutOfBand, OnBandSingularity, ResonantSinglePhoton)


def exit_code_for(exc: BaseException) -> int:
    return EXIT_CONFIG if isinstance(exc, _CONFIG_ERRORS) else EXIT_NUMERICAL


def preflight(config: RunConfig) -> list[str]:
    """Physics checks that must pass before any propagation starts."""
    from .effective import decay_and_chirality

    issues = []
    p = config.waveguide
    checks = []
    if config.experiment in ("emit", "transfer"):
        checks = [(f"pairs[{i}]", pair, p) for i, pair in enumerate(config.pairs)]
    elif config.experiment == "mirror":
        checks = [("pairs[0]", config.pairs[0], p), ("pairs[1] (flipped lattice)", config.pairs[1], p.sign_flipped())]
    elif config.experiment == "cascade" and config.pairs:
        checks = [("pairs[0]", config.pairs[0], p)]
        if config.options["mode"] == "compare":
            try:
                config.pairs[0].shifted(int(config.options["separation"])).check_geometry(p.num_sites)
            except DoublonError as exc:
                issues.append(f"options.separation: {type(exc).__name__}: {exc}")
    for where, pair, params in checks:
        try:
            decay_and_chirality(pair, params)
        except DoublonError as exc:
            issues.append(f"{where}: {type(exc).__name__}: {exc}")
    return issues


def _conventions(config: RunConfig) -> dict:
    wg = config.waveguide
    branch = "none" if wg is None else ("attractive" if wg.branch < 0 else "repulsive")
    return {
        "doublon_branch": branch,
        "pulse_constant": config.convention,
        "pulse_constant_value": "1.01 gamma0^2 pi/4" if config.convention == "supplement" else "1.01 gamma0^2 pi/2",
        "time_origin": "lab time: Gamma_B(t) = Gamma_A(delay - t)",
        "units": "J = 1; energies in units of J, times in units of 1/J",
        "basis_order": "emitters A1 A2 B1 B2, index = sum_k 2^k e_k",
        "csv_format": "17 significant digits",
    }


class _Run:
    """Collects artifacts and counters while an experiment executes."""

    def __init__(self, out: Path):
        self.out = out
        self.steps = 0
        self.matvecs = 0
        self.summary: dict[str, float] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def count(self, trace):
        if trace is not None:
            self.steps += int(getattr(trace, "steps", 0))
            self.matvecs += int(getattr(trace, "matvecs", 0))

    def write_summary(self):
        keys = sorted(self.summary)
        write_csv(self.path("summary.csv"), {"quantity": np.array(keys),
                                             "value": np.array([self.summary[k] for k in keys], float)})


# ---------------------------------------------------------------------------
# experiments

def _spectrum(cfg: RunConfig, run: _Run) -> int:
    from .spectrum import doublon_decay_length, doublon_energy, group_velocity, momentum_grid

    p = cfg.waveguide
    K = momentum_grid(cfg.options["points"])
    write_csv(run.path("spectrum.csv"), {"K": K, "E_K": doublon_energy(K, p),
                                         "L_u": doublon_decay_length(K, p), "v_g": group_velocity(K, p)})
    return EXIT_OK


def _emit(cfg: RunConfig, run: _Run) -> int:
    from .lattice import field_distribution
    from .protocols import run_emission

    o = cfg.options
    snaps = tuple(sorted(o["snapshot_times"]))
    res = run_emission(cfg.waveguide, cfg.pairs[0], t_final=o["t_final"], ramp=o["ramp"], dt=o["dt"],
                       samples=o["samples"], fit_window=o["fit_window"],
                       stark_compensation=o["stark_compensation"], correlation_range=o["correlation_range"],
                       snapshot_times=snaps)
    tr = res.trace
    run.count(tr)
    write_csv(run.path("trace.csv"), {"t": tr.times, "excited": tr.excited_population,
                                      "single_photon": tr.single_photon, "two_photon": tr.two_photon,
                                      "P_L": tr.observables["P_L"], "P_R": tr.observables["P_R"],
                                      "norm": tr.norm})
    if res.correlation is not None:
        r, G = res.correlation
        write_csv(run.path("correlation.csv"), {"r": r, "G2": G})
        if len(G) > 5 and G[5] > 0:
            run.summary["G2_ratio_0_5"] = G[0] / G[5]
    basis = None
    if snaps:
        from .lattice import LatticeSystem

        basis = LatticeSystem(cfg.waveguide, cfg.pairs[0]).basis
        fields = [field_distribution(tr.snapshots[t], basis) for t in sorted(tr.snapshots)]
        if o["snapshot_format"] == "binary":
            write_field_binary(run.path("fields.bin"), cfg.waveguide.num_sites, [f.density for f in fields])
            write_csv(run.path("fields_index.csv"), {"sample": np.arange(len(fields)),
                                                     "t": np.array(sorted(tr.snapshots))})
        else:
            for t, f in zip(sorted(tr.snapshots), fields):
                write_field_csv(run.path(f"field_t{format_number(t)}.csv"), f)
    an = res.analytic
    run.summary.update({
        "fitted_rate": res.fit.rate, "analytic_rate": an.total_rate, "gamma_plus": an.gamma_plus,
        "gamma_minus": an.gamma_minus, "rate_error": res.rate_error, "chiral_factor_lattice": res.chiral_factor,
        "chiral_factor_analytic": an.chiral_factor, "max_single_photon": float(np.max(tr.single_photon)),
        "stark_shift": res.stark_shift, "resonant_K": an.resonant_K,
        "max_norm_drift_rate": tr.max_norm_drift_rate()})
    return EXIT_OK


def _sweep(cfg: RunConfig, run: _Run, jobs: int) -> int:
    from .sweep import run_sweep

    res = run_sweep(cfg, jobs)
    write_csv(run.path("sweep.csv"), res.table())
    write_csv(run.path("status.csv"), res.status_table())
    run.summary.update({"jobs": len(res.jobs), "failed_jobs": len(res.failed)})
    return EXIT_PARTIAL if res.failed else EXIT_OK


def _cascade(cfg: RunConfig, run: _Run) -> int:
    from .cascade import CascadeConfig, basis_state, bell_state, dark_state, driven_steady_state, evolve_master
    from .effective import decay_and_chirality
    from .protocols import compare_cascade

    o = cfg.options
    if o["mode"] == "compare":
        cmp = compare_cascade(cfg.waveguide, cfg.pairs[0], int(o["separation"]), t_final=o["t_final"],
                              dt=o["dt"], sample_step=o["sample_step"])
        write_csv(run.path("comparison.csv"), {"t": cmp.times, "lattice_A": cmp.lattice_A, "lattice_B": cmp.lattice_B,
                                               "master_A": cmp.master_A, "master_B": cmp.master_B,
                                               "master_B_shifted": cmp.master_B_shifted})
        run.summary.update({"error": cmp.error, "error_shifted": cmp.error_shifted,
                            "max_reexcitation": cmp.max_reexcitation, "gamma_plus": cmp.config.gamma_plus,
                            "gamma_minus": cmp.config.gamma_minus, "delay": cmp.config.delay})
        return EXIT_OK
    gp, gm = o["gamma_plus"], o["gamma_minus"]
    if cfg.pairs and (gp is None or gm is None):
        an = decay_and_chirality(cfg.pairs[0], cfg.waveguide)
        gp = an.gamma_plus if gp is None else gp
        gm = an.gamma_minus if gm is None else gm
    gm = 0.0 if gm is None else gm
    drive = o["drive_ratio"] * gp
    cc = CascadeConfig(gp, gm, drive_amplitude=drive, drive_phase=o["drive_phase"])
    t_final = o["t_final"] if o["t_final"] is not None else 10.0 / max(gp, 1e-300)
    t = np.linspace(0.0, t_final, o["samples"])
    target = dark_state(cc) if drive and gp > 0 else None
    tr = evolve_master(basis_state(o["initial"]), cc, t, target=target)
    cols = {"t": t, "excited_A": tr.excited_A, "excited_B": tr.excited_B, "ground": tr.ground,
            "trace": tr.trace, "min_eigenvalue": tr.min_eigenvalue}
    if tr.fidelity is not None:
        cols["fidelity"] = tr.fidelity
    write_csv(run.path("master.csv"), cols)
    run.summary.update({"gamma_plus": gp, "gamma_minus": gm, "drive_amplitude": drive,
                        "max_trace_drift": float(np.max(np.abs(tr.trace - 1)))})
    if drive:
        rho, fid = driven_steady_state(cc)
        write_density_matrix(run.path("steady_state"), rho)
        b = bell_state()
        run.summary.update({"steady_fidelity": fid, "bell_overlap": float(np.real(b.conj() @ rho @ b))})
    return EXIT_OK


def _transfer(cfg: RunConfig, run: _Run) -> int:
    from .protocols import TransferPulse, calibrate_pair, run_transfer

    o = cfg.options
    A, B = cfg.pairs
    cal = calibrate_pair(cfg.waveguide, A) if o["calibrate"] and o["gamma0"] is None else None
    pulse = TransferPulse(1.0, family=o["family"], convention=cfg.convention, origin="main")
    rep = run_transfer(cfg.waveguide, A, B, pulse=pulse, gamma0=o["gamma0"], calibration=cal,
                       span=tuple(o["span"]), dt=o["dt"], sample_step=o["sample_step"],
                       stark_compensation=o["stark_compensation"], reflection_tol=o["reflection_tol"])
    run.count(rep.trace)
    write_csv(run.path("transfer.csv"), {"t": rep.times, "excited_A": rep.excited_A, "excited_B": rep.excited_B,
                                         "single_photon": rep.single_photon, "two_photon": rep.two_photon,
                                         "gamma_A": rep.pulse.rate_A(rep.times),
                                         "gamma_B": rep.pulse.rate_B(rep.times)})
    write_csv(run.path("residual.csv"), {"t": rep.residual_times, "residual": rep.residual,
                                         "residual_normalized": rep.residual_normalized,
                                         "outgoing": rep.outgoing})
    run.summary.update({"efficiency": rep.efficiency, "leakage": rep.leakage, "remaining_A": rep.remaining_A,
                        "max_residual": rep.max_residual, "gamma0": rep.pulse.gamma0,
                        "shaping_constant": rep.pulse.c, "delay": rep.pulse.delay,
                        "coupling_peak": rep.coupling_peak, "wall_mass": rep.wall_mass})
    if cal is not None:
        run.summary.update({"calibrated_rate": cal.rate, "calibrated_shift": cal.shift})
    return EXIT_OK


def _mirror(cfg: RunConfig, run: _Run) -> int:
    from .lattice import LatticeSystem, field_distribution
    from .protocols import run_mirror

    o = cfg.options
    A, B = cfg.pairs
    snaps = tuple(sorted(o["snapshot_times"]))
    rep = run_mirror(cfg.waveguide, A, B, dt=o["dt"], sample_step=o["sample_step"],
                     stark_compensation=o["stark_compensation"], flip=o["flip"],
                     snapshot_times=snaps, final_time=o["final_time"])
    run.count(rep.trace)
    write_csv(run.path("mirror.csv"), {"t": rep.times, "excited_A": rep.excited_A, "excited_B": rep.excited_B})
    if rep.snapshots:
        basis = LatticeSystem(cfg.waveguide, [A, B]).basis
        ts = sorted(rep.snapshots)
        write_field_binary(run.path("fields.bin"), cfg.waveguide.num_sites,
                           [field_distribution(rep.snapshots[t], basis).density for t in ts])
        write_csv(run.path("fields_index.csv"), {"sample": np.arange(len(ts)), "t": np.array(ts)})
    s = rep.sequence
    run.summary.update({"efficiency": rep.efficiency, "efficiency_time": rep.efficiency_time,
                        "final_efficiency": rep.final_efficiency, "flip_time": s.flip_time,
                        "cut_bond": s.cut_bond, "final_time": s.final_time,
                        "reflection_time": s.reflection_time if s.reflection_time is not None else math.nan,
                        "spectral_identity_error": rep.spectral_identity_error})
    return EXIT_OK


_RUNNERS = {"spectrum": _spectrum, "emit": _emit, "cascade": _cascade, "transfer": _transfer, "mirror": _mirror}


# ---------------------------------------------------------------------------

def _manifest(cfg: RunConfig, status: str, run: _Run | None, wall: float, error: dict | None = None) -> dict:
    files = {}
    if run is not None:
        for f in sorted(run.out.iterdir()):
            if f.is_file() and f.name != MANIFEST:
                files[f.name] = sha256_file(f)
    return {"engine": "giant_doublon", "version": __version__, "experiment": cfg.experiment,
            "status": status, "config": cfg.echo(), "conventions": _conventions(cfg),
            "wall_clock_seconds": wall, "steps": run.steps if run else 0,
            "matvecs": run.matvecs if run else 0, "files": files, "error": error}


def _error_record(exc: BaseException, code: int) -> dict:
    rec = {"status": "error", "exit_code": code, "error_type": type(exc).__name__, "message": str(exc)}
    issues = getattr(exc, "issues", None)
    if issues:
        rec["issues"] = list(issues)
    for k in ("line", "column"):
        if getattr(exc, k, None) is not None:
            rec[k] = getattr(exc, k)
    return rec


def _report(rec: dict, out: Path | None):
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "error.json", rec)


def run(cfg: RunConfig, out, jobs: int = 1) -> int:
    """Execute a validated config, writing artifacts and the manifest into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(out)
    write_json(out / MANIFEST, _manifest(cfg, "running", None, 0.0))
    t0 = time.perf_counter()
    try:
        code = _sweep(cfg, r, jobs) if cfg.experiment == "sweep" else _RUNNERS[cfg.experiment](cfg, r)
        error = None
    except DoublonError as exc:
        code = exit_code_for(exc)
        error = _error_record(exc, code)
        write_json(out / "error.json", error)
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
    if r.summary:
        r.write_summary()
    status = {EXIT_OK: "ok", EXIT_PARTIAL: "partial"}.get(code, "error")
    write_json(out / MANIFEST, _manifest(cfg, status, r, time.perf_counter() - t0, error))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="giant-doublon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        sp = sub.add_parser(name, help=f"run the {name} experiment" if name != "validate" else "check a config")
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (required except for validate)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel processes for sweeps")
        sp.add_argument("--convention", choices=("main", "supplement"),
                        help="pulse shaping constant; overrides the config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    if args.command != "validate" and out is None:
        _report({"status": "error", "exit_code": EXIT_CONFIG, "error_type": "UsageError",
                 "message": "--out is required"}, None)
        return EXIT_CONFIG
    if args.jobs < 1:
        _report({"status": "error", "exit_code": EXIT_CONFIG, "error_type": "UsageError",
                 "message": "--jobs must be >= 1"}, out)
        return EXIT_CONFIG
    experiment = None if args.command == "validate" else args.command
    try:
        cfg = load_config(args.config, args.convention, experiment)
        issues = preflight(cfg)
        if issues:
            from .config import ValidationError

            raise ValidationError(issues)
    except (DoublonError, OSError) as exc:
        code = EXIT_CONFIG
        _report(_error_record(exc, code), out)
        return code
    if args.command == "validate":
        print(json.dumps({"status": "ok", "experiment": cfg.experiment,
                          "jobs": cfg.num_jobs if cfg.experiment == "sweep" else 1}))
        return EXIT_OK
    return run(cfg, out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
