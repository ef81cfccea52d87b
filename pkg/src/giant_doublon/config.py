"""Run configuration: YAML tree -> validated RunConfig.

Layout (all energies in units of J, times in 1/J)::

    experiment: emit            # spectrum | emit | sweep | cascade | transfer | mirror
    waveguide: {num_sites: 600, hopping: 1.0, nonlinearity: 4.0, branch: -1}
    pairs:
      - {size: 1, separation: 0, phase_1: pi/2, phase_2: pi/2,
         coupling: 0.1, detuning: -2.55, origin: 100}
      - emitters:                # explicit form
          - {left_point: 10, right_point: 11, right_phase: pi/2, coupling: 0.1, detuning: -2.55}
          - {left_point: 10, right_point: 11, right_phase: pi/2, coupling: 0.1, detuning: -2.55}
    options: {...}               # experiment-specific, see DEFAULTS
    sweep:                       # experiment: sweep only
      quantity: chirality        # chirality | emission
      axes:
        - {name: phase_1, start: -pi, stop: pi, steps: 16}
        - {name: phase_2, values: [0, pi/2]}

Numbers may be written as arithmetic in pi, e, sqrt, + - * / and **.
"""
from __future__ import annotations

import ast
import copy
import itertools
import math
import operator
from dataclasses import dataclass, field

import numpy as np
import yaml

from .effective import GiantEmitter, GiantEmitterPair
from .errors import ConfigurationError, DoublonError
from .spectrum import WaveguideParams

__all__ = [
    "ParseError",
    "ValidationError",
    "SweepAxis",
    "RunConfig",
    "parse_config",
    "load_config",
    "build_pair",
    "EXPERIMENTS",
    "DEFAULTS",
    "SWEEP_AXES",
]

EXPERIMENTS = ("spectrum", "emit", "sweep", "cascade", "transfer", "mirror")
CONVENTIONS = ("supplement", "main")

DEFAULTS: dict[str, dict] = {
    "spectrum": {"points": 64},
    "emit": {"t_final": 1100.0, "ramp": 20.0, "dt": 4.0, "samples": 221, "fit_window": None,
             "stark_compensation": True, "correlation_range": 10, "snapshot_times": [],
             "snapshot_format": "csv"},
    "sweep": {"t_final": 1100.0, "ramp": 20.0, "dt": 4.0, "samples": 221,
              "stark_compensation": True},
    "cascade": {"mode": "master", "gamma_plus": None, "gamma_minus": None, "drive_ratio": 0.0,
                "drive_phase": math.pi / 2, "initial": "eegg", "t_final": None, "samples": 301,
                "separation": 200, "dt": 4.0, "sample_step": 5.0},
    "transfer": {"gamma0": None, "calibrate": True, "family": "gaussian_erf",
                 "span": [4.0, 3.0], "dt": 4.0, "sample_step": 5.0, "stark_compensation": True,
                 "reflection_tol": 0.01},
    "mirror": {"dt": 4.0, "sample_step": 10.0, "stark_compensation": True, "flip": True,
               "final_time": None, "snapshot_times": []},
}

PAIR_COUNT = {"spectrum": (0, 0), "emit": (1, 1), "sweep": (1, 1), "cascade": (0, 1),
              "transfer": (2, 2), "mirror": (2, 2)}

SWEEP_AXES = ("phase_1", "phase_2", "separation", "size", "coupling", "detuning", "nonlinearity")
SWEEP_QUANTITIES = ("chirality", "emission")

_SYMMETRIC_KEYS = {"size", "separation", "phase_1", "phase_2", "coupling", "detuning", "origin", "mismatch"}
_EMITTER_KEYS = {"left_point", "right_point", "left_phase", "right_phase", "coupling", "detuning", "mismatch"}
_WAVEGUIDE_KEYS = {"num_sites", "hopping", "nonlinearity", "cavity_frequency_offset", "cut_bond", "branch"}
_TOP_KEYS = {"experiment", "waveguide", "pairs", "options", "sweep", "convention"}


class ParseError(ConfigurationError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line, self.column = line, column


class ValidationError(ConfigurationError):
    """All violated invariants, not just the first."""

    def __init__(self, issues: list[str]):
        super().__init__("; ".join(issues))
        self.issues = list(issues)


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt}


def _eval_node(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.operand))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1 and not node.keywords):
        return _FUNCS[node.func.id](_eval_node(node.args[0]))
    raise ValueError("unsupported expression")


def number(value):
    """Float from a YAML scalar; strings are arithmetic in pi and sqrt."""
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return _eval_node(ast.parse(value.strip(), mode="eval").body)
        except (SyntaxError, ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot evaluate {value!r}") from exc
    raise ValueError(f"expected a number, got {value!r}")


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple[float, ...]


@dataclass
class RunConfig:
    experiment: str
    waveguide: WaveguideParams
    pairs: list[GiantEmitterPair]
    pair_specs: list[dict]
    options: dict
    convention: str = "supplement"
    sweep_quantity: str | None = None
    axes: list[SweepAxis] = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)

    def grid(self):
        """Enumerate (index tuple, {axis: value}) over the sweep grid, C order."""
        shape = [range(len(a.values)) for a in self.axes]
        for idx in itertools.product(*shape):
            yield idx, {a.name: a.values[i] for a, i in zip(self.axes, idx)}

    @property
    def num_jobs(self) -> int:
        return math.prod(len(a.values) for a in self.axes) if self.axes else 0

    def echo(self) -> dict:
        """Resolved configuration, defaults filled in."""
        out = copy.deepcopy(self.raw)
        out["convention"] = self.convention
        out["options"] = dict(self.options)
        return out


def _mapping(x, where, issues):
    if x is None:
        return {}
    if not isinstance(x, dict):
        issues.append(f"{where}: expected a mapping")
        return {}
    return x


def _unknown(d, allowed, where, issues):
    for k in sorted(set(d) - set(allowed), key=str):
        issues.append(f"{where}.{k}: unknown key")


def _numbers(d, where, issues, ints=()):
    out = {}
    for k, v in d.items():
        if k in ints:
            if isinstance(v, bool) or not isinstance(v, int):
                issues.append(f"{where}.{k}: expected an integer, got {v!r}")
                continue
            out[k] = v
            continue
        try:
            out[k] = float(number(v))
        except ValueError as exc:
            issues.append(f"{where}.{k}: {exc}")
    return out


def build_pair(spec: dict, where: str = "pair") -> GiantEmitterPair:
    """GiantEmitterPair from either the symmetric or the explicit form (no geometry check)."""
    issues: list[str] = []
    pair = _build_pair(spec, where, issues)
    if issues:
        raise ValidationError(issues)
    return pair


def _build_pair(spec, where, issues):
    spec = _mapping(spec, where, issues)
    if "emitters" in spec:
        _unknown(spec, {"emitters"}, where, issues)
        ems = spec["emitters"]
        if not isinstance(ems, list) or len(ems) != 2:
            issues.append(f"{where}.emitters: expected a list of two emitters")
            return None
        built = []
        for i, e in enumerate(ems):
            w = f"{where}.emitters[{i}]"
            e = _mapping(e, w, issues)
            _unknown(e, _EMITTER_KEYS, w, issues)
            vals = _numbers({k: v for k, v in e.items() if k in _EMITTER_KEYS}, w, issues,
                            ints=("left_point", "right_point"))
            for req in ("left_point", "right_point"):
                if req not in e:
                    issues.append(f"{w}.{req}: required")
            try:
                built.append(GiantEmitter(**vals))
            except (DoublonError, TypeError) as exc:
                issues.append(f"{w}: {type(exc).__name__}: {exc}")
        if len(built) != 2:
            return None
        try:
            return GiantEmitterPair(*built)
        except DoublonError as exc:
            issues.append(f"{where}: {type(exc).__name__}: {exc}")
            return None
    _unknown(spec, _SYMMETRIC_KEYS, where, issues)
    vals = _numbers({k: v for k, v in spec.items() if k in _SYMMETRIC_KEYS}, where, issues,
                    ints=("size", "separation", "origin"))
    try:
        return GiantEmitterPair.symmetric(**vals)
    except (DoublonError, TypeError) as exc:
        issues.append(f"{where}: {type(exc).__name__}: {exc}")
        return None


def _axis(spec, where, issues):
    spec = _mapping(spec, where, issues)
    _unknown(spec, {"name", "start", "stop", "steps", "values"}, where, issues)
    name = spec.get("name")
    if name not in SWEEP_AXES:
        issues.append(f"{where}.name: must be one of {', '.join(SWEEP_AXES)}, got {name!r}")
    if "values" in spec:
        vals = spec["values"]
        if not isinstance(vals, list) or not vals:
            issues.append(f"{where}.values: sweep grids must be non-empty")
            return None
        try:
            values = tuple(float(number(v)) for v in vals)
        except ValueError as exc:
            issues.append(f"{where}.values: {exc}")
            return None
    else:
        missing = [k for k in ("start", "stop", "steps") if k not in spec]
        if missing:
            issues.append(f"{where}: needs values or start/stop/steps (missing {', '.join(missing)})")
            return None
        steps = spec["steps"]
        if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
            issues.append(f"{where}.steps: sweep grids must be non-empty (got {steps!r})")
            return None
        try:
            values = tuple(np.linspace(float(number(spec["start"])), float(number(spec["stop"])), steps).tolist())
        except ValueError as exc:
            issues.append(f"{where}: {exc}")
            return None
    if name in ("separation", "size") and any(v != int(v) for v in values):
        issues.append(f"{where}: {name} values must be integers")
    return SweepAxis(name, values) if name in SWEEP_AXES else None


def _options(experiment, given, issues):
    given = _mapping(given, "options", issues)
    defaults = DEFAULTS[experiment]
    _unknown(given, defaults, "options", issues)
    out = dict(defaults)
    for k, v in given.items():
        if k not in defaults:
            continue
        d = defaults[k]
        if isinstance(d, bool):
            if not isinstance(v, bool):
                issues.append(f"options.{k}: expected true/false, got {v!r}")
            out[k] = v
        elif isinstance(d, str):
            out[k] = v
        elif isinstance(d, list) or (d is None and isinstance(v, list)):
            try:
                out[k] = [float(number(x)) for x in v]
            except (TypeError, ValueError) as exc:
                issues.append(f"options.{k}: {exc}")
        elif v is None:
            out[k] = None
        else:
            try:
                x = number(v)
                out[k] = int(x) if isinstance(d, int) and not isinstance(d, bool) and float(x).is_integer() else float(x)
            except ValueError as exc:
                issues.append(f"options.{k}: {exc}")
    _check_options(experiment, out, issues)
    return out


def _check_options(experiment, o, issues):
    for k in ("t_final", "dt", "sample_step", "final_time"):
        if o.get(k) is not None and not o[k] > 0:
            issues.append(f"options.{k}: must be positive")
    if o.get("ramp") is not None and o["ramp"] < 0:
        issues.append("options.ramp: must be nonnegative")
    if "samples" in o and not (isinstance(o["samples"], int) and o["samples"] >= 2):
        issues.append("options.samples: must be an integer >= 2")
    if experiment == "spectrum" and not (isinstance(o["points"], int) and o["points"] >= 1):
        issues.append("options.points: must be a positive integer")
    if experiment == "cascade":
        if o["mode"] not in ("master", "compare"):
            issues.append(f"options.mode: must be master or compare, got {o['mode']!r}")
        if not (isinstance(o["initial"], str) and len(o["initial"]) == 4 and not set(o["initial"]) - set("ge")):
            issues.append(f"options.initial: basis label like 'eegg', got {o['initial']!r}")
    if experiment == "transfer":
        if o["family"] not in ("gaussian_erf", "exponential_step"):
            issues.append(f"options.family: unknown pulse family {o['family']!r}")
    if experiment == "emit" and o["snapshot_format"] not in ("csv", "binary"):
        issues.append(f"options.snapshot_format: must be csv or binary, got {o['snapshot_format']!r}")


def parse_config(text: str, convention: str | None = None, experiment: str | None = None) -> RunConfig:
    """Parse and validate; raises ParseError or ValidationError listing every problem.

    ``experiment`` (the CLI subcommand) fills in a missing ``experiment`` key
    and must agree with it when both are present.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        col = mark.column + 1 if mark is not None else None
        raise ParseError(f"malformed configuration: {getattr(exc, 'problem', exc)}", line, col) from None
    if not isinstance(raw, dict):
        raise ParseError("configuration must be a mapping at the top level", 1, 1)
    issues: list[str] = []
    _unknown(raw, _TOP_KEYS, "config", issues)
    given = raw.get("experiment", experiment)
    if experiment is not None and given != experiment:
        issues.append(f"experiment: config says {given!r} but the command is {experiment!r}")
    experiment = given
    if experiment not in EXPERIMENTS:
        issues.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {experiment!r}")
    conv = convention or raw.get("convention", "supplement")
    if conv not in CONVENTIONS:
        issues.append(f"convention: must be main or supplement, got {conv!r}")

    wg = _mapping(raw.get("waveguide"), "waveguide", issues)
    # a cascade run from given rates needs no lattice
    if "num_sites" not in wg and not (experiment == "cascade" and not raw.get("pairs")):
        issues.append("waveguide.num_sites: required")
    _unknown(wg, _WAVEGUIDE_KEYS, "waveguide", issues)
    wvals = _numbers({k: v for k, v in wg.items() if k in _WAVEGUIDE_KEYS and v is not None}, "waveguide",
                     issues, ints=("num_sites", "cut_bond", "branch"))
    params = None
    if "num_sites" in wvals:
        try:
            params = WaveguideParams(**wvals)
        except DoublonError as exc:
            issues.append(f"waveguide: {type(exc).__name__}: {exc}")

    pair_specs = raw.get("pairs") or []
    if not isinstance(pair_specs, list):
        issues.append("pairs: expected a list")
        pair_specs = []
    pairs = []
    for i, spec in enumerate(pair_specs):
        pair = _build_pair(spec, f"pairs[{i}]", issues)
        if pair is None:
            continue
        pairs.append(pair)
        if params is not None and experiment != "sweep":
            try:
                pair.check_geometry(params.num_sites)
            except DoublonError as exc:
                issues.append(f"pairs[{i}]: {type(exc).__name__}: {exc}")
    if experiment in PAIR_COUNT:
        lo, hi = PAIR_COUNT[experiment]
        if not lo <= len(pair_specs) <= hi:
            want = str(lo) if lo == hi else f"{lo} to {hi}"
            issues.append(f"pairs: experiment {experiment} needs {want} pair(s), got {len(pair_specs)}")

    options = _options(experiment, raw.get("options"), issues) if experiment in EXPERIMENTS else {}
    if experiment == "cascade" and options and not pair_specs and options.get("gamma_plus") is None:
        issues.append("options.gamma_plus: required when no pair is given")
    if experiment == "cascade" and options.get("mode") == "compare" and not pair_specs:
        issues.append("pairs: compare mode needs one pair")

    quantity, axes = None, []
    sweep = raw.get("sweep")
    if experiment == "sweep":
        sweep = _mapping(sweep, "sweep", issues)
        _unknown(sweep, {"quantity", "axes"}, "sweep", issues)
        quantity = sweep.get("quantity", "chirality")
        if quantity not in SWEEP_QUANTITIES:
            issues.append(f"sweep.quantity: must be one of {', '.join(SWEEP_QUANTITIES)}, got {quantity!r}")
        ax = sweep.get("axes")
        if not isinstance(ax, list) or not ax:
            issues.append("sweep.axes: sweep grids must be non-empty")
            ax = []
        for i, a in enumerate(ax):
            parsed = _axis(a, f"sweep.axes[{i}]", issues)
            if parsed is not None:
                axes.append(parsed)
        names = [a.name for a in axes]
        if len(set(names)) != len(names):
            issues.append("sweep.axes: duplicate axis name")
        if pair_specs and isinstance(pair_specs[0], dict) and "emitters" in pair_specs[0] \
                and set(names) & {"separation", "size"}:
            issues.append("sweep.axes: separation/size axes need the symmetric pair form")
    elif sweep is not None:
        issues.append(f"sweep: only valid for experiment sweep, not {experiment}")

    if issues:
        raise ValidationError(issues)
    raw = dict(raw, experiment=experiment)
    return RunConfig(experiment, params, pairs, [dict(s) for s in pair_specs], options, conv,
                     quantity, axes, raw)


def load_config(path, convention: str | None = None, experiment: str | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), convention, experiment)
