"""Time-dependent experiments on the lattice: emission, state transfer, mirror.

Every run builds a ``LatticeSystem`` with a ``Schedule`` and propagates the
two-excitation state with the Chebyshev propagator. Emitter frequencies can
track the instantaneous second-order shift from the single-photon band
(``stark_compensation``), so the pair stays resonant with the doublon band as
couplings change.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import erf

from .cascade import CascadeConfig, basis_state, evolve_master
from .effective import (
    ChiralResult,
    GiantEmitter,
    GiantEmitterPair,
    decay_and_chirality,
    optimal_detuning,
    stark_shift,
)
from .errors import ConfigurationError, DoublonError, PoleProximity, ReflectionContamination, SequenceError
from .fitting import DecayFit, fit_decay_rate
from .lattice import (
    LatticeSystem,
    Schedule,
    SimulationTrace,
    directional_split,
    pair_correlation,
    propagate,
)
from .spectrum import WaveguideParams, doublon_decay_length, doublon_energy

__all__ = [
    "SHAPING_CONSTANTS",
    "TransferPulse",
    "pulse_rate",
    "rate_to_coupling",
    "ideal_transfer",
    "dark_state_residual",
    "EmissionResult",
    "run_emission",
    "PairCalibration",
    "calibrate_pair",
    "TransferReport",
    "run_transfer",
    "MirrorSequence",
    "MirrorReport",
    "run_mirror",
    "select_mirror_sequence",
    "FlipCheck",
    "wavepacket_flip_check",
    "dispersion_free_pair",
    "CascadeComparison",
    "compare_cascade",
]

# c = factor * 1.01 * gamma0^2 for the gaussian_erf family
SHAPING_CONSTANTS = {"supplement": math.pi / 4, "main": math.pi / 2}


# ---------------------------------------------------------------------------
# pulses

@dataclass(frozen=True)
class TransferPulse:
    """Rate profiles Gamma_A(t), Gamma_B(t) for the dark-state transfer.

    ``origin="main"``: Gamma_B(t) = Gamma_A(delay - t) in lab time.
    ``origin="supplement"``: Gamma_B(t) = Gamma_A(-t) in the retarded frame of B.
    """
    gamma0: float
    family: str = "gaussian_erf"
    convention: str = "supplement"
    shaping: float | None = None
    delay: float = 0.0
    origin: str = "main"
    t_start: float = -math.inf
    t_stop: float = math.inf

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise ConfigurationError("gamma0 must be positive")
        if self.family not in ("gaussian_erf", "exponential_step"):
            raise ConfigurationError(f"unknown pulse family {self.family!r}")
        if self.convention not in SHAPING_CONSTANTS:
            raise ConfigurationError(f"convention must be one of {sorted(SHAPING_CONSTANTS)}")
        if self.origin not in ("main", "supplement"):
            raise ConfigurationError("origin must be 'main' or 'supplement'")
        if self.shaping is not None and self.shaping <= 0:
            raise ConfigurationError("shaping constant must be positive")

    @property
    def c(self) -> float:
        if self.shaping is not None:
            return self.shaping
        return 1.01 * self.gamma0 ** 2 * SHAPING_CONSTANTS[self.convention]

    def rate_A(self, t):
        return pulse_rate(t, self)

    def rate_B(self, t):
        t = np.asarray(t, dtype=float)
        return pulse_rate((self.delay - t) if self.origin == "main" else -t, self)


def pulse_rate(t, pulse: TransferPulse):
    """Gamma_A(t) of the configured family (vectorised)."""
    t = np.asarray(t, dtype=float)
    g0 = pulse.gamma0
    if pulse.family == "exponential_step":
        e = np.exp(np.minimum(g0 * t, 0.0))
        out = np.where(t < 0, g0 * e / (2 - e), g0)
        return out if out.ndim else float(out)
    c = pulse.c
    den = 1 / g0 - math.sqrt(math.pi / (4 * c)) * erf(math.sqrt(c) * t)
    if np.any(den < 1e-9 / g0):
        raise PoleProximity(f"pulse denominator {np.min(den):.3g} near zero; increase the shaping constant")
    out = np.exp(-c * t ** 2) / den
    return out if out.ndim else float(out)


def rate_to_coupling(rate, gamma0: float, g0: float):
    """g(t) = g0 (Gamma(t)/gamma0)^(1/4), from Gamma proportional to g^4."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ConfigurationError("rates must be nonnegative")
    out = g0 * (rate / gamma0) ** 0.25
    return out if out.ndim else float(out)


def ideal_transfer(pulse: TransferPulse, t_grid, rtol: float = 1e-10):
    """Two-amplitude cascade in B's retarded frame (Gamma_B'(t) = Gamma_A(-t)).

    Returns (c_A, c_B, residual) where residual = sqrt(G_A) c_A + sqrt(G_B') c_B.
    """
    t = np.asarray(t_grid, dtype=float)
    gA = lambda s: pulse_rate(s, pulse)
    gB = lambda s: pulse_rate(-s, pulse)

    def rhs(s, y):
        a, b = y[0] + 1j * y[1], y[2] + 1j * y[3]
        ga, gb = gA(s), gB(s)
        da = -0.5 * ga * a
        db = -0.5 * gb * b - math.sqrt(ga * gb) * a
        return [da.real, da.imag, db.real, db.imag]

    # start from the dark state so the tiny initial rates do not matter
    r = math.sqrt(gA(t[0]) / gB(t[0]))
    a0, b0 = 1 / math.hypot(1, r), -r / math.hypot(1, r)
    sol = solve_ivp(rhs, (t[0], t[-1]), [a0, 0.0, b0, 0.0], t_eval=t, rtol=rtol, atol=1e-13,
                    method="DOP853")
    cA = sol.y[0] + 1j * sol.y[1]
    cB = sol.y[2] + 1j * sol.y[3]
    res = np.sqrt(gA(t)) * cA + np.sqrt(gB(t)) * cB
    return cA, cB, res


def dark_state_residual(c_A, c_B, rate_A, rate_B, outgoing=0.0, phase=0.0, reference_rate=None):
    """|sqrt(G_A) c_A + e^{i phase} sqrt(G_B) c_B| / sqrt(G_ref) + outgoing pair norm.

    ``reference_rate`` (the pulse base rate) makes the first term dimensionless,
    so a bright state at typical rates gives O(1); None leaves it in rate^1/2
    units. The vacuum gives 0.
    """
    c_A, c_B = np.asarray(c_A), np.asarray(c_B)
    rA, rB = np.asarray(rate_A, float), np.asarray(rate_B, float)
    term = np.abs(np.sqrt(rA) * c_A + np.exp(1j * phase) * np.sqrt(rB) * c_B)
    if reference_rate is not None:
        term = term / math.sqrt(reference_rate)
    return term + np.asarray(outgoing, float)


# ---------------------------------------------------------------------------
# helpers

def _pair_amp_observers(system: LatticeSystem, pair_index: int, name: str):
    b = system.basis
    e0 = 2 * pair_index
    idx = b.emitter_pair_index(e0, e0 + 1)
    return {f"{name}_re": lambda t, psi: psi[idx].real, f"{name}_im": lambda t, psi: psi[idx].imag}


def _stark_tracker(emitter: GiantEmitter, params: WaveguideParams, coupling, base: float | None = None):
    """Frequency schedule w(t) = w0 - dw(g(t)) that cancels the band shift."""
    w0 = emitter.frequency if base is None else base
    # dw scales as g^2 exactly at second order
    unit = stark_shift(emitter, params, 1.0)
    return lambda t: w0 - unit * coupling(t) ** 2, unit


def _smooth_ramp(g0: float, ramp: float):
    if ramp <= 0:
        return lambda t: g0
    return lambda t: g0 if t >= ramp else g0 * math.sin(0.5 * math.pi * max(t, 0.0) / ramp) ** 2


def _edge_observer(basis, margin: int = 10):
    """Photon-pair mass within ``margin`` sites of either wall."""
    N = basis.num_sites
    pc = (basis.photon_p + basis.photon_q) / 2.0
    edge = (pc < margin) | (pc > N - 1 - margin)

    def f(t, psi):
        return float(np.sum(np.abs(psi[basis.photon_slice][edge]) ** 2))
    return f


# ---------------------------------------------------------------------------
# single-pair emission

@dataclass
class EmissionResult:
    trace: SimulationTrace
    fit: DecayFit
    analytic: ChiralResult
    left: float
    right: float
    chiral_factor: float
    correlation: tuple[np.ndarray, np.ndarray] | None
    stark_shift: float

    @property
    def rate_error(self) -> float:
        return abs(self.fit.rate - self.analytic.total_rate) / self.analytic.total_rate


def run_emission(params: WaveguideParams, pair: GiantEmitterPair, t_final: float = 1100.0,
                 ramp: float = 20.0, dt: float = 4.0, samples: int = 221, fit_window=None,
                 stark_compensation: bool = True, correlation_range: int = 10,
                 snapshot_times=()) -> EmissionResult:
    """Spontaneous emission of one GEP starting from |ee>.

    The couplings rise smoothly over ``ramp`` (sin^2 profile) so the photon
    sector follows the dressed state instead of ringing after a quench. The
    rate is fitted on ``fit_window`` (default: from 3 ramps to 90% of t_final).
    """
    an = decay_and_chirality(pair, params)
    e1, e2 = pair.emitters
    g_fns = {0: _smooth_ramp(e1.coupling, ramp), 1: _smooth_ramp(e2.coupling, ramp)}
    freqs = {}
    shift = stark_shift(e1, params)
    if stark_compensation:
        for i, e in enumerate((e1, e2)):
            freqs[i], _ = _stark_tracker(e, params, g_fns[i])
    sched = Schedule(couplings=g_fns, frequencies=freqs)
    system = LatticeSystem(params, pair, sched)
    ts = np.linspace(0.0, t_final, samples)
    right = {}

    def p_left(t, psi):
        L, R, _ = directional_split(psi, system.basis, pair.center)
        right[t] = R
        return L

    obs = {"P_L": p_left, "P_R": lambda t, psi: right.pop(t)}
    tr = propagate(system, system.basis.pair_state(), (0.0, t_final), dt=dt, method="chebyshev",
                   sample_times=ts, snapshot_times=snapshot_times, observers=obs)
    window = fit_window or (3 * ramp, 0.9 * t_final)
    fit = fit_decay_rate(ts, tr.excited_population, window)
    L, R, C = directional_split(tr.final_state, system.basis, pair.center)
    corr = None
    if correlation_range:
        corr = pair_correlation(tr.final_state, system.basis, max_r=correlation_range)
    return EmissionResult(tr, fit, an, L, R, C, corr, shift)


@dataclass(frozen=True)
class PairCalibration:
    """Lattice-measured Markov parameters of one GEP at coupling ``coupling``.

    ``rate``: fitted total decay rate of |ee>. ``directional_rate``: its
    chiral share, rate * G+ / (G+ + G-) from the analytic ratio. ``shift``:
    frequency offset of the pair amplitude left after single-photon
    compensation (fourth order in g, from the doublon modes and the
    interaction of the two photon clouds).
    """
    coupling: float
    rate: float
    directional_rate: float
    shift: float
    analytic_rate: float
    lamb_shift: float


def calibrate_pair(params: WaveguideParams, pair: GiantEmitterPair, t_final: float = 600.0,
                   ramp: float = 20.0, dt: float = 4.0) -> PairCalibration:
    """Static emission run that fits the decay rate and the residual pair frequency."""
    from .effective import doublon_lamb_shift

    e1, e2 = pair.emitters
    g_fns = {0: _smooth_ramp(e1.coupling, ramp), 1: _smooth_ramp(e2.coupling, ramp)}
    freqs = {i: _stark_tracker(e, params, g_fns[i])[0] for i, e in enumerate((e1, e2))}
    system = LatticeSystem(params, pair, Schedule(couplings=g_fns, frequencies=freqs))
    obs = _pair_amp_observers(system, 0, "c")
    ts = np.linspace(0.0, t_final, int(t_final / 5) + 1)
    tr = propagate(system, system.basis.pair_state(), (0.0, t_final), dt=dt, method="chebyshev",
                   sample_times=ts, observers=obs)
    c = (tr.observables["c_re"] + 1j * tr.observables["c_im"]) * np.exp(2j * pair.detuning * ts)
    window = (4 * ramp, t_final)
    fit = fit_decay_rate(ts, np.abs(c) ** 2, window)
    m = (ts >= window[0]) & (ts <= window[1])
    slope = np.polyfit(ts[m], np.unwrap(np.angle(c[m])), 1)[0]
    an = decay_and_chirality(pair, params)
    frac = an.gamma_plus / an.total_rate
    return PairCalibration(max(e1.coupling, e2.coupling), fit.rate, fit.rate * frac, float(-slope),
                           an.total_rate, doublon_lamb_shift(pair, params))


# ---------------------------------------------------------------------------
# state transfer

@dataclass
class TransferReport:
    times: np.ndarray
    excited_A: np.ndarray
    excited_B: np.ndarray
    single_photon: np.ndarray
    two_photon: np.ndarray
    residual_times: np.ndarray
    residual: np.ndarray             # |sqrt(G_A) c_A + sqrt(G_B) c_B| + outgoing pair norm
    residual_normalized: np.ndarray  # first term divided by sqrt(gamma0)
    outgoing: np.ndarray
    efficiency: float
    leakage: float
    remaining_A: float
    pulse: TransferPulse
    coupling_peak: float
    wall_mass: float
    trace: SimulationTrace = field(repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else float("nan")


def run_transfer(params: WaveguideParams, gep_A: GiantEmitterPair, gep_B: GiantEmitterPair,
                 pulse: TransferPulse | None = None, coupling: float | None = None,
                 gamma0: float | None = None, calibration: PairCalibration | None = None,
                 span=(4.0, 3.0), dt: float = 4.0, sample_step: float = 5.0,
                 stark_compensation: bool = True, modulate: bool = True,
                 reflection_tol: float | None = 0.01) -> TransferReport:
    """Dark-state transfer of |ee> from GEP A to GEP B along the chiral direction.

    ``coupling`` is the reference g0 at which the pulse base rate equals
    ``gamma0`` (default: the analytic directional rate of A; a lattice-fitted
    rate calibrates the pulse to the simulated decay). A ``calibration``
    supplies that rate and also the residual pair shift, cancelled as
    -shift (g/g_cal)^4 / 2 on every emitter. The window runs from
    -span[0]/sqrt(c) to delay + span[1]/sqrt(c). With ``modulate=False`` both couplings stay at g0
    (control run without dark-state trapping). ReflectionContamination is
    raised when more than ``reflection_tol`` of pair mass reaches the walls.
    """
    g0 = gep_A.emitter_1.coupling if coupling is None else coupling
    anA = decay_and_chirality(gep_A.with_coupling(g0), params)
    dq = gep_B.center - gep_A.center
    delay = abs(dq / anA.group_velocity)
    if calibration is not None and gamma0 is None:
        gamma0 = calibration.directional_rate * (g0 / calibration.coupling) ** 4
    rate0 = anA.gamma_plus if gamma0 is None else gamma0
    if pulse is None:
        pulse = TransferPulse(rate0, delay=delay)
    else:
        pulse = TransferPulse(rate0, pulse.family, pulse.convention, pulse.shaping, delay,
                              pulse.origin, pulse.t_start, pulse.t_stop)
    if pulse.origin != "main":
        raise ConfigurationError("lattice runs use lab time; set origin='main'")
    width = 1 / math.sqrt(pulse.c) if pulse.family == "gaussian_erf" else 1 / pulse.gamma0
    before, after = (span, span) if np.isscalar(span) else span
    t_i = max(pulse.t_start, -before * width)
    t_f = min(pulse.t_stop, delay + after * width)
    if modulate:
        gA = lambda t: rate_to_coupling(pulse.rate_A(t), pulse.gamma0, g0)
        gB = lambda t: rate_to_coupling(pulse.rate_B(t), pulse.gamma0, g0)
    else:
        gA = gB = lambda t: g0
    g_fns = {0: gA, 1: gA, 2: gB, 3: gB}
    emitters = list(gep_A.emitters) + list(gep_B.emitters)
    freqs = {}
    if stark_compensation:
        for i, e in enumerate(emitters):
            freqs[i], _ = _stark_tracker(e, params, g_fns[i])
        if calibration is not None:
            per = 0.5 * calibration.shift / calibration.coupling ** 4
            freqs = {i: (lambda f, gf: lambda t: f(t) - per * gf(t) ** 4)(freqs[i], g_fns[i]) for i in freqs}
    system = LatticeSystem(params, [gep_A, gep_B], Schedule(couplings=g_fns, frequencies=freqs))
    b = system.basis
    # sample grid commensurate with the delay so c_B(t + delay) is on the grid
    m = max(1, int(math.ceil(delay / sample_step)))
    h = delay / m if delay > 0 else sample_step
    n = int(math.floor((t_f - t_i) / h + 1e-9))
    ts = t_i + h * np.arange(n + 1)
    if ts[-1] < t_f - 1e-9:
        ts = np.append(ts, t_f)
    iB = b.emitter_pair_index(2, 3)
    far = gep_B.emitter_2.right_point + 5
    pc = (b.photon_p + b.photon_q) / 2.0

    def outgoing(t, psi):
        w = np.abs(psi[b.photon_slice]) ** 2
        return float(w[pc > far].sum())

    obs = {**_pair_amp_observers(system, 0, "cA"), **_pair_amp_observers(system, 1, "cB"),
           "outgoing": outgoing, "edge": _edge_observer(b)}
    tr = propagate(system, b.pair_state(0, 1), (t_i, t_f), dt=dt, method="chebyshev",
                   sample_times=ts, observers=obs)
    edge = float(tr.observables["edge"].max())
    if reflection_tol is not None and edge > reflection_tol:
        raise ReflectionContamination(f"pair mass {edge:.3g} reached the walls during the transfer window")
    cA = tr.observables["cA_re"] + 1j * tr.observables["cA_im"]
    cB = tr.observables["cB_re"] + 1j * tr.observables["cB_im"]
    # pair c_A(t) with c_B(t + delay): B's retarded frame
    shift = m if delay > 0 else 0
    k = max(n + 1 - shift, 0)   # pairs on the uniform part of the grid
    a = np.sqrt(pulse.rate_A(ts[:k])) * cA[:k]
    bb = np.sqrt(pulse.rate_B(ts[shift:shift + k])) * cB[shift:shift + k]
    s = np.vdot(a, bb)
    phase = float(np.angle(-np.conj(s))) if abs(s) > 0 else 0.0
    out_mass = tr.observables["outgoing"][shift:shift + k]
    args = (cA[:k], cB[shift:shift + k], pulse.rate_A(ts[:k]), pulse.rate_B(ts[shift:shift + k]))
    resid = dark_state_residual(*args, out_mass, phase)
    resid_n = dark_state_residual(*args, out_mass, phase, pulse.gamma0)
    pk = max(max(abs(gA(t)) for t in ts), max(abs(gB(t)) for t in ts))
    return TransferReport(ts, np.abs(cA) ** 2, np.abs(cB) ** 2, tr.single_photon, tr.two_photon,
                          ts[:k], resid, resid_n, out_mass, float(np.abs(cB[-1]) ** 2),
                          float(tr.single_photon[-1] + tr.two_photon[-1]), float(np.abs(cA[-1]) ** 2),
                          pulse, float(pk), edge, tr)


# ---------------------------------------------------------------------------
# sign-flip mirror

@dataclass(frozen=True)
class MirrorSequence:
    flip_time: float
    cut_bond: int
    final_time: float
    reflection_time: float | None = None

    def __post_init__(self):
        if not (0 < self.flip_time < self.final_time):
            raise ConfigurationError("need 0 < flip_time < final_time")


@dataclass
class MirrorReport:
    times: np.ndarray
    excited_A: np.ndarray
    excited_B: np.ndarray
    efficiency: float
    efficiency_time: float
    final_efficiency: float
    sequence: MirrorSequence
    spectral_identity_error: float
    snapshots: dict = field(default_factory=dict, repr=False)
    trace: SimulationTrace | None = field(default=None, repr=False)


def _mass_quantiles(psi, basis, q: float = 0.01):
    """(trailing, leading) x_c quantiles of the photon-pair mass."""
    w = np.abs(psi[basis.photon_slice]) ** 2
    xc = (basis.photon_p + basis.photon_q) / 2.0
    order = np.argsort(xc, kind="stable")
    cw = np.cumsum(w[order])
    tot = cw[-1]
    lo = xc[order][np.searchsorted(cw, q * tot)]
    hi = xc[order][np.searchsorted(cw, (1 - q) * tot)]
    return float(lo), float(hi)


def _mirror_stark(gep_A, gep_B, params, g_fns, flip_time):
    """Compensation for A in the original lattice and B in the flipped one."""
    flipped = params.sign_flipped()
    freqs = {}
    for i, e in enumerate(gep_A.emitters):
        unit = stark_shift(e, params, 1.0)
        freqs[i] = (lambda w0, u, f: lambda t: w0 - u * f(t) ** 2)(e.frequency, unit, g_fns[i])
    for j, e in enumerate(gep_B.emitters):
        i = 2 + j
        before = stark_shift(e, params, 1.0)
        after = stark_shift(e, flipped, 1.0)
        freqs[i] = (lambda w0, u0, u1, f: lambda t: w0 - (u1 if t >= flip_time else u0) * f(t) ** 2)(
            e.frequency, before, after, g_fns[i])
    return freqs


def select_mirror_sequence(params: WaveguideParams, gep_A: GiantEmitterPair, gep_B: GiantEmitterPair,
                           dt: float = 4.0, probe_step: float = 10.0, quantile: float = 0.01,
                           lead_gap: float = 10.0, tail_gap: int = 5, stark_compensation: bool = True):
    """Flip time and cut bond from the free emission of A.

    t_1: first probe time at which the leading mass quantile is within
    ``lead_gap`` sites of B's left coupling point. n_b: trailing quantile at
    t_1 minus ``tail_gap`` sites.
    """
    an = decay_and_chirality(gep_A, params)
    target = min(gep_B.emitter_1.left_point, gep_B.emitter_2.left_point) - lead_gap
    g_fns = {}
    sched = Schedule(frequencies=_mirror_stark(gep_A, gep_B, params, {
        i: (lambda g: lambda t: g)(e.coupling) for i, e in enumerate(list(gep_A.emitters) + list(gep_B.emitters))},
        math.inf) if stark_compensation else {})
    system = LatticeSystem(params, [gep_A, gep_B], sched)
    b = system.basis
    psi = b.pair_state(0, 1)
    t = 0.0
    t_max = 3 * (target - gep_A.center) / abs(an.group_velocity) + 200
    while t < t_max:
        tr = propagate(system, psi, (t, t + probe_step), dt=dt, method="chebyshev",
                       sample_times=[t + probe_step])
        psi, t = tr.final_state, t + probe_step
        if tr.two_photon[-1] < 1e-6:
            continue
        lo, hi = _mass_quantiles(psi, b, quantile)
        if hi >= target:
            nb = int(math.floor(lo)) - tail_gap
            if nb <= max(gep_A.emitter_1.right_point, gep_A.emitter_2.right_point):
                raise SequenceError("pulse tail still overlaps GEP A; increase the pair separation")
            return t, nb
    raise SequenceError("wavefront never approached GEP B")


def run_mirror(params: WaveguideParams, gep_A: GiantEmitterPair, gep_B: GiantEmitterPair,
               sequence: MirrorSequence | None = None, dt: float = 4.0, sample_step: float = 10.0,
               stark_compensation: bool = True, flip: bool = True, snapshot_times=(),
               final_time: float | None = None) -> MirrorReport:
    """Free emission by A, (J, U) sign flip plus bond cut at t_1, absorption by B.

    With ``flip=False`` the same window is run without the flip (control).
    """
    an = decay_and_chirality(gep_A, params)
    v = abs(an.group_velocity)
    if sequence is None:
        t1, nb = select_mirror_sequence(params, gep_A, gep_B, dt=dt, stark_compensation=stark_compensation)
        # the front returns to the cut, reflects and crosses to B; then B absorbs
        t_back = 2 * (gep_B.center - nb) / v
        tf = final_time or t1 + t_back + 4 / an.gamma_plus
        sequence = MirrorSequence(t1, nb, tf, t1 + (gep_B.center - nb) / v)
    t1 = sequence.flip_time
    g_fns = {i: (lambda g: lambda t: g)(e.coupling)
             for i, e in enumerate(list(gep_A.emitters) + list(gep_B.emitters))}
    freqs = _mirror_stark(gep_A, gep_B, params, g_fns, t1 if flip else math.inf) \
        if stark_compensation else {}
    sched = Schedule(frequencies=freqs, flip_time=t1 if flip else None,
                     cut_bond=sequence.cut_bond if flip else None, cut_time=t1 if flip else None)
    system = LatticeSystem(params, [gep_A, gep_B], sched)
    b = system.basis
    ts = np.arange(0.0, sequence.final_time + 1e-9, sample_step)
    ts = np.union1d(ts, [t1, sequence.final_time])
    first = ts[ts <= t1]
    tr1 = propagate(system, b.pair_state(0, 1), (0.0, t1), dt=dt, method="chebyshev",
                    sample_times=first, snapshot_times=[s for s in snapshot_times if s <= t1])
    psi = tr1.final_state
    left = min(gep_B.emitter_1.left_point, gep_B.emitter_2.left_point)
    if tr1.two_photon[-1] > 1e-6:
        lo, hi = _mass_quantiles(psi, b)
        if hi > left:
            raise SequenceError(f"leading front at {hi:.0f} already passed GEP B at {left} when flipping")
        if flip and lo < sequence.cut_bond:
            warnings.warn("cut bond lies inside the pulse tail", RuntimeWarning)
    second = ts[ts > t1]
    tr2 = propagate(system, psi, (t1, sequence.final_time), dt=dt, method="chebyshev",
                    sample_times=second, snapshot_times=[s for s in snapshot_times if s > t1])
    iB = b.emitter_pair_index(2, 3)
    exA = np.concatenate([tr1.pair_populations[:, 0], tr2.pair_populations[:, 0]])
    exB = np.concatenate([tr1.pair_populations[:, iB], tr2.pair_populations[:, iB]])
    i = int(np.argmax(exB))
    K = np.linspace(0.05, math.pi - 0.05, 64)
    ident = float(np.max(np.abs(doublon_energy(K, params.sign_flipped()) + doublon_energy(K, params))))
    snaps = {**tr1.snapshots, **tr2.snapshots}
    return MirrorReport(ts, exA, exB, float(exB[i]), float(ts[i]), float(exB[-1]), sequence, ident, snaps, tr2)


def dispersion_free_pair(params: WaveguideParams, coupling: float, origin: int = 0, size: int = 1,
                         phases=None) -> GiantEmitterPair:
    """Chiral GEP (equal phases, D = 0) whose optimal resonance sits at the band inflection.

    Short pulses at strong coupling span many K; at the inflection point the
    group velocity is stationary, so the pulse keeps its shape over long
    flights (used by the mirror protocol). The common phase is found by
    bracketing K_r(phase) - K* on ``phases`` (default a grid on (0, pi)).
    """
    from scipy.optimize import brentq

    from .spectrum import inflection_wavevector

    K_star = inflection_wavevector(params)

    def k_res(ph):
        pair = GiantEmitterPair.symmetric(size, 0, ph, ph, coupling, -abs(params.nonlinearity) / 2, origin=origin)
        pair = pair.with_detuning(optimal_detuning(pair, params))
        return decay_and_chirality(pair, params).resonant_K, pair

    grid = np.linspace(0.05, math.pi - 0.05, 40) if phases is None else np.asarray(phases)
    prev = None
    for ph in grid:
        try:
            d = k_res(ph)[0] - K_star
        except DoublonError:
            prev = None
            continue
        if prev is not None and prev[1] * d <= 0:
            root = brentq(lambda x: k_res(x)[0] - K_star, prev[0], ph, xtol=1e-12)
            return k_res(root)[1]
        prev = (ph, d)
    raise ConfigurationError("no equal-phase chiral point reaches the inflection wavevector")


@dataclass
class FlipCheck:
    shape_correlation: float
    velocity_before: float
    velocity_after: float
    group_velocity: float


def wavepacket_flip_check(params: WaveguideParams, K0: float = math.pi / 3, width: float = 15.0,
                          t_run: float = 60.0, dt: float = 2.0) -> FlipCheck:
    """Doublon wavepacket evolved for t_run, then (J, U) flipped for another t_run.

    The shape correlation compares |psi| after the flip with |psi| at the flip,
    translated by the centre-of-mass displacement.
    """
    from .spectrum import doublon_wavefunction, group_velocity

    N = params.num_sites
    pair = GiantEmitterPair.symmetric(1, 0, 0.0, 0.0, 0.0, -3.0, origin=1)
    system = LatticeSystem(params, pair, Schedule(flip_time=t_run))
    b = system.basis
    x = np.arange(N)
    xc = (x[:, None] + x[None, :]) / 2.0
    rel = x[None, :] - x[:, None]
    X0 = N / 2
    psi2 = np.exp(-((xc - X0) ** 2) / (4 * width ** 2) + 1j * K0 * xc) * doublon_wavefunction(K0, rel, params)
    vec = b.photon_state(psi2)
    vec /= np.linalg.norm(vec)
    pc = (b.photon_p + b.photon_q) / 2.0

    def com(t, psi):
        w = np.abs(psi[b.photon_slice]) ** 2
        return float((pc * w).sum() / w.sum())

    tr = propagate(system, vec, (0.0, 2 * t_run), dt=dt, method="chebyshev",
                   sample_times=[0.0, t_run, 2 * t_run], snapshot_times=[t_run], observers={"com": com})
    x0, x1, x2 = tr.observables["com"]
    at_flip = np.abs(tr.snapshots[t_run][b.photon_slice])
    after = np.abs(tr.final_state[b.photon_slice])
    corr = _shape_correlation(after, at_flip, b, x2 - x1)
    return FlipCheck(corr, (x1 - x0) / t_run, (x2 - x1) / t_run, float(group_velocity(K0, params)))


def _shape_correlation(after, before, basis, shift):
    """Normalised overlap of |psi| profiles after translating ``before`` by ``shift`` sites."""
    N = basis.num_sites
    s = int(round(shift))
    A = np.zeros((N, N))
    B = np.zeros((N, N))
    A[basis.photon_p, basis.photon_q] = after
    B[basis.photon_p, basis.photon_q] = before
    B = np.roll(np.roll(B, s, axis=0), s, axis=1)
    return float((A * B).sum() / (np.linalg.norm(A) * np.linalg.norm(B)))


# ---------------------------------------------------------------------------
# cascade vs lattice

@dataclass
class CascadeComparison:
    times: np.ndarray
    lattice_A: np.ndarray
    lattice_B: np.ndarray
    master_A: np.ndarray
    master_B: np.ndarray
    master_B_shifted: np.ndarray
    error: float
    error_shifted: float
    max_reexcitation: float
    config: CascadeConfig
    analytic: ChiralResult


def compare_cascade(params: WaveguideParams, gep_A: GiantEmitterPair, separation: int,
                    t_final: float | None = None, dt: float = 4.0, sample_step: float = 5.0,
                    stark_compensation: bool = True, ramp: float = 20.0) -> CascadeComparison:
    """Lattice run of two identical GEPs ``separation`` sites apart vs the cascade model.

    A starts excited. Errors are max absolute deviations of both population
    curves before the first boundary reflection can reach either pair.
    """
    an = decay_and_chirality(gep_A, params)
    gep_B = gep_A.shifted(separation)
    gep_B.check_geometry(params.num_sites)
    Lu = float(doublon_decay_length(an.resonant_K, params))
    cfg = CascadeConfig(an.gamma_plus, an.gamma_minus, pair_separation=float(separation),
                        group_velocity=an.group_velocity, decay_length=Lu)
    v = abs(an.group_velocity)
    N = params.num_sites
    # right-moving field leaves B, reflects at the wall and comes back
    t_ref = 2 * (N - 1 - gep_B.center) / v
    t_final = t_ref * 0.95 if t_final is None else t_final
    if t_final > t_ref:
        warnings.warn("comparison window extends past the first boundary reflection", RuntimeWarning)
    emitters = list(gep_A.emitters) + list(gep_B.emitters)
    g_fns = {i: _smooth_ramp(e.coupling, ramp) for i, e in enumerate(emitters)}
    freqs = {}
    if stark_compensation:
        for i, e in enumerate(emitters):
            freqs[i], _ = _stark_tracker(e, params, g_fns[i])
    system = LatticeSystem(params, [gep_A, gep_B], Schedule(couplings=g_fns, frequencies=freqs))
    b = system.basis
    ts = np.arange(0.0, t_final + 1e-9, sample_step)
    tr = propagate(system, b.pair_state(0, 1), (0.0, ts[-1]), dt=dt, method="chebyshev", sample_times=ts)
    lat_A = tr.pair_populations[:, b.emitter_pair_index(0, 1)]
    lat_B = tr.pair_populations[:, b.emitter_pair_index(2, 3)]
    # the ramp delays the effective start by about half its length
    me = evolve_master(basis_state("eegg"), cfg, np.maximum(ts - 0.5 * ramp, 0.0))
    shifted = np.interp(ts - cfg.delay, ts, me.excited_B, left=0.0)
    err = float(max(np.abs(lat_A - me.excited_A).max(), np.abs(lat_B - me.excited_B).max()))
    err_s = float(max(np.abs(lat_A - me.excited_A).max(), np.abs(lat_B - shifted).max()))
    # re-excitation of A after its decay: rise above its running minimum
    run_min = np.minimum.accumulate(lat_A)
    reex = float(np.max(lat_A - run_min))
    return CascadeComparison(ts, lat_A, lat_B, me.excited_A, me.excited_B, shifted, err, err_s, reex, cfg, an)
