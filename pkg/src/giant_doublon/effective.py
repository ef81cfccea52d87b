"""Interference-channel model of supercorrelated doublon emission.

A giant-emitter pair (GEP) with both emitters excited emits one doublon by
virtual exchange of single photons. After eliminating the single-photon
states, the pair couples to doublon mode K through

    V_K = -(g1 g2 / (J sqrt(N))) F_K,

where F_K is a sum of four channel terms, one per pair of coupling points.
All momentum sums use the periodic grid of ``params.num_sites`` points.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigurationError, GeometryError, ResonantSinglePhoton, SinglePhotonLeak, StepSizeUnderflow
from .spectrum import (
    WaveguideParams,
    doublon_energy,
    doublon_normalization,
    group_velocity,
    momentum_grid,
    pair_ratio,
    resonant_wavevector,
)

__all__ = [
    "GiantEmitter",
    "GiantEmitterPair",
    "ChannelVector",
    "ChiralResult",
    "ReducedTrace",
    "wrap_phase",
    "single_photon_energy",
    "mode_kernel",
    "channel_amplitude",
    "effective_coupling",
    "decay_and_chirality",
    "optimal_detuning",
    "doublon_lamb_shift",
    "chirality_large_d",
    "mismatch_coupling",
    "reduced_evolution",
    "stark_shift",
]


def wrap_phase(phi: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = math.remainder(phi, 2 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class GiantEmitter:
    left_point: int
    right_point: int
    left_phase: float = 0.0
    right_phase: float = 0.0
    coupling: float = 0.1
    detuning: float = -2.55
    mismatch: float = 0.0

    def __post_init__(self):
        if self.left_point < 0 or self.right_point < self.left_point:
            raise GeometryError(
                f"need 0 <= left_point <= right_point, got ({self.left_point}, {self.right_point})")

    @property
    def size(self) -> int:
        return self.right_point - self.left_point

    @property
    def relative_phase(self) -> float:
        return wrap_phase(self.right_phase - self.left_phase)

    @property
    def frequency(self) -> float:
        """Bare transition frequency in the rotating frame of the cavities."""
        return self.detuning + self.mismatch

    def points(self) -> tuple[tuple[str, int, float], ...]:
        return (("l", self.left_point, self.left_phase), ("r", self.right_point, self.right_phase))

    def check_geometry(self, num_sites: int):
        if self.right_point >= num_sites:
            raise GeometryError(f"coupling point {self.right_point} outside lattice of {num_sites} sites")

    def shifted(self, offset: int) -> "GiantEmitter":
        return replace(self, left_point=self.left_point + offset, right_point=self.right_point + offset)


@dataclass(frozen=True)
class GiantEmitterPair:
    emitter_1: GiantEmitter
    emitter_2: GiantEmitter

    def __post_init__(self):
        if not math.isclose(self.emitter_1.detuning, self.emitter_2.detuning, rel_tol=0, abs_tol=1e-12):
            raise ConfigurationError("both emitters must share the pair detuning; use mismatch for offsets")

    @classmethod
    def symmetric(cls, size: int = 1, separation: int = 0, phase_1: float = math.pi / 2,
                  phase_2: float = math.pi / 2, coupling: float = 0.1, detuning: float = -2.55,
                  origin: int = 0, mismatch: float = 0.0) -> "GiantEmitterPair":
        """Two emitters of equal size whose centres are ``separation`` sites apart.

        Emitter 1 sits at [origin, origin+size]. A nonzero ``mismatch`` w puts
        emitter 1 at detuning - w and emitter 2 at detuning + w.
        """
        e1 = GiantEmitter(origin, origin + size, 0.0, phase_1, coupling, detuning, -mismatch)
        e2 = GiantEmitter(origin + separation, origin + separation + size, 0.0, phase_2, coupling,
                          detuning, mismatch)
        return cls(e1, e2)

    @property
    def emitters(self) -> tuple[GiantEmitter, GiantEmitter]:
        return (self.emitter_1, self.emitter_2)

    @property
    def center_separation(self) -> float:
        e1, e2 = self.emitter_1, self.emitter_2
        return (abs(e2.left_point + e2.right_point) - abs(e1.left_point + e1.right_point)) / 2

    @property
    def center(self) -> float:
        pts = [e.left_point + e.right_point for e in self.emitters]
        return sum(pts) / 4

    @property
    def detuning(self) -> float:
        return self.emitter_1.detuning

    @property
    def mismatch(self) -> float:
        return (self.emitter_2.frequency - self.emitter_1.frequency) / 2

    @property
    def coupling_product(self) -> float:
        return self.emitter_1.coupling * self.emitter_2.coupling

    def check_geometry(self, num_sites: int):
        for e in self.emitters:
            e.check_geometry(num_sites)

    def shifted(self, offset: int) -> "GiantEmitterPair":
        return GiantEmitterPair(self.emitter_1.shifted(offset), self.emitter_2.shifted(offset))

    def with_detuning(self, detuning: float) -> "GiantEmitterPair":
        return GiantEmitterPair(replace(self.emitter_1, detuning=detuning),
                                replace(self.emitter_2, detuning=detuning))

    def with_coupling(self, coupling: float) -> "GiantEmitterPair":
        return GiantEmitterPair(replace(self.emitter_1, coupling=coupling),
                                replace(self.emitter_2, coupling=coupling))

    def with_phases(self, phase_1: float, phase_2: float) -> "GiantEmitterPair":
        e1, e2 = self.emitter_1, self.emitter_2
        return GiantEmitterPair(replace(e1, right_phase=e1.left_phase + phase_1),
                                replace(e2, right_phase=e2.left_phase + phase_2))

    def negated_phases(self) -> "GiantEmitterPair":
        e1, e2 = self.emitter_1, self.emitter_2
        return GiantEmitterPair(replace(e1, left_phase=-e1.left_phase, right_phase=-e1.right_phase),
                                replace(e2, left_phase=-e2.left_phase, right_phase=-e2.right_phase))


@dataclass(frozen=True)
class ChannelVector:
    tau: str
    sigma: str
    amplitude: float
    propagation_phase: float
    local_phase: float
    complex_value: complex
    separation: int = 0
    center: float = 0.0


@dataclass(frozen=True)
class ChiralResult:
    gamma_plus: float
    gamma_minus: float
    chiral_factor: float
    resonant_K: float
    group_velocity: float = float("nan")
    coupling_plus: complex = 0j
    coupling_minus: complex = 0j

    @property
    def total_rate(self) -> float:
        return self.gamma_plus + self.gamma_minus


def single_photon_energy(k, params: WaveguideParams):
    return -2.0 * params.hopping * np.cos(k)


def _detunings(params, detuning):
    k = momentum_grid(params.num_sites)
    dk = single_photon_energy(k, params) - detuning
    if np.min(np.abs(dk)) < 1e-9 * abs(params.hopping):
        raise ResonantSinglePhoton(
            f"detuning {detuning:g} is resonant with the single-photon band; elimination fails")
    return k, dk


def _overlap_sum(q, K, params):
    # sum_m exp(-i q m) u_K(m), closed form of the geometric series
    y = pair_ratio(K, params)
    u0 = doublon_normalization(K, params)
    return u0 * (1 - y * y) / (1 - 2 * y * np.cos(q) + y * y)


def mode_kernel(k, K: float, params: WaveguideParams, detuning: float):
    """L_{k,K} = 2 sqrt(2) J S(k - K/2) / (N delta_k). Real on the real axis."""
    k = np.asarray(k, dtype=float)
    dk = single_photon_energy(k, params) - detuning
    if np.min(np.abs(dk)) < 1e-9 * abs(params.hopping):
        raise ResonantSinglePhoton("single-photon detuning vanishes")
    S = _overlap_sum(k - K / 2, K, params)
    return 2 * math.sqrt(2) * params.hopping * S / (params.num_sites * dk)


def _kernel_grid(K, params, detuning):
    k, dk = _detunings(params, detuning)
    q = k - K / 2
    L = 2 * math.sqrt(2) * params.hopping * _overlap_sum(q, K, params) / (params.num_sites * dk)
    return q, dk, L


def channel_amplitude(r_d, K: float, params: WaveguideParams, detuning: float):
    """A(r_d) = sum_k L_{k,K} cos((k - K/2) r_d)."""
    q, _, L = _kernel_grid(K, params, detuning)
    r = np.asarray(r_d, dtype=float)
    return np.cos(np.multiply.outer(r, q)) @ L


def _channels(K, pair, params, weight=None):
    """Per-channel (tau, sigma, r_d, x_c, local phase) plus the weighted amplitude."""
    q, dk, L = _kernel_grid(K, params, pair.detuning)
    out = []
    for tau, n1, p1 in pair.emitter_1.points():
        for sigma, n2, p2 in pair.emitter_2.points():
            r = n1 - n2
            xc = (n1 + n2) / 2
            if weight is None:
                a = complex(np.cos(q * r) @ L)
            else:
                a = complex(weight(q, dk, r) @ L)
            out.append((tau, sigma, r, xc, p1 + p2, a))
    return out


def effective_coupling(K: float, pair: GiantEmitterPair, params: WaveguideParams, channels: bool = False):
    """F_K as the sum of four channel vectors.

    With ``channels=True`` returns (F_K, [ChannelVector, ...]).
    """
    if pair.mismatch != 0:
        F = mismatch_coupling(K, pair, params)
        return (F, []) if channels else F
    vecs = []
    total = 0j
    for tau, sigma, r, xc, lp, a in _channels(K, pair, params):
        A = a.real
        value = A * np.exp(1j * lp) * np.exp(-1j * K * xc)
        vecs.append(ChannelVector(tau, sigma, A, K * xc, lp, complex(value), r, xc))
        total += value
    return (complex(total), vecs) if channels else complex(total)


def mismatch_coupling(K: float, pair: GiantEmitterPair, params: WaveguideParams) -> complex:
    """F_K when the emitters sit at detuning -/+ w about the pair detuning.

    The two emission orders no longer share an energy denominator, so each
    channel picks up cos/(1-(w/delta)^2) plus an odd part i (w/delta) sin/(1-(w/delta)^2).
    """
    w = pair.mismatch
    band = 2 * abs(params.hopping)
    for e in pair.emitters:
        if not abs(e.frequency) > band:
            raise SinglePhotonLeak(f"emitter frequency {e.frequency:g} inside single-photon band")
    if -pair.detuning - band <= abs(w):
        raise SinglePhotonLeak("mismatch pushes an emitter into the single-photon band")

    def weight(q, dk, r):
        s = 1.0 / (1.0 - (w / dk) ** 2)
        return (np.cos(q * r) + 1j * (w / dk) * np.sin(q * r)) * s

    total = 0j
    for _, _, r, xc, lp, a in _channels(K, pair, params, weight):
        total += a * np.exp(1j * lp) * np.exp(-1j * K * xc)
    return complex(total)


def _right_moving(K_r, params):
    # the +K_r mode moves right on the attractive branch, left after a sign flip
    return K_r if group_velocity(K_r, params) > 0 else -K_r


def decay_and_chirality(pair: GiantEmitterPair, params: WaveguideParams) -> ChiralResult:
    """Markovian rates into the right (+) and left (-) moving resonant doublons."""
    Delta = pair.detuning
    band_gap = abs(Delta) - 2 * abs(params.hopping)
    g = max(e.coupling for e in pair.emitters)
    if band_gap > 0 and g > 0.25 * band_gap:
        warnings.warn(f"g = {g:g} is not small against the gap {band_gap:g} to the photon band",
                      RuntimeWarning, stacklevel=2)
    K_r = resonant_wavevector(Delta, params)
    v = abs(float(group_velocity(K_r, params)))
    Kp = _right_moving(K_r, params)
    Fp = effective_coupling(Kp, pair, params)
    Fm = effective_coupling(-Kp, pair, params)
    scale = pair.coupling_product ** 2 / (v * params.hopping ** 2)
    gp, gm = scale * abs(Fp) ** 2, scale * abs(Fm) ** 2
    C = (gp - gm) / (gp + gm) if gp + gm > 0 else 0.0
    return ChiralResult(gp, gm, C, K_r, v, Fp, Fm)


def doublon_lamb_shift(pair: GiantEmitterPair, params: WaveguideParams) -> float:
    """Second-order shift of the pair energy from the off-resonant doublon modes.

    delta = (g1 g2 / J)^2 / (2 pi) PV int dK |F_K|^2 / (2 Delta - E_K), the
    principal-value partner of the Markovian rates.
    """
    E = 2 * pair.detuning
    K_r = resonant_wavevector(pair.detuning, params)
    pref = (pair.coupling_product / params.hopping) ** 2 / (2 * math.pi)

    def f(K):
        return abs(effective_coupling(K, pair, params)) ** 2

    total = 0.0
    for pole, (a, b) in ((K_r, (0.0, math.pi)), (-K_r, (-math.pi, 0.0))):
        slope = float(group_velocity(pole, params))

        # f(K) / (E - E_K) = h(K) / (K - pole) with h smooth through the pole
        def h(K, pole=pole, slope=slope):
            d = E - float(doublon_energy(K, params))
            x = K - pole
            if abs(x) < 1e-7:
                return -f(K) / slope
            return f(K) * x / d

        val, _ = integrate.quad(h, a, b, weight="cauchy", wvar=pole, limit=200)
        total += val
    return float(pref * total)


def optimal_detuning(pair: GiantEmitterPair, params: WaveguideParams, bracket=None,
                     direction: int = +1) -> float:
    """Detuning that minimises |F| for the suppressed direction.

    ``direction=+1`` suppresses left-moving emission (maximises C).
    ``bracket`` defaults to the full range where 2*Delta lies in the doublon band
    and Delta is below the single-photon band.
    """
    lo_e, hi_e = sorted(doublon_energy(np.array([0.0, np.pi]), params) / 2)
    if bracket is None:
        lo, hi = lo_e + 1e-9, min(hi_e, -2 * abs(params.hopping)) - 1e-9
    else:
        lo, hi = bracket

    def suppressed(D):
        p = pair.with_detuning(D)
        K_r = resonant_wavevector(D, params)
        return abs(effective_coupling(-direction * _right_moving(K_r, params), p, params)) ** 2

    grid = np.linspace(lo, hi, 81)
    vals = [suppressed(D) for D in grid]
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(suppressed, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.x)


def chirality_large_d(phase_1: float, phase_2: float, K_r: float, d: int) -> tuple[float, float]:
    """Rate scale and C when only the two same-point channels survive (d >> L_u, D = 0).

    The rate scale is |F_+|^2 + |F_-|^2 in units of A(0)^2, i.e.
    4 + 4 cos(P) cos(K_r d) with P = phase_1 + phase_2.
    """
    P = phase_1 + phase_2
    c = math.cos(P) * math.cos(K_r * d)
    scale = 4.0 + 4.0 * c
    den = 1.0 + c
    C = math.sin(P) * math.sin(K_r * d) / den if den > 1e-15 else 0.0
    return scale, C


@dataclass
class ReducedTrace:
    times: np.ndarray
    excited_population: np.ndarray
    doublon_population: np.ndarray
    right_population: np.ndarray
    left_population: np.ndarray
    K_grid: np.ndarray
    final_modes: np.ndarray = field(repr=False, default=None)
    steps: int = 0

    @property
    def norm(self) -> np.ndarray:
        return self.excited_population + self.doublon_population

    def chiral_factor(self) -> float:
        R, L = self.right_population[-1], self.left_population[-1]
        return float((R - L) / (R + L)) if R + L > 0 else 0.0


def reduced_evolution(pair: GiantEmitterPair, params: WaveguideParams, t_grid, K_grid=None,
                      dt: float | None = None, max_steps: int = 50_000_000) -> ReducedTrace:
    """Integrate c_e and {c_K} with classical RK4 at a fixed step.

    Frame: energies measured from 2*Delta, so the pair state has zero energy.
    The step never exceeds 1 / (50 max|E_K - 2 Delta|).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    K = momentum_grid(params.num_sites) if K_grid is None else np.asarray(K_grid, dtype=float)
    Delta = pair.detuning
    det = doublon_energy(K, params) - 2 * Delta
    F = np.array([effective_coupling(Ki, pair, params) for Ki in K])
    V = -pair.coupling_product * F / (params.hopping * math.sqrt(params.num_sites))
    h_max = float(np.max(np.abs(det))) + float(np.linalg.norm(V))
    bound = 1.0 / (50.0 * max(h_max, 1e-12))
    h = bound if dt is None else min(dt, bound)

    def rhs(ce, cK):
        return -1j * (np.conj(V) @ cK), -1j * (det * cK + V * ce)

    ce = 1.0 + 0j
    cK = np.zeros(K.size, complex)
    vg = group_velocity(K, params)
    right = vg > 0
    out_e = np.empty(t_grid.size)
    out_d = np.empty(t_grid.size)
    out_r = np.empty(t_grid.size)
    out_l = np.empty(t_grid.size)
    t = t_grid[0]
    steps = 0
    for i, t_next in enumerate(t_grid):
        span = t_next - t
        if span > 0:
            n = int(math.ceil(span / h - 1e-12))
            if steps + n > max_steps:
                raise StepSizeUnderflow(f"step bound {h:g} needs more than {max_steps} steps")
            s = span / n
            for _ in range(n):
                a1, b1 = rhs(ce, cK)
                a2, b2 = rhs(ce + 0.5 * s * a1, cK + 0.5 * s * b1)
                a3, b3 = rhs(ce + 0.5 * s * a2, cK + 0.5 * s * b2)
                a4, b4 = rhs(ce + s * a3, cK + s * b3)
                ce = ce + s / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
                cK = cK + s / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
            steps += n
            t = t_next
        p = np.abs(cK) ** 2
        out_e[i] = abs(ce) ** 2
        out_d[i] = p.sum()
        out_r[i] = p[right].sum()
        out_l[i] = p[vg < 0].sum()
    return ReducedTrace(t_grid, out_e, out_d, out_r, out_l, K, cK, steps)


def emitter_mode_coupling(emitter: GiantEmitter, k, coupling: float | None = None):
    """g_i(k) = g sum_tau exp(i k n^tau) exp(i phi^tau)."""
    g = emitter.coupling if coupling is None else coupling
    k = np.asarray(k, dtype=float)
    return g * sum(np.exp(1j * k * n) * np.exp(1j * p) for _, n, p in emitter.points())


def stark_shift(emitter: GiantEmitter, params: WaveguideParams, g_t: float | None = None) -> float:
    """Second-order shift of one emitter from the off-resonant single-photon band."""
    k = momentum_grid(params.num_sites)
    gk = emitter_mode_coupling(emitter, k, g_t)
    dk = single_photon_energy(k, params) - emitter.frequency
    return float(-np.sum(np.abs(gk) ** 2 / dk) / params.num_sites)
