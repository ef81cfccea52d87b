"""Exact propagation of the two-excitation sector: emitters plus an N-site array.

Basis (``TwoExcitationBasis``), for M two-level emitters:

* sector a: emitters i<j both excited, no photon              (M(M-1)/2 states)
* sector b: emitter i excited, one photon at site n           (M*N states)
* sector c: two photons at sites p <= q                       (N(N+1)/2 states)

Sector c uses the orthonormal Fock basis: |p,q> = a_p^+ a_q^+ |0> for p < q and
|p,p> = (a_p^+)^2/sqrt(2) |0>. With a first-quantised symmetric amplitude
psi(x1, x2) normalised over all ordered pairs, the stored amplitudes are
c_pq = sqrt(2) psi(p, q) for p < q and c_pp = psi(p, p). Hopping into or out of
a doubly occupied site therefore carries a factor sqrt(2), and the operator is
Hermitian with ordinary complex conjugate transpose.

Time dependence enters through per-component scale factors, so the sparsity
pattern is built once:

    H(t) = s(t) [H_hop + U P_pp] + sum_i w_i(t) n_i + sum_i g_i(t) (V_i + V_i^+)

with s = -1 after a (J, U) sign flip and the switchable bond dropped once cut.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.special import jv

from . import _kernels as kern
from .effective import GiantEmitter, GiantEmitterPair
from .errors import ConfigurationError, GeometryError, NormDrift, StabilityError
from .spectrum import WaveguideParams

__all__ = [
    "TwoExcitationBasis",
    "Schedule",
    "LatticeSystem",
    "SimulationTrace",
    "FieldDistribution",
    "build_hamiltonian",
    "propagate",
    "field_distribution",
    "pair_correlation",
    "directional_split",
    "photon_density",
]


class TwoExcitationBasis:
    def __init__(self, num_sites: int, num_emitters: int):
        if num_emitters < 1:
            raise ConfigurationError("need at least one emitter")
        self.num_sites = N = int(num_sites)
        self.num_emitters = M = int(num_emitters)
        self.emitter_pairs = [(i, j) for i in range(M) for j in range(i + 1, M)]
        self._pair_index = {p: k for k, p in enumerate(self.emitter_pairs)}
        self.offset_single = len(self.emitter_pairs)
        self.offset_photons = self.offset_single + M * N
        self.dim = self.offset_photons + N * (N + 1) // 2
        p, q = np.triu_indices(N)
        self.photon_p = p.astype(np.int64)
        self.photon_q = q.astype(np.int64)

    def __len__(self):
        return self.dim

    def emitter_pair_index(self, i: int, j: int) -> int:
        return self._pair_index[(min(i, j), max(i, j))]

    def single_index(self, emitter: int, site) -> np.ndarray | int:
        return self.offset_single + emitter * self.num_sites + np.asarray(site)

    def photon_index(self, p, q):
        """Index of |p, q> for arrays p, q (any order)."""
        p = np.asarray(p, dtype=np.int64)
        q = np.asarray(q, dtype=np.int64)
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        N = self.num_sites
        return self.offset_photons + lo * N - lo * (lo - 1) // 2 + (hi - lo)

    @property
    def photon_slice(self) -> slice:
        return slice(self.offset_photons, self.dim)

    @property
    def single_slice(self) -> slice:
        return slice(self.offset_single, self.offset_photons)

    def pair_state(self, i: int = 0, j: int = 1) -> np.ndarray:
        psi = np.zeros(self.dim, complex)
        psi[self.emitter_pair_index(i, j)] = 1.0
        return psi

    def photon_matrix(self, psi) -> np.ndarray:
        """Dense N x N upper-triangular array of stored sector-c amplitudes."""
        N = self.num_sites
        out = np.zeros((N, N), complex)
        out[self.photon_p, self.photon_q] = psi[self.photon_slice]
        return out

    def photon_state(self, psi_first_quantised) -> np.ndarray:
        """Embed a symmetric first-quantised amplitude psi(x1, x2) into sector c."""
        a = np.asarray(psi_first_quantised)
        vec = np.zeros(self.dim, complex)
        p, q = self.photon_p, self.photon_q
        vec[self.photon_slice] = np.where(p == q, a[p, q], math.sqrt(2) * a[p, q])
        return vec


@dataclass
class Schedule:
    """Time-dependent controls; callables take t and return a float.

    ``couplings`` and ``frequencies`` are keyed by emitter index; missing keys
    keep the emitter's static value. The (J, U) sign flip happens at
    ``flip_time``; ``cut_bond`` removes hopping n_b <-> n_b+1 from ``cut_time``
    on (defaults to ``flip_time``, or 0 when no flip is scheduled).
    """
    couplings: dict[int, Callable[[float], float]] = field(default_factory=dict)
    frequencies: dict[int, Callable[[float], float]] = field(default_factory=dict)
    flip_time: float | None = None
    cut_bond: int | None = None
    cut_time: float | None = None

    def __post_init__(self):
        if self.cut_bond is not None and self.cut_time is None:
            self.cut_time = self.flip_time if self.flip_time is not None else -math.inf

    @property
    def time_dependent(self) -> bool:
        return bool(self.couplings or self.frequencies)

    def breakpoints(self) -> list[float]:
        return sorted({t for t in (self.flip_time, self.cut_time) if t is not None and math.isfinite(t)})

    def sign(self, t: float) -> float:
        return -1.0 if self.flip_time is not None and t >= self.flip_time else 1.0

    def cut_active(self, t: float) -> bool:
        return self.cut_bond is not None and t >= self.cut_time


class LatticeSystem:
    """Sparse operator components for a waveguide with one or more GEPs."""

    HOP, CUT = 0, 1

    def __init__(self, params: WaveguideParams, pairs, schedule: Schedule | None = None):
        if isinstance(pairs, GiantEmitterPair):
            pairs = [pairs]
        self.params = params
        self.pairs = list(pairs)
        self.schedule = schedule or Schedule()
        self.emitters: list[GiantEmitter] = [e for p in self.pairs for e in p.emitters]
        N = params.num_sites
        for e in self.emitters:
            e.check_geometry(N)
        sb = self.schedule.cut_bond
        if sb is not None and not 0 <= sb < N - 1:
            raise GeometryError(f"scheduled cut bond {sb} outside [0, {N - 1})")
        if sb is not None and params.cut_bond is not None:
            raise ConfigurationError("permanent and scheduled bond cuts cannot be combined")
        self.basis = TwoExcitationBasis(N, len(self.emitters))
        self._build()

    # -- construction -------------------------------------------------------
    def _build(self):
        b = self.basis
        N, M = b.num_sites, b.num_emitters
        J = self.params.hopping
        rows, cols, vals, comps = [], [], [], []

        def add(r, c, v, comp):
            r = np.atleast_1d(np.asarray(r, dtype=np.int64))
            c = np.atleast_1d(np.asarray(c, dtype=np.int64))
            v = np.broadcast_to(np.asarray(v, dtype=complex), r.shape)
            # Hermitian pair of entries
            rows.extend([r, c])
            cols.extend([c, r])
            vals.extend([v, np.conj(v)])
            comps.extend([np.full(r.size, comp, np.int64)] * 2)

        permanent_cut = self.params.cut_bond
        switch = self.schedule.cut_bond
        bonds = np.array([n for n in range(N - 1) if n != permanent_cut])
        bond_comp = np.where(bonds == switch, self.CUT, self.HOP)

        # sector b: photon hops n -> n+1 for every emitter
        for i in range(M):
            add(b.single_index(i, bonds), b.single_index(i, bonds + 1), -J, 0)
            if switch is not None:
                sel = bond_comp == self.CUT
                # relabel the switchable bond
                comps[-1][sel] = self.CUT
                comps[-2][sel] = self.CUT
        # sector c: move the photon at p (or q) one site to the right
        p, q = b.photon_p, b.photon_q
        for moving_first in (True, False):
            src_site = p if moving_first else q
            ok = np.isin(src_site, bonds)
            if moving_first:
                # p -> p+1 keeps p+1 <= q only when p < q
                ok &= p < q
                np_, nq = p + 1, q
            else:
                np_, nq = p, q + 1
                ok &= q + 1 < N
            src = b.offset_photons + np.flatnonzero(ok)
            pp, qq = np_[ok], nq[ok]
            dst = b.photon_index(pp, qq)
            # sqrt(2) whenever the source or target is doubly occupied
            doubled = (p[ok] == q[ok]) | (pp == qq)
            amp = np.where(doubled, -J * math.sqrt(2), -J)
            comp = np.where(src_site[ok] == switch, self.CUT, self.HOP) if switch is not None else self.HOP
            add(src, dst, amp, 0)
            comps[-1][:] = comp
            comps[-2][:] = comp

        # couplings, component 2 + i, unit strength
        for i, e in enumerate(self.emitters):
            comp = 2 + i
            for _, n, phi in e.points():
                ph = np.exp(1j * phi)
                # sector a -> b: emitter i decays, partner j stays excited
                for j in range(M):
                    if j == i:
                        continue
                    add(b.single_index(j, n), b.emitter_pair_index(i, j), ph, comp)
                # sector b -> c: emitter i decays next to a photon at site m
                m = np.arange(N)
                amp = np.where(m == n, ph * math.sqrt(2), ph)
                add(b.photon_index(np.full(N, n), m), b.single_index(i, m), amp, comp)

        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        k = np.concatenate(comps)
        real = k < 2
        self.hop_indptr, self.hop_indices, hop_base, self.hop_comp = _to_csr(
            r[real], c[real], v[real], k[real], b.dim)
        if np.abs(hop_base.imag).max(initial=0.0) > 0:
            raise RuntimeError("hopping entries must be real")
        self.hop_base = hop_base.real.copy()
        self.cpl_indptr, self.cpl_indices, self.cpl_base, self.cpl_comp = _to_csr(
            r[~real], c[~real], v[~real], k[~real], b.dim)
        self.num_components = 2 + M
        # Gershgorin norm bound of each unit-strength coupling block
        self.coupling_norms = np.zeros(M)
        row = np.repeat(np.arange(b.dim), np.diff(self.cpl_indptr))
        for i in range(M):
            sel = self.cpl_comp == 2 + i
            sums = np.bincount(row[sel], weights=np.abs(self.cpl_base[sel]), minlength=b.dim)
            self.coupling_norms[i] = sums.max(initial=0.0)

        # diagonal pieces
        self.pp_mask = np.zeros(b.dim)
        self.pp_mask[b.offset_photons + np.flatnonzero(b.photon_p == b.photon_q)] = 1.0
        self.number = np.zeros((M, b.dim))
        for k_, (i, j) in enumerate(b.emitter_pairs):
            self.number[i, k_] = self.number[j, k_] = 1.0
        for i in range(M):
            self.number[i, b.single_index(i, 0):b.single_index(i, N)] = 1.0
        self._hop = np.empty_like(self.hop_base)
        self._cpl = np.empty_like(self.cpl_base)
        self._diag = np.empty(b.dim)
        self._key_hop = self._key_cpl = self._key_diag = None

    # -- time-dependent coefficients --------------------------------------
    def couplings_at(self, t: float) -> np.ndarray:
        s = self.schedule
        return np.array([s.couplings[i](t) if i in s.couplings else e.coupling
                         for i, e in enumerate(self.emitters)], dtype=float)

    def frequencies_at(self, t: float) -> np.ndarray:
        s = self.schedule
        return np.array([s.frequencies[i](t) if i in s.frequencies else e.frequency
                         for i, e in enumerate(self.emitters)], dtype=float)

    def coefficients(self, t: float):
        """(component scale factors, emitter frequencies, sign) at time t."""
        sgn = self.schedule.sign(t)
        coefs = np.empty(self.num_components, complex)
        coefs[self.HOP] = sgn
        coefs[self.CUT] = 0.0 if self.schedule.cut_active(t) else sgn
        coefs[2:] = self.couplings_at(t)
        return coefs, self.frequencies_at(t), sgn

    def load(self, t: float):
        """Fill the working operator arrays for time t (cached when unchanged)."""
        coefs, freqs, sgn = self.coefficients(t)
        key = (coefs[0].real, coefs[1].real)
        if key != self._key_hop:
            kern.scale_data(self.hop_base, self.hop_comp, coefs[:2].real.copy(), self._hop)
            self._key_hop = key
        key = tuple(coefs[2:].real)
        if key != self._key_cpl:
            kern.scale_data(self.cpl_base, self.cpl_comp, coefs, self._cpl)
            self._key_cpl = key
        key = (sgn, tuple(freqs))
        if key != self._key_diag:
            self._diag[:] = sgn * self.params.interaction * self.pp_mask + freqs @ self.number
            self._key_diag = key
        return self._hop, self._cpl, self._diag

    def kernel_args(self, t: float):
        hop, cpl, diag = self.load(t)
        return (self.hop_indptr, self.hop_indices, hop, self.cpl_indptr, self.cpl_indices, cpl, diag)

    def operator(self, t: float = 0.0) -> sparse.csr_matrix:
        hop, cpl, diag = self.load(t)
        shape = (self.basis.dim,) * 2
        H = sparse.csr_matrix((hop.astype(complex), self.hop_indices, self.hop_indptr), shape=shape)
        H = H + sparse.csr_matrix((cpl.copy(), self.cpl_indices, self.cpl_indptr), shape=shape)
        return (H + sparse.diags(diag.astype(complex))).tocsr()

    def apply(self, psi, t: float = 0.0, out=None):
        psi = np.ascontiguousarray(psi, dtype=complex)
        out = np.empty_like(psi) if out is None else out
        kern.matvec(*self.kernel_args(t), psi, out)
        return out

    def spectral_bounds(self, t: float = 0.0) -> tuple[float, float]:
        """Rigorous enclosure of the spectrum of H(t).

        Unperturbed blocks: emitter pairs at w_i + w_j; one emitter plus a
        photon within w_i + [-2|J|, 2|J|]; photon pairs within the infinite
        lattice two-body spectrum (continuum +-4|J| and the doublon band on the
        side of the sign of U). Couplings shift eigenvalues by at most their
        norm (Weyl), bounded by the absolute row sums.
        """
        _, freqs, sgn = self.coefficients(t)
        g = np.abs(self.couplings_at(t))
        J = abs(self.params.hopping)
        U = sgn * self.params.interaction
        lo, hi = -4 * J, 4 * J
        edge = math.hypot(U, 4 * J)
        if U < 0:
            lo = -edge
        elif U > 0:
            hi = edge
        M = len(freqs)
        pair_e = [freqs[i] + freqs[j] for i, j in self.basis.emitter_pairs]
        lo = min([lo, freqs.min() - 2 * J] + pair_e)
        hi = max([hi, freqs.max() + 2 * J] + pair_e)
        pert = float(g @ self.coupling_norms) if M else 0.0
        return lo - pert, hi + pert

    def energy(self, psi, t: float = 0.0) -> float:
        return float(np.vdot(psi, self.apply(psi, t)).real)


def _to_csr(r, c, v, k, dim):
    """CSR arrays from COO triples with a component label per entry.

    Duplicate (row, col) entries are summed; they must share a label.
    """
    order = np.lexsort((c, r))
    r, c, v, k = r[order], c[order], v[order], k[order]
    if r.size == 0:
        return (np.zeros(dim + 1, np.int64), np.zeros(0, np.int32), np.zeros(0, complex),
                np.zeros(0, np.int64))
    key = r * dim + c
    _, start = np.unique(key, return_index=True)
    v = np.add.reduceat(v, start)
    k_first = k[start]
    if np.any(np.maximum.reduceat(k, start) != k_first):
        raise RuntimeError("operator components overlap")
    r = r[start]
    indptr = np.zeros(dim + 1, np.int64)
    np.add.at(indptr, r + 1, 1)
    return np.cumsum(indptr), c[start].astype(np.int32), v.astype(np.complex128), k_first.astype(np.int64)


def build_hamiltonian(params: WaveguideParams, pairs, t: float = 0.0, schedule: Schedule | None = None):
    """Sparse Hermitian operator at time t on the two-excitation basis."""
    return LatticeSystem(params, pairs, schedule).operator(t)


@dataclass
class SimulationTrace:
    times: np.ndarray
    norm: np.ndarray
    pair_populations: np.ndarray         # (T, M(M-1)/2) sector-a probabilities
    emitter_populations: np.ndarray      # (T, M) probability emitter i is excited
    single_photon: np.ndarray
    two_photon: np.ndarray
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    snapshots: dict[float, np.ndarray] = field(default_factory=dict, repr=False)
    final_state: np.ndarray | None = field(default=None, repr=False)
    steps: int = 0
    matvecs: int = 0
    method: str = "rk4"

    @property
    def excited_population(self) -> np.ndarray:
        """|c_e|^2 of the first GEP (emitters 0 and 1)."""
        return self.pair_populations[:, 0]

    def max_norm_drift_rate(self) -> float:
        span = self.times - self.times[0]
        ok = span > 0
        if not np.any(ok):
            return 0.0
        return float(np.max(np.abs(self.norm[ok] - 1.0) / span[ok]))


def _cheb_coefficients(rh: float, tol: float = 1e-16):
    kmax = int(rh + 12 * max(rh, 1.0) ** (1 / 3) + 30)
    k = np.arange(kmax + 1)
    a = jv(k, rh) * (-1j) ** k
    a[1:] *= 2
    big = np.flatnonzero(np.abs(a) > tol)
    n = int(big[-1]) + 1 if big.size else 1
    return a[: max(n, 2)]


class _Propagator:
    def __init__(self, system: LatticeSystem, method: str, dt: float, energy_ref: float | None):
        self.sys = system
        self.method = method
        self.dt = dt
        self.energy_ref = energy_ref
        n = system.basis.dim
        self.w = [np.empty(n, complex) for _ in range(5)]
        self.steps = 0
        self.matvecs = 0

    def _H(self, t, x, out):
        kern.matvec(*self.sys.kernel_args(t), x, out)
        self.matvecs += 1
        return out

    def advance(self, psi, t0, t1):
        if t1 <= t0:
            return psi
        if self.method == "rk4":
            return self._rk4(psi, t0, t1)
        return self._chebyshev(psi, t0, t1)

    def _rk4(self, psi, t0, t1):
        E = self.energy_ref
        n = max(1, int(math.ceil((t1 - t0) / self.dt - 1e-9)))
        h = (t1 - t0) / n
        lo, hi = self.sys.spectral_bounds(t0)
        if h * max(abs(hi - E), abs(lo - E)) > 2.5:
            raise StabilityError(f"RK4 step {h:g} too large for spectral range [{lo:.3g}, {hi:.3g}]")
        k1, k2, k3, k4, tmp = self.w
        t = t0
        for _ in range(n):
            self._H(t, psi, k1); k1 -= E * psi; k1 *= -1j
            np.multiply(k1, 0.5 * h, out=tmp); tmp += psi
            self._H(t + h / 2, tmp, k2); k2 -= E * tmp; k2 *= -1j
            np.multiply(k2, 0.5 * h, out=tmp); tmp += psi
            self._H(t + h / 2, tmp, k3); k3 -= E * tmp; k3 *= -1j
            np.multiply(k3, h, out=tmp); tmp += psi
            self._H(t + h, tmp, k4); k4 -= E * tmp; k4 *= -1j
            k2 += k3
            k2 *= 2
            k1 += k2
            k1 += k4
            psi = psi + (h / 6) * k1
            t += h
            self.steps += 1
        # restore the lab-frame phase removed by the energy shift
        return psi * np.exp(-1j * E * (t1 - t0))

    def _chebyshev(self, psi, t0, t1):
        n = max(1, int(math.ceil((t1 - t0) / self.dt - 1e-9)))
        h = (t1 - t0) / n
        sysm = self.sys
        acc, cur, prev = self.w[0], self.w[1], self.w[2]
        t = t0
        for _ in range(n):
            args = sysm.kernel_args(t + h / 2)
            lo, hi = sysm.spectral_bounds(t + h / 2)
            c = 0.5 * (hi + lo)
            r = 0.5 * (hi - lo) * 1.001 + 1e-12
            a = _cheb_coefficients(r * h)
            alpha, beta = 1.0 / r, -c / r
            cur[:] = psi
            kern.cheb_first(*args, psi, prev, acc, alpha, beta, a[0], a[1])
            # cur = T_{k-1}, prev = T_k; cheb_next overwrites its "prev" with T_{k+1}
            Tm, Tk = cur, prev
            for ck in a[2:]:
                kern.cheb_next(*args, Tk, Tm, acc, alpha, beta, ck)
                Tm, Tk = Tk, Tm
            self.matvecs += len(a) - 1
            psi = acc * np.exp(-1j * c * h)
            t += h
            self.steps += 1
        return psi


def propagate(system: LatticeSystem, psi0, t_span, dt: float | None = None, method: str = "rk4",
              sample_times=None, snapshot_times=(), observers: dict | None = None,
              energy_ref: float | None = None, norm_tol: float = 1e-8,
              reference_center: float | None = None) -> SimulationTrace:
    """Advance psi0 over t_span under the system's (possibly time-dependent) operator.

    ``method="rk4"``: classical RK4 in a frame shifted by ``energy_ref`` (default
    the initial <H>), fixed step ``dt`` <= 0.02/|J| (default 0.01/|J|).
    ``method="chebyshev"``: exponential-midpoint steps of length ``dt`` (default
    1.0) each expanded in Chebyshev polynomials to machine precision.

    Steps are aligned with the schedule breakpoints (flip, cut) and sample times.
    ``observers`` maps names to f(t, psi) -> float recorded at each sample.
    """
    t0, t1 = map(float, t_span)
    J = abs(system.params.hopping)
    if method == "rk4":
        dt = 0.01 / J if dt is None else dt
        if dt > 0.02 / J + 1e-15:
            raise StabilityError(f"dt = {dt:g} exceeds the 0.02/J headroom of the explicit scheme")
    elif method == "chebyshev":
        dt = 1.0 if dt is None else dt
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    psi = np.array(psi0, dtype=complex, copy=True)
    if sample_times is None:
        sample_times = np.linspace(t0, t1, 101)
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) < 0) or sample_times[0] < t0 or sample_times[-1] > t1 + 1e-9:
        raise ConfigurationError("sample_times must be sorted and inside t_span")
    if energy_ref is None:
        energy_ref = system.energy(psi, t0) / max(np.vdot(psi, psi).real, 1e-300)
    prop = _Propagator(system, method, dt, energy_ref)
    snaps = sorted(set(float(s) for s in snapshot_times))
    stops = sorted(set(sample_times.tolist()) | set(snaps)
                   | {b for b in system.schedule.breakpoints() if t0 < b < t1} | {t1})
    observers = observers or {}
    b = system.basis
    T = sample_times.size
    rec = dict(norm=np.empty(T), pairs=np.empty((T, len(b.emitter_pairs))),
               emit=np.empty((T, b.num_emitters)), single=np.empty(T), photons=np.empty(T))
    obs = {k: np.empty(T) for k in observers}
    snapshots = {}
    norm0 = np.vdot(psi, psi).real
    t = t0
    si = 0

    def record(i, t_, psi_):
        p = np.abs(psi_) ** 2
        rec["norm"][i] = p.sum() / norm0
        rec["pairs"][i] = p[: b.offset_single]
        rec["emit"][i] = system.number[:, : b.offset_photons] @ p[: b.offset_photons]
        rec["single"][i] = p[b.single_slice].sum()
        rec["photons"][i] = p[b.photon_slice].sum()
        for k, f in observers.items():
            obs[k][i] = f(t_, psi_)
        drift = abs(rec["norm"][i] - 1.0)
        if drift > norm_tol * max(t_ - t0, 1.0) + 1e-12:
            raise NormDrift(f"norm drift {drift:.3g} at t = {t_:g} exceeds {norm_tol:g} per unit time")

    while si < T and sample_times[si] <= t0 + 1e-12:
        record(si, t0, psi)
        si += 1
    for stop in stops:
        if stop <= t:
            continue
        psi = prop.advance(psi, t, stop)
        t = stop
        while si < T and abs(sample_times[si] - t) < 1e-9:
            record(si, t, psi)
            si += 1
        if any(abs(s - t) < 1e-9 for s in snaps):
            snapshots[t] = psi.copy()
    return SimulationTrace(sample_times, rec["norm"], rec["pairs"], rec["emit"], rec["single"],
                           rec["photons"], obs, snapshots, psi, prop.steps, prop.matvecs, method)


# ---------------------------------------------------------------------------
# observables of the photon-pair sector

@dataclass
class FieldDistribution:
    center: np.ndarray      # x_c on the half-integer grid, length 2N-1
    relative: np.ndarray    # r_d = -(N-1) .. N-1
    density: np.ndarray     # (len(center), len(relative))

    @property
    def total(self) -> float:
        return float(self.density.sum())


def field_distribution(state, basis: TwoExcitationBasis) -> FieldDistribution:
    """Pair probability on (x_c, r_d); p<q mass is split evenly between +-r_d."""
    N = basis.num_sites
    c = np.asarray(state)[basis.photon_slice]
    w = np.abs(c) ** 2
    p, q = basis.photon_p, basis.photon_q
    xi = p + q
    r = q - p
    dens = np.zeros((2 * N - 1, 2 * N - 1))
    diag = r == 0
    np.add.at(dens, (xi[diag], N - 1), w[diag])
    off = ~diag
    np.add.at(dens, (xi[off], N - 1 + r[off]), 0.5 * w[off])
    np.add.at(dens, (xi[off], N - 1 - r[off]), 0.5 * w[off])
    return FieldDistribution(np.arange(2 * N - 1) / 2.0, np.arange(-(N - 1), N), dens)


def photon_density(state, basis: TwoExcitationBasis) -> np.ndarray:
    """<a_n^+ a_n> summed over the single- and two-photon sectors."""
    N = basis.num_sites
    psi = np.asarray(state)
    rho = np.zeros(N)
    single = np.abs(psi[basis.single_slice].reshape(basis.num_emitters, N)) ** 2
    rho += single.sum(axis=0)
    w = np.abs(psi[basis.photon_slice]) ** 2
    p, q = basis.photon_p, basis.photon_q
    same = p == q
    np.add.at(rho, p[same], 2 * w[same])
    np.add.at(rho, p[~same], w[~same])
    np.add.at(rho, q[~same], w[~same])
    return rho


def pair_correlation(state, basis: TwoExcitationBasis, max_r: int | None = None,
                     density_floor: float = 1e-12, min_population: float = 1e-6):
    """G2(r) = sum_n <a+_{n+r} a+_n a_{n+r} a_n> / (rho_{n+r} rho_n), r = 0..max_r.

    Sites whose density is below ``density_floor`` are left out of the sum.
    Returns (r, G2); G2(-r) = G2(r) by construction.
    """
    from .errors import LowOccupation

    N = basis.num_sites
    psi = np.asarray(state)
    w = np.abs(psi[basis.photon_slice]) ** 2
    if w.sum() < min_population:
        raise LowOccupation(f"photon-pair population {w.sum():.3g} below {min_population:g}")
    rho = photon_density(psi, basis)
    max_r = N - 1 if max_r is None else int(max_r)
    p, q = basis.photon_p, basis.photon_q
    num = np.where(p == q, 2 * w, w)
    good = (rho[p] > density_floor) & (rho[q] > density_floor)
    ratio = np.zeros_like(num)
    ratio[good] = num[good] / (rho[p[good]] * rho[q[good]])
    r = q - p
    sel = r <= max_r
    G = np.bincount(r[sel], weights=ratio[sel], minlength=max_r + 1)[: max_r + 1]
    return np.arange(max_r + 1), G


def directional_split(state, basis: TwoExcitationBasis, reference_center: float):
    """(P_left, P_right, C_num) of photon-pair mass about ``reference_center``."""
    w = np.abs(np.asarray(state)[basis.photon_slice]) ** 2
    xc = (basis.photon_p + basis.photon_q) / 2.0
    left = w[xc < reference_center].sum() + 0.5 * w[xc == reference_center].sum()
    right = w[xc > reference_center].sum() + 0.5 * w[xc == reference_center].sum()
    tot = left + right
    C = (right - left) / tot if tot > 0 else 0.0
    return float(left), float(right), float(C)


def reflection_time(params: WaveguideParams, start: float, direction: int, speed: float) -> float:
    """Time for a front leaving ``start`` at ``speed`` to hit the wall and come back."""
    N = params.num_sites
    dist = (N - 1 - start) if direction > 0 else start
    return 2 * dist / max(abs(speed), 1e-12)


def warn_if_reflection(params: WaveguideParams, start: float, t_end: float, speed: float):
    t_r = min(reflection_time(params, start, +1, speed), reflection_time(params, start, -1, speed))
    if t_end > t_r:
        warnings.warn(f"wavefronts may return to the emitters at t ~ {t_r:.0f} < {t_end:.0f}",
                      RuntimeWarning, stacklevel=2)
