"""Cascaded master equation for two giant-emitter pairs A and B.

Four emitters A1, A2, B1, B2 span a 16-dim space. Basis index is little-endian
in that order: bit k set means emitter k is excited, so |eegg> (A excited) is
index 3 and |ggee> (B excited) is index 12. Density matrices are vectorised in
row-major order, vec(X rho Y) = (X kron Y^T) vec(rho).

Generator, with joint lowering operators S_a = sigma_a1^- sigma_a2^-:

    d rho/dt = -i[H_d, rho] + sum_{a,b} A_ab (S_b rho S_a^+ - S_a^+ S_b rho) + h.c.

A_AA = A_BB = (G+ + G-)/2, A_BA = G+ (A upstream of B), A_AB = G- exp(i chi),
with chi an optional residual propagation phase (0 by default).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DegenerateSteadyState, PositivityLoss

__all__ = [
    "CascadeConfig",
    "MasterTrace",
    "lowering",
    "joint_lowering",
    "parametric_drive_term",
    "build_liouvillian",
    "evolve_master",
    "driven_steady_state",
    "dark_state",
    "bell_state",
    "basis_state",
    "PAIRED_SECTOR",
]

DIM = 16
# states where each pair is either fully excited or fully relaxed
PAIRED_SECTOR = (0, 3, 12, 15)


def basis_state(label: str) -> np.ndarray:
    """Ket from a label such as 'eegg' (order A1 A2 B1 B2)."""
    if len(label) != 4 or set(label) - {"g", "e"}:
        raise ConfigurationError(f"bad basis label {label!r}")
    idx = sum(1 << k for k, ch in enumerate(label) if ch == "e")
    v = np.zeros(DIM, complex)
    v[idx] = 1.0
    return v


def lowering(k: int) -> np.ndarray:
    op = np.zeros((DIM, DIM))
    for s in range(DIM):
        if s >> k & 1:
            op[s & ~(1 << k), s] = 1.0
    return op


def joint_lowering(pair: str) -> np.ndarray:
    if pair == "A":
        return lowering(0) @ lowering(1)
    if pair == "B":
        return lowering(2) @ lowering(3)
    raise ConfigurationError(f"pair must be 'A' or 'B', got {pair!r}")


@dataclass(frozen=True)
class CascadeConfig:
    gamma_plus: float
    gamma_minus: float = 0.0
    drive_amplitude: float = 0.0
    drive_phase: float = math.pi / 2
    gep_order: str = "AB"
    pair_separation: float | None = None
    group_velocity: float | None = None
    decay_length: float | None = None
    collective_phase: float = 0.0

    def __post_init__(self):
        if self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ConfigurationError("rates must be nonnegative")
        if self.gep_order not in ("AB", "BA"):
            raise ConfigurationError("gep_order must be 'AB' or 'BA'")
        if (self.pair_separation is not None and self.decay_length is not None
                and not self.pair_separation > self.decay_length):
            raise ConfigurationError("pair separation must exceed the doublon decay length")

    @property
    def delay(self) -> float:
        if self.pair_separation is None or not self.group_velocity:
            return 0.0
        return abs(self.pair_separation / self.group_velocity)

    def coefficients(self) -> dict[tuple[str, str], complex]:
        gp, gm = self.gamma_plus, self.gamma_minus
        down, up = (gp, gm) if self.gep_order == "AB" else (gm, gp)
        ph = np.exp(1j * self.collective_phase)
        return {("A", "A"): (gp + gm) / 2, ("B", "B"): (gp + gm) / 2,
                ("B", "A"): down, ("A", "B"): up * ph}


def parametric_drive_term(amplitude: float, phase: float = math.pi / 2) -> np.ndarray:
    """(W/2)(e^{i theta} (S_A^+ + S_B^+) + h.c.) with theta = pi/2 - phase.

    ``phase`` is the phase of the modulation sin(Omega t + phase); pi/2 gives a
    real drive.
    """
    theta = math.pi / 2 - phase
    up = (joint_lowering("A") + joint_lowering("B")).T.astype(complex)
    term = 0.5 * amplitude * np.exp(1j * theta) * up
    return term + term.conj().T


def _left(X):
    return np.kron(X, np.eye(DIM))


def _right(Y):
    return np.kron(np.eye(DIM), Y.T)


def build_liouvillian(config: CascadeConfig) -> np.ndarray:
    """Dense 256 x 256 generator acting on row-major vec(rho)."""
    S = {"A": joint_lowering("A").astype(complex), "B": joint_lowering("B").astype(complex)}
    L = np.zeros((DIM * DIM, DIM * DIM), complex)
    for (a, b), A in config.coefficients().items():
        if A == 0:
            continue
        Sa_dag, Sb = S[a].conj().T, S[b]
        # A (S_b rho S_a^+ - S_a^+ S_b rho) + conj: A* (S_a rho S_b^+ - rho S_b^+ S_a)
        L += A * (np.kron(Sb, Sa_dag.T) - _left(Sa_dag @ Sb))
        L += np.conj(A) * (np.kron(S[a], Sb.conj()) - _right(Sb.conj().T @ S[a]))
    if config.drive_amplitude:
        H = parametric_drive_term(config.drive_amplitude, config.drive_phase)
        L += -1j * (_left(H) - _right(H))
    return L


def dark_state(config: CascadeConfig) -> np.ndarray:
    """Normalised |gggg> + i sqrt(2) (W/G+) e^{i theta} (|ggee> - |eegg>)/sqrt(2)."""
    if config.gamma_plus <= 0:
        raise ConfigurationError("dark state needs gamma_plus > 0")
    theta = math.pi / 2 - config.drive_phase
    s = (basis_state("ggee") - basis_state("eegg")) / math.sqrt(2)
    psi = basis_state("gggg") + 1j * math.sqrt(2) * config.drive_amplitude / config.gamma_plus * np.exp(1j * theta) * s
    return psi / np.linalg.norm(psi)


def bell_state() -> np.ndarray:
    return (basis_state("ggee") - basis_state("eegg")) / math.sqrt(2)


@dataclass
class MasterTrace:
    times: np.ndarray
    excited_A: np.ndarray
    excited_B: np.ndarray
    ground: np.ndarray
    trace: np.ndarray
    min_eigenvalue: np.ndarray
    fidelity: np.ndarray | None = None
    states: list = field(default_factory=list, repr=False)

    def shifted_B(self, delay: float) -> np.ndarray:
        """B population delayed by ``delay`` (zero before it arrives)."""
        return np.interp(self.times - delay, self.times, self.excited_B, left=0.0)


def evolve_master(rho0, config: CascadeConfig, t_grid, target=None, keep_states: bool = False,
                  positivity_tol: float = 1e-8) -> MasterTrace:
    """Exact propagation between grid points with the matrix exponential."""
    rho = np.asarray(rho0, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    t = np.asarray(t_grid, dtype=float)
    L = build_liouvillian(config)
    cache: dict[float, np.ndarray] = {}
    v = rho.reshape(-1).copy()
    out = {k: np.empty(t.size) for k in ("A", "B", "g", "tr", "eig", "F")}
    states = []
    target = None if target is None else np.asarray(target, complex)
    for i, ti in enumerate(t):
        if i:
            h = round(ti - t[i - 1], 12)
            if h not in cache:
                cache[h] = linalg.expm(L * h)
            v = cache[h] @ v
        r = v.reshape(DIM, DIM)
        rh = 0.5 * (r + r.conj().T)
        eig = np.linalg.eigvalsh(rh)
        if eig[0] < -positivity_tol:
            raise PositivityLoss(f"eigenvalue {eig[0]:.3g} at t = {ti:g}")
        d = np.real(np.diag(r))
        out["A"][i] = d[3] + d[15]
        out["B"][i] = d[12] + d[15]
        out["g"][i] = d[0]
        out["tr"][i] = np.trace(r).real
        out["eig"][i] = eig[0]
        out["F"][i] = np.real(target.conj() @ r @ target) if target is not None else np.nan
        if keep_states:
            states.append(r.copy())
    return MasterTrace(t, out["A"], out["B"], out["g"], out["tr"], out["eig"],
                       out["F"] if target is not None else None, states)


def driven_steady_state(config: CascadeConfig, sector: str = "paired", tol: float = 1e-10):
    """Null vector of the generator, trace-normalised, and its fidelity to the dark state.

    Joint jumps and the pair drive never change the parity of excitations
    inside a pair, so states with a single excited emitter in a pair are frozen
    and the full null space is degenerate. ``sector="paired"`` restricts to the
    span of {gggg, eegg, ggee, eeee}, which holds every state reachable from
    the ground state; ``sector="full"`` uses all 16 levels.
    """
    L = build_liouvillian(config)
    if sector == "paired":
        idx = np.array(PAIRED_SECTOR)
        sel = (idx[:, None] * DIM + idx[None, :]).reshape(-1)
        Ls = L[np.ix_(sel, sel)]
        n = idx.size
    elif sector == "full":
        Ls, sel, n = L, np.arange(DIM * DIM), DIM
    else:
        raise ConfigurationError(f"unknown sector {sector!r}")
    _, s, vh = linalg.svd(Ls)
    scale = max(s[0], 1e-300)
    null = vh[s < tol * scale].conj()
    if null.shape[0] != 1:
        basis = [v.reshape(n, n) for v in null]
        raise DegenerateSteadyState(f"steady-state space has dimension {null.shape[0]}", basis=basis)
    small = null[0].reshape(n, n)
    small = small / np.trace(small)
    small = 0.5 * (small + small.conj().T)
    rho = np.zeros(DIM * DIM, complex)
    rho[sel] = small.reshape(-1)
    rho = rho.reshape(DIM, DIM)
    fid = float("nan")
    if config.gamma_plus > 0:
        psi0 = dark_state(config)
        fid = float(np.real(psi0.conj() @ rho @ psi0))
    return rho, fid
