"""Two-photon bound states (doublons) of the nonlinear coupled-cavity array.

All quantities are in units of a reference rate; ``hopping`` is usually 1.

Sign convention
---------------
``WaveguideParams.branch`` selects which bound state the formulas describe.
The default ``branch=-1`` is the attractive branch, E_K < 0, which is what the
lattice simulator realises with an on-site energy of ``-|U|``. Flipping the
signs of J and U (``sign_flipped``) toggles the branch and maps E_K -> -E_K.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, OnBandSingularity, OutOfBand

__all__ = [
    "WaveguideParams",
    "DoublonMode",
    "doublon_energy",
    "doublon_band",
    "pair_ratio",
    "doublon_decay_length",
    "doublon_normalization",
    "doublon_wavefunction",
    "doublon_mode",
    "resonant_wavevector",
    "group_velocity",
    "lattice_greens_function",
    "relative_motion_hamiltonian",
    "momentum_grid",
    "inflection_wavevector",
]


@dataclass(frozen=True)
class WaveguideParams:
    num_sites: int
    hopping: float = 1.0
    nonlinearity: float = 4.0
    cavity_frequency_offset: float = 0.0
    cut_bond: int | None = None
    branch: int = -1

    def __post_init__(self):
        if int(self.num_sites) != self.num_sites or self.num_sites < 4:
            raise ConfigurationError(f"num_sites must be an integer >= 4, got {self.num_sites}")
        if self.hopping == 0:
            raise ConfigurationError("hopping must be nonzero")
        if self.branch not in (-1, 1):
            raise ConfigurationError("branch must be -1 (attractive) or +1 (repulsive)")
        if self.cut_bond is not None and not 0 <= self.cut_bond < self.num_sites - 1:
            raise ConfigurationError(
                f"cut_bond must satisfy 0 <= n_b < N-1, got {self.cut_bond}")

    @property
    def interaction(self) -> float:
        """Signed on-site pair energy entering the lattice Hamiltonian."""
        return self.branch * abs(self.nonlinearity)

    def sign_flipped(self) -> "WaveguideParams":
        return replace(self, hopping=-self.hopping, nonlinearity=-self.nonlinearity,
                       branch=-self.branch)

    def with_cut(self, bond: int | None) -> "WaveguideParams":
        return replace(self, cut_bond=bond)


@dataclass(frozen=True)
class DoublonMode:
    wavevector: float
    energy: float
    decay_length: float
    group_velocity: float
    normalization: float


def momentum_grid(num_sites: int) -> np.ndarray:
    """Periodic grid K_j = -pi + 2 pi j / N."""
    return -np.pi + 2.0 * np.pi * np.arange(num_sites) / num_sites


def _pair_hopping(K, params):
    # 4 J cos(K/2): hopping of the relative coordinate, times two
    c = np.cos(np.asarray(K, dtype=float) / 2.0)
    c = np.where(np.abs(c) < 1e-14, 0.0, c)  # cos(pi/2) round-off
    return 4.0 * params.hopping * c


def doublon_energy(K, params: WaveguideParams):
    b = _pair_hopping(K, params)
    return params.branch * np.sqrt(params.nonlinearity ** 2 + b ** 2)


def doublon_band(params: WaveguideParams) -> tuple[float, float]:
    """(min, max) of E_K over the Brillouin zone."""
    edges = [doublon_energy(0.0, params), doublon_energy(np.pi, params)]
    return min(edges), max(edges)


def pair_ratio(K, params: WaveguideParams):
    """Signed ratio y with u_K(r) proportional to y**|r|.

    Written in the rationalised form 4|J_K| / (sqrt(U^2 + 16 J_K^2) + |U|) so
    that the J_K -> 0 limit is exact.
    """
    b = _pair_hopping(K, params)
    U = abs(params.nonlinearity)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.abs(b) / (np.sqrt(U ** 2 + b ** 2) + U)
    sign = np.where(-params.interaction * b >= 0, 1.0, -1.0)
    return sign * x


def doublon_decay_length(K, params: WaveguideParams):
    x = np.abs(pair_ratio(K, params))
    with np.errstate(divide="ignore"):
        out = np.where(x > 0, -1.0 / np.log(np.where(x > 0, x, 0.5)), 0.0)
    return out if np.ndim(out) else float(out)


def doublon_normalization(K, params: WaveguideParams):
    """u_0 from sum_r |u_K(r)|^2 = 1 over all integer r."""
    y2 = pair_ratio(K, params) ** 2
    return np.sqrt((1.0 - y2) / (1.0 + y2))


def doublon_wavefunction(K, r, params: WaveguideParams):
    y = pair_ratio(K, params)
    r = np.abs(np.asarray(r))
    return doublon_normalization(K, params) * np.power(y, r)


def group_velocity(K, params: WaveguideParams):
    J = params.hopping
    K = np.asarray(K, dtype=float)
    return (-params.branch * 4.0 * J ** 2 * np.sin(K)
            / np.sqrt(params.nonlinearity ** 2 + 16.0 * J ** 2 * np.cos(K / 2) ** 2))


def inflection_wavevector(params: WaveguideParams) -> float:
    """K in (0, pi) where d^2 E_K / dK^2 = 0 (fastest, dispersion-free point of the band).

    With E = -sqrt(a + b cos K), a = U^2 + 8J^2, b = 8J^2, the zero of the
    curvature solves b c^2 + 2 a c + b = 0 for c = cos K.
    """
    a = params.nonlinearity ** 2 + 8.0 * params.hopping ** 2
    b = 8.0 * params.hopping ** 2
    return math.acos((-a + math.sqrt(a * a - b * b)) / b)


def doublon_mode(K: float, params: WaveguideParams) -> DoublonMode:
    return DoublonMode(
        wavevector=float(K),
        energy=float(doublon_energy(K, params)),
        decay_length=float(doublon_decay_length(K, params)),
        group_velocity=float(group_velocity(K, params)),
        normalization=float(doublon_normalization(K, params)),
    )


def resonant_wavevector(detuning: float, params: WaveguideParams, xtol: float = 1e-10) -> float:
    """Positive K_r in (0, pi) with E_{K_r} = 2 * detuning.

    E_K is monotone in |K|, so plain bisection is exact. Targets on or outside
    the band edges raise OutOfBand.
    """
    target = 2.0 * detuning
    lo, hi = doublon_band(params)
    if not lo < target < hi:
        raise OutOfBand(
            f"2*detuning = {target:g} outside doublon band [{lo:g}, {hi:g}]")
    return float(optimize.bisect(lambda K: doublon_energy(K, params) - target,
                                 0.0, np.pi, xtol=xtol, rtol=4 * np.finfo(float).eps,
                                 maxiter=200))


def lattice_greens_function(E: float, K: float, r, params: WaveguideParams):
    """Free relative-motion Green's function G0_K(E, r) outside the band.

    G0 = (1/2pi) int dq exp(iqr) / (E + 4 J cos(K/2) cos q), evaluated by residues.
    """
    b = float(_pair_hopping(K, params))
    r = np.abs(np.asarray(r))
    if b == 0.0:
        if E == 0:
            raise OnBandSingularity("E = 0 with a flat band")
        return np.where(r == 0, 1.0 / E, 0.0)
    if abs(E) <= abs(b):
        raise OnBandSingularity(f"E = {E:g} lies inside the continuum [-{abs(b):g}, {abs(b):g}]")
    s = np.sign(E) * np.sqrt(E * E - b * b)
    z = (E - s) / (-b)
    return np.power(z, r) / s


def relative_motion_hamiltonian(K: float, params: WaveguideParams, num_sites: int = 401) -> np.ndarray:
    """Dense relative-coordinate operator at fixed K on r = -R..R (hard walls)."""
    if num_sites % 2 == 0:
        raise ConfigurationError("relative grid needs an odd number of sites")
    hop = -0.5 * float(_pair_hopping(K, params))
    h = np.diag(np.full(num_sites - 1, hop), 1)
    h = h + h.T
    h[num_sites // 2, num_sites // 2] = params.interaction
    return h
