from __future__ import annotations

import math

import numpy as np
import pytest

from giant_doublon.effective import (
    GiantEmitter,
    GiantEmitterPair,
    channel_amplitude,
    chirality_large_d,
    decay_and_chirality,
    effective_coupling,
    mismatch_coupling,
    mode_kernel,
    optimal_detuning,
    reduced_evolution,
    stark_shift,
)
from giant_doublon.errors import GeometryError, OutOfBand, ResonantSinglePhoton, SinglePhotonLeak
from giant_doublon.spectrum import (
    WaveguideParams,
    doublon_decay_length,
    doublon_wavefunction,
    momentum_grid,
    resonant_wavevector,
)

P = WaveguideParams(num_sites=600, hopping=1.0, nonlinearity=4.0)
BEST = GiantEmitterPair.symmetric(1, 0, math.pi / 2, math.pi / 2, 0.1, -2.55, origin=300)


def ring_oracle(K, pair, params):
    """Second-order amplitude on an N-site ring from dense resolvents, as -V J sqrt(N)/(g1 g2)."""
    N, J = params.num_sites, params.hopping
    H = np.zeros((N, N))
    for n in range(N):
        H[n, (n + 1) % N] = H[(n + 1) % N, n] = -J
    E0 = pair.emitter_1.frequency + pair.emitter_2.frequency
    amp = np.zeros((N, N), complex)
    es = pair.emitters
    for i, j in ((0, 1), (1, 0)):
        src = np.zeros(N, complex)
        for _, n, p in es[i].points():
            src[n] += es[i].coupling * np.exp(1j * p)
        psi = np.linalg.solve((E0 - es[j].frequency) * np.eye(N) - H, src)
        second = np.zeros(N, complex)
        for _, n, p in es[j].points():
            second[n] += es[j].coupling * np.exp(1j * p)
        amp += np.outer(psi, second)
    x = np.arange(N)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    doublon = np.exp(1j * K * (X1 + X2) / 2) * doublon_wavefunction(K, X1 - X2, params) / np.sqrt(N)
    V = np.sqrt(2) * np.sum(np.conj(doublon) * amp)
    return -V * J * np.sqrt(N) / pair.coupling_product


def test_mode_kernel_vs_truncated_sum():
    K, Delta = 1.1, -2.6
    k = momentum_grid(P.num_sites)[::37]
    m = np.arange(-200, 201)
    u = doublon_wavefunction(K, m, P)
    dk = -2 * np.cos(k) + 2.6
    direct = np.array([2 * np.sqrt(2) * np.sum(np.exp(-1j * (kk - K / 2) * m) * u) / (P.num_sites * d)
                       for kk, d in zip(k, dk)])
    np.testing.assert_allclose(mode_kernel(k, K, P, Delta), direct, atol=1e-10, rtol=0)
    np.testing.assert_allclose(mode_kernel(-k, -K, P, Delta), np.conj(mode_kernel(k, K, P, Delta)), atol=1e-15)


def test_mode_kernel_fully_bound_limit():
    hard = WaveguideParams(600, nonlinearity=1e9)
    k = np.array([0.3, 2.0])
    dk = -2 * np.cos(k) + 3.0
    np.testing.assert_allclose(mode_kernel(k, 0.5, hard, -3.0), 2 * np.sqrt(2) / (600 * dk), rtol=1e-7)


def test_mode_kernel_resonance_raises():
    with pytest.raises(ResonantSinglePhoton):
        mode_kernel(np.array([0.0]), 1.0, P, -2.0)


def test_channel_amplitude_vs_double_sum():
    K_r = resonant_wavevector(-2.55, P)
    k = momentum_grid(P.num_sites)
    m = np.arange(-60, 61)
    u = doublon_wavefunction(K_r, m, P)
    q = k - K_r / 2
    dk = -2 * np.cos(k) + 2.55
    for r in (0, 1, 3, -2):
        # A(r) = sum_k L cos(q r), L from explicit m sums
        L = 2 * np.sqrt(2) * (np.exp(-1j * np.outer(q, m)) @ u) / (P.num_sites * dk)
        assert channel_amplitude(r, K_r, P, -2.55) == pytest.approx((L * np.cos(q * r)).sum().real, abs=1e-8)
    A = channel_amplitude(np.arange(0, 10), K_r, P, -2.55)
    assert A[0] > A[3] > abs(A[8])
    assert abs(A[8]) < 2e-3
    assert channel_amplitude(4, K_r, P, -2.55) == pytest.approx(channel_amplitude(-4, K_r, P, -2.55), abs=1e-15)


@pytest.mark.parametrize("size,sep,p1,p2,delta,mm", [
    (1, 0, math.pi / 2, math.pi / 2, -2.55, 0.0),
    (3, 2, 0.7, -1.2, -2.7, 0.0),
    (2, -1, 2.1, 0.4, -2.45, 0.0),
    (3, 2, 0.7, -1.2, -2.7, 0.15),
])
def test_effective_coupling_vs_ring_oracle(size, sep, p1, p2, delta, mm):
    params = WaveguideParams(60, 1.0, 4.0)
    pair = GiantEmitterPair.symmetric(size, sep, p1, p2, 0.1, delta, origin=27, mismatch=mm)
    for K in momentum_grid(60)[[5, 17, 33, 50]]:
        F = effective_coupling(K, pair, params)
        assert abs(F - ring_oracle(K, pair, params)) < 1e-10


def test_channel_sum_identity():
    pair = GiantEmitterPair.symmetric(2, 1, 0.3, 1.7, 0.1, -2.6, origin=100)
    F, vecs = effective_coupling(0.9, pair, P, channels=True)
    assert len(vecs) == 4
    assert sum(v.complex_value for v in vecs) == F
    for v in vecs:
        assert v.complex_value == pytest.approx(
            v.amplitude * np.exp(1j * v.local_phase) * np.exp(-1j * v.propagation_phase), abs=1e-15)


def test_small_emitters_not_chiral():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a, b = rng.uniform(-np.pi, np.pi, 2)
        pair = GiantEmitterPair(GiantEmitter(200, 200, a, a, 0.1, -2.55), GiantEmitter(200, 200, b, b, 0.1, -2.55))
        for K in (0.4, 1.3, 2.2):
            assert abs(effective_coupling(K, pair, P)) == pytest.approx(abs(effective_coupling(-K, pair, P)), rel=1e-12)
        assert abs(decay_and_chirality(pair, P).chiral_factor) < 1e-12


def test_optimal_point_closed_loop():
    res = decay_and_chirality(BEST, P)
    # the exact zero of |F_{-K_r}| lies at -2.5440, which -2.55 approximates
    assert res.chiral_factor > 0.9999
    Dstar = optimal_detuning(BEST, P)
    assert Dstar == pytest.approx(-2.544039299, abs=1e-7)
    best = decay_and_chirality(BEST.with_detuning(Dstar), P)
    assert best.chiral_factor == pytest.approx(1.0, abs=1e-6)
    assert abs(best.coupling_minus) < 1e-5


def test_rates_golden_values():
    res = decay_and_chirality(BEST, P)
    assert res.resonant_K == pytest.approx(1.3168248616, abs=1e-9)
    assert res.gamma_plus == pytest.approx(0.0032608945, rel=1e-7)
    assert res.gamma_minus == pytest.approx(1.5525553e-07, rel=1e-6)


def test_zero_phase_sum_gives_no_chirality():
    for d in (1, 3, 6):
        for P1 in (0.4, 1.2, 2.9):
            pair = GiantEmitterPair.symmetric(d, 0, P1, -P1, 0.1, -2.55, origin=200)
            assert abs(decay_and_chirality(pair, P).chiral_factor) < 1e-9


def test_global_phase_invariance_and_negation():
    pair = GiantEmitterPair.symmetric(2, 1, 0.8, 2.0, 0.1, -2.6, origin=150)
    from dataclasses import replace
    e1, e2 = pair.emitters
    c = 0.77
    shifted = GiantEmitterPair(
        replace(e1, left_phase=e1.left_phase + c, right_phase=e1.right_phase + c),
        replace(e2, left_phase=e2.left_phase + c, right_phase=e2.right_phase + c))
    a, b = decay_and_chirality(pair, P), decay_and_chirality(shifted, P)
    assert abs(a.gamma_plus - b.gamma_plus) < 1e-12 and abs(a.chiral_factor - b.chiral_factor) < 1e-12
    neg = decay_and_chirality(pair.negated_phases(), P)
    assert neg.gamma_plus == pytest.approx(a.gamma_minus, rel=1e-10)
    assert neg.chiral_factor == pytest.approx(-a.chiral_factor, abs=1e-12)
    F = effective_coupling(1.2, pair, P)
    Fn = effective_coupling(-1.2, pair.negated_phases(), P)
    assert abs(Fn - np.conj(F)) < 1e-12


def test_phase_grid_antisymmetry_and_bounds():
    phis = np.linspace(-np.pi, np.pi, 16, endpoint=False)
    base = GiantEmitterPair.symmetric(1, 0, 0, 0, 0.1, -2.55, origin=300)
    for a in phis[::3]:
        for b in phis[::3]:
            c1 = decay_and_chirality(base.with_phases(a, b), P).chiral_factor
            c2 = decay_and_chirality(base.with_phases(-a, -b), P).chiral_factor
            assert abs(c1 + c2) < 1e-9
            assert -1 <= c1 <= 1


def test_large_d_closed_form():
    K_r = resonant_wavevector(-2.55, P)
    assert chirality_large_d(math.pi / 4, math.pi / 4, math.pi / 2, 1)[1] == pytest.approx(1.0)
    assert chirality_large_d(0.3, -0.3, K_r, 9)[1] == 0.0
    A0 = channel_amplitude(0, K_r, P, -2.55)
    for d in (6, 9):
        assert d >= doublon_decay_length(K_r, P) + 4
        for P1, P2 in [(0.5, 1.0), (1.9, -0.4), (math.pi / 2, 0.0)]:
            pair = GiantEmitterPair.symmetric(d, 0, P1, P2, 0.1, -2.55, origin=200)
            res = decay_and_chirality(pair, P)
            scale, C = chirality_large_d(P1, P2, K_r, d)
            assert abs(res.chiral_factor - C) < 0.02
            full_scale = (abs(res.coupling_plus) ** 2 + abs(res.coupling_minus) ** 2) / A0 ** 2
            assert full_scale == pytest.approx(scale, rel=0.05)


def test_mismatch_reduces_and_trends():
    zero = GiantEmitterPair.symmetric(1, 0, math.pi / 2, math.pi / 2, 0.1, -2.55, origin=300, mismatch=0.0)
    e1, e2 = zero.emitters
    assert mismatch_coupling(1.3, zero, P) == pytest.approx(effective_coupling(1.3, zero, P), abs=1e-15)
    rates, Cs = [], []
    for w in np.linspace(0, 0.45, 10):
        r = decay_and_chirality(GiantEmitterPair.symmetric(1, 0, math.pi / 2, math.pi / 2, 0.1, -2.55,
                                                           origin=300, mismatch=w), P)
        rates.append(r.total_rate)
        Cs.append(r.chiral_factor)
    assert np.all(np.diff(rates) > 0)
    assert np.max(np.abs(np.array(Cs) - Cs[0])) < 0.05
    with pytest.raises(SinglePhotonLeak):
        mismatch_coupling(1.3, GiantEmitterPair.symmetric(1, 0, 1, 1, 0.1, -2.55, mismatch=0.6), P)


def test_out_of_band_propagates():
    with pytest.raises(OutOfBand):
        decay_and_chirality(BEST.with_detuning(-1.9), P)


def test_reduced_evolution_matches_rates():
    res = decay_and_chirality(BEST, P)
    tr = reduced_evolution(BEST, P, np.linspace(0, 600, 121))
    y = np.log(tr.excited_population)
    rate = -np.polyfit(tr.times, y, 1)[0]
    assert rate == pytest.approx(res.total_rate, rel=0.05)
    assert abs(tr.chiral_factor() - res.chiral_factor) < 0.05
    drift = np.max(np.abs(tr.norm - 1))
    assert drift < 1e-8 * tr.times[-1]


def test_reduced_evolution_decoupled():
    tr = reduced_evolution(BEST.with_coupling(0.0), P, np.linspace(0, 50, 11))
    np.testing.assert_allclose(tr.excited_population, 1.0, atol=0)


def test_stark_shift_scaling_and_oracle():
    e = GiantEmitter(20, 21, 0.0, math.pi / 2, 0.1, -2.55)
    small = WaveguideParams(48)
    assert stark_shift(e, small, 0.0) == 0.0
    s1, s2 = stark_shift(e, small, 0.1), stark_shift(e, small, 0.2)
    assert s2 == pytest.approx(4 * s1, rel=1e-12)
    # dense second-order sum on the ring: sum_n |<n|v>|^2 / (w_e - e_n)
    N = small.num_sites
    H = np.zeros((N, N))
    for n in range(N):
        H[n, (n + 1) % N] = H[(n + 1) % N, n] = -1.0
    w, vecs = np.linalg.eigh(H)
    v = np.zeros(N, complex)
    v[20], v[21] = 0.1, 0.1 * np.exp(1j * math.pi / 2)
    oracle = np.sum(np.abs(vecs.T @ v) ** 2 / (-2.55 - w))
    assert s1 == pytest.approx(oracle, rel=1e-6)


def test_geometry_errors():
    with pytest.raises(GeometryError):
        GiantEmitter(5, 3)
    pair = GiantEmitterPair.symmetric(1, 0, 1, 1, origin=599)
    with pytest.raises(GeometryError):
        pair.check_geometry(600)
