from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from giant_doublon.effective import GiantEmitter, GiantEmitterPair
from giant_doublon.errors import GeometryError, LowOccupation, NonMonotonic, StabilityError
from giant_doublon.fitting import fit_decay_rate
from giant_doublon.lattice import (
    LatticeSystem,
    Schedule,
    TwoExcitationBasis,
    build_hamiltonian,
    directional_split,
    field_distribution,
    pair_correlation,
    photon_density,
    propagate,
)
from giant_doublon.spectrum import WaveguideParams, doublon_energy


def small_system(N=20, g=0.3, **kw):
    params = WaveguideParams(N, 1.0, 4.0)
    pair = GiantEmitterPair.symmetric(2, 1, 0.7, 1.9, g, -2.55, origin=N // 2 - 2)
    return LatticeSystem(params, pair, **kw)


def test_basis_dimension_and_index_map():
    b = TwoExcitationBasis(7, 2)
    assert b.dim == 1 + 2 * 7 + 7 * 8 // 2
    idx = b.photon_index(b.photon_p, b.photon_q)
    np.testing.assert_array_equal(idx, np.arange(b.offset_photons, b.dim))
    assert b.photon_index(5, 2) == b.photon_index(2, 5)
    b4 = TwoExcitationBasis(5, 4)
    assert b4.dim == 6 + 20 + 15


def test_hermitian_and_decoupled():
    s = small_system()
    H = s.operator().toarray()
    assert np.abs(H - H.conj().T).max() == 0.0
    H0 = small_system(g=0.0).operator().toarray()
    b = s.basis
    assert np.abs(H0[: b.offset_single, b.offset_single:]).max() == 0.0
    assert np.abs(H0[b.single_slice, b.photon_slice]).max() == 0.0


def test_two_photon_block_matches_dispersion():
    params = WaveguideParams(41, 1.0, 4.0)
    pair = GiantEmitterPair.symmetric(1, 0, 1, 1, 0.0, -2.55, origin=10)
    s = LatticeSystem(params, pair)
    H = s.operator().toarray()
    sl = s.basis.photon_slice
    w, v = np.linalg.eigh(H[sl, sl])
    diag = s.basis.photon_p == s.basis.photon_q
    checked = 0
    for i in np.flatnonzero(w < -4 - 1e-9):
        a = v[diag, i].real
        X = np.arange(8, 33)
        # bulk recursion of the centre-of-mass amplitude fixes K
        cosK = np.sum(a[X] * (a[X + 1] + a[X - 1])) / (2 * np.sum(a[X] ** 2))
        K = math.acos(np.clip(cosK, -1, 1))
        if 0.1 < K < math.pi - 0.1:
            assert abs(doublon_energy(K, params) - w[i]) < 1e-3
            checked += 1
    assert checked > 30


@pytest.mark.parametrize("method,dt", [("chebyshev", 1.0), ("chebyshev", 5.0), ("rk4", 0.005)])
def test_dense_oracle(method, dt):
    s = small_system(N=20)
    H = s.operator().toarray()
    psi0 = s.basis.pair_state()
    exact = expm(-1j * H * 10.0) @ psi0
    tr = propagate(s, psi0, (0, 10), dt=dt, method=method, sample_times=[0, 10])
    assert np.linalg.norm(tr.final_state - exact) < 1e-7
    assert tr.max_norm_drift_rate() < 1e-8


def test_time_dependent_oracle():
    # piecewise-constant couplings are integrated exactly by aligned steps
    s = small_system(N=16, schedule=Schedule(couplings={0: lambda t: 0.3 if t < 4 else 0.1}))
    H1 = s.operator(0.0).toarray()
    H2 = s.operator(5.0).toarray()
    psi0 = s.basis.pair_state()
    exact = expm(-1j * H2 * 4.0) @ (expm(-1j * H1 * 4.0) @ psi0)
    tr = propagate(s, psi0, (0, 8), dt=0.5, method="chebyshev", sample_times=[0, 4, 8])
    assert np.linalg.norm(tr.final_state - exact) < 1e-10


def test_eigenvector_only_gains_phase():
    s = small_system(N=14)
    H = s.operator().toarray()
    w, v = np.linalg.eigh(H)
    psi0 = v[:, 7].astype(complex)
    for method, dt in (("chebyshev", 2.0), ("rk4", 0.01)):
        tr = propagate(s, psi0, (0, 3), dt=dt, method=method, sample_times=[0, 3])
        np.testing.assert_allclose(tr.final_state, psi0 * np.exp(-1j * w[7] * 3), atol=1e-9)
        assert abs(tr.norm[-1] - 1) < 1e-10


def test_energy_conserved():
    s = small_system(N=30)
    psi0 = s.basis.pair_state()
    E0 = s.energy(psi0)
    tr = propagate(s, psi0, (0, 40), method="chebyshev", dt=2.0, sample_times=[0, 40])
    assert abs(s.energy(tr.final_state) - E0) < 1e-8 * 40


def test_rk4_step_limits():
    s = small_system(N=12)
    with pytest.raises(StabilityError):
        propagate(s, s.basis.pair_state(), (0, 1), dt=0.05, method="rk4")


def test_geometry_validation():
    params = WaveguideParams(10)
    with pytest.raises(GeometryError):
        LatticeSystem(params, GiantEmitterPair.symmetric(1, 0, 1, 1, origin=9))
    with pytest.raises(GeometryError):
        LatticeSystem(params, GiantEmitterPair.symmetric(1, 0, 1, 1, origin=2), Schedule(cut_bond=9))


def test_cut_bond_blocks_transport():
    params = WaveguideParams(24, cut_bond=11)
    pair = GiantEmitterPair.symmetric(1, 0, 1, 1, 0.3, -2.55, origin=4)
    s = LatticeSystem(params, pair)
    H = s.operator().toarray()
    b = s.basis
    i, j = b.single_index(0, 11), b.single_index(0, 12)
    assert H[i, j] == 0
    p = b.photon_index(11, 15)
    assert H[p, b.photon_index(12, 15)] == 0
    assert H[p, b.photon_index(10, 15)] == -1.0


def test_sign_flip_schedule():
    params = WaveguideParams(12)
    pair = GiantEmitterPair.symmetric(1, 0, 1, 1, 0.2, -2.55, origin=3)
    s = LatticeSystem(params, pair, Schedule(flip_time=1.0))
    H0 = s.operator(0.0).toarray()
    H1 = s.operator(2.0).toarray()
    b = s.basis
    wg = slice(b.offset_single, b.dim)
    blocks = np.ix_(range(b.offset_photons, b.dim), range(b.offset_photons, b.dim))
    np.testing.assert_array_equal(H1[blocks], -H0[blocks])
    # emitter terms are not flipped
    assert H1[0, 0] == H0[0, 0]
    assert np.array_equal(H1[wg][:, :1], H0[wg][:, :1])


def test_reflection_symmetry():
    N = 40
    params = WaveguideParams(N, 1.0, 4.0)
    e1 = GiantEmitter(15, 17, 0.3, 1.4, 0.3, -2.55)
    e2 = GiantEmitter(16, 18, -0.2, 1.1, 0.3, -2.55)

    def mirror(e):
        return GiantEmitter(N - 1 - e.right_point, N - 1 - e.left_point, -e.left_phase, -e.right_phase,
                            e.coupling, e.detuning)

    a = LatticeSystem(params, GiantEmitterPair(e1, e2))
    m = LatticeSystem(params, GiantEmitterPair(mirror(e1), mirror(e2)))
    fa = field_distribution(propagate(a, a.basis.pair_state(), (0, 12), method="chebyshev", dt=2.0,
                                      sample_times=[0, 12]).final_state, a.basis)
    fm = field_distribution(propagate(m, m.basis.pair_state(), (0, 12), method="chebyshev", dt=2.0,
                                      sample_times=[0, 12]).final_state, m.basis)
    np.testing.assert_allclose(fm.density, fa.density[::-1, ::-1], atol=1e-10)


def test_field_distribution_and_correlation():
    s = small_system(N=40)
    tr = propagate(s, s.basis.pair_state(), (0, 30), method="chebyshev", dt=2.0, sample_times=[0, 30])
    psi = tr.final_state
    f = field_distribution(psi, s.basis)
    np.testing.assert_allclose(f.density, f.density[:, ::-1], atol=1e-15)
    rest = 1 - tr.pair_populations[-1].sum() - tr.single_photon[-1]
    assert f.total == pytest.approx(rest, abs=1e-10)
    r, G = pair_correlation(psi, s.basis, max_r=6)
    assert np.argmax(G) == 0
    # photon number bookkeeping: <n> = single + 2 * pairs
    assert photon_density(psi, s.basis).sum() == pytest.approx(tr.single_photon[-1] + 2 * f.total, abs=1e-12)
    with pytest.raises(LowOccupation):
        pair_correlation(s.basis.pair_state(), s.basis)


def test_directional_split_symmetric_emitters():
    params = WaveguideParams(80, 1.0, 4.0)
    pair = GiantEmitterPair(GiantEmitter(40, 40, 0, 0, 0.3, -2.55), GiantEmitter(40, 40, 0, 0, 0.3, -2.55))
    s = LatticeSystem(params, pair)
    psi = propagate(s, s.basis.pair_state(), (0, 40), method="chebyshev", dt=4.0, sample_times=[0, 40]).final_state
    L, R, C = directional_split(psi, s.basis, pair.center)
    assert L > 0 and abs(C) < 0.02


def test_fit_decay_rate():
    t = np.linspace(0, 100, 200)
    fit = fit_decay_rate(t, np.exp(-0.0123 * t))
    assert fit.rate == pytest.approx(0.0123, abs=1e-9)
    assert fit.residual < 1e-12
    with pytest.raises(NonMonotonic):
        fit_decay_rate(t, np.exp(-0.01 * t) * (1 + 0.2 * np.sin(t)))


def test_build_hamiltonian_function():
    params = WaveguideParams(10)
    pair = GiantEmitterPair.symmetric(1, 0, 1, 1, 0.2, -2.55, origin=3)
    H = build_hamiltonian(params, [pair])
    assert H.shape == (1 + 20 + 55,) * 2
