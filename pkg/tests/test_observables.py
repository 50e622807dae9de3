import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from holstein_ring.ansatz import MultiD2State, init_gaussian, init_two_site, norm
from holstein_ring.fock import FockBasis, apply_hamiltonian, embed_multiD2, embed_tangent, expectations
from holstein_ring.lattice import ModelParams, operators
from holstein_ring.observables import (DiagnosticError, ObservableRecord, centroid_width, current,
                                       deviation_amplitude, energies, exciton_probability, h_squared,
                                       phonon_displacement, record_observables, relative_deviation)
from holstein_ring.propagator import propagate, time_derivative

from conftest import random_state


def _bounded_state(rng, M, N, lam_max=1.0):
    s = random_state(rng, M, N, lam_scale=0.5)
    lam = s.lam
    big = np.abs(lam) > lam_max
    lam[big] *= lam_max / np.abs(lam[big])
    return s.__class__(s.psi / math.sqrt(norm(MultiD2State(s.psi, lam))), lam)


def test_probability_examples():
    p = ModelParams(N=8)
    P = exciton_probability(init_two_site(p, 1))
    np.testing.assert_allclose(P, [0, 0, 0, 0, 0.5, 0.5, 0, 0], atol=1e-15)
    psi = np.array([0.6, 0.8j, 0.0])
    s = MultiD2State(psi, [0.3, -1.0, 2j])
    np.testing.assert_allclose(exciton_probability(s), np.abs(psi) ** 2, atol=1e-15)


def test_displacement_examples():
    p = ModelParams(N=4)
    grid = operators(p).grid
    assert np.all(phonon_displacement(init_two_site(p, 2, eta=0.0), grid) == 0)
    lam = np.zeros(4, dtype=complex)
    lam[list(grid.momenta).index(0.0)] = 0.3
    X = phonon_displacement(MultiD2State([1, 0, 0, 0], lam), grid)
    np.testing.assert_allclose(X, 2 * 0.3 / 2, atol=1e-15)


def test_centroid_width_examples():
    P = np.zeros(10)
    P[5] = 1
    assert centroid_width(P) == pytest.approx((5.0, 0.0), abs=1e-12)
    P = np.zeros(10)
    P[[3, 4]] = 0.5
    assert centroid_width(P) == pytest.approx((3.5, 0.5), abs=1e-12)
    # straddling the seam
    P = np.zeros(10)
    P[[9, 0]] = 0.5
    assert centroid_width(P) == pytest.approx((9.5, 0.5), abs=1e-12)
    with pytest.raises(ValueError):
        centroid_width(np.zeros(4))


def test_gaussian_width_N16():
    c, sigma = centroid_width(exciton_probability(init_gaussian(ModelParams(N=16), 1, 1.0)))
    assert c == pytest.approx(8.0, abs=1e-12)
    assert abs(sigma - 1) <= 0.05


def test_current_and_energy_examples():
    p = ModelParams(N=8, J=0.1, F=0.1)
    s = init_two_site(p, 1)
    assert current(s, 0.0, 0.1) == pytest.approx(0.0, abs=1e-15)
    assert energies(s, 0.0, p) == pytest.approx((-0.1, 0, 0, 0, -0.1), abs=1e-15)
    single = MultiD2State(np.eye(8)[3], np.zeros(8))
    assert energies(single, 0.7, p)[0] == 0


def test_energies_vanish_without_displacement(rng):
    p = ModelParams(N=6, J=0.3, g=0.5, phi=0.4, F=0.2, branch="acoustic")
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    s = MultiD2State(psi / np.linalg.norm(psi), np.zeros(6))
    E = energies(s, 1.1, p)
    assert E[1:4] == (0.0, 0.0, 0.0)
    assert E[4] == pytest.approx(sum(E[:4]), abs=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["optical", "acoustic"]), st.floats(0, 10))
def test_observables_match_fock_oracle(seed, branch, t):
    rng = np.random.default_rng(seed)
    N, n_max = 4, 12
    p = ModelParams(N=N, J=0.2, g=0.4, phi=0.3, F=0.3, branch=branch)
    s = _bounded_state(rng, 2, N)
    basis = FockBasis(N, n_max)
    v = embed_multiD2(s, basis, tol=1e-6)
    ref = expectations(v, t, p, basis)
    rec = record_observables(s, t, p)
    np.testing.assert_allclose(rec.P, ref["P"], atol=1e-8)
    np.testing.assert_allclose(rec.X, ref["X"], atol=1e-8)
    assert rec.norm == pytest.approx(ref["norm"], abs=1e-8)
    assert rec.j == pytest.approx(ref["j"].real, abs=1e-8)
    for key in ("E_ex", "E_ph", "E_diag", "E_off", "E_total"):
        assert getattr(rec, key) == pytest.approx(np.real(ref[key]), abs=1e-8), key
    assert h_squared(s, t, p) == pytest.approx(ref["H2"], abs=1e-8)
    assert abs(rec.P.sum() - rec.norm) <= 1e-10
    assert rec.E_total == pytest.approx(rec.E_ex + rec.E_ph + rec.E_diag + rec.E_off, abs=1e-12)


def test_truncation_certified_for_oracle(rng):
    # the n_max used above is converged: raising it changes nothing at 1e-8
    p = ModelParams(N=4, J=0.2, g=0.4, phi=0.3, F=0.3)
    s = _bounded_state(rng, 2, 4)
    vals = []
    for n_max in (12, 14, 16):
        basis = FockBasis(4, n_max)
        ref = expectations(embed_multiD2(s, basis, tol=1e-6), 0.4, p, basis)
        vals.append(np.concatenate([ref["P"], ref["X"], [ref[k].real for k in ("E_ph", "E_total", "H2")]]))
    assert np.max(np.abs(vals[0] - vals[2])) <= 1e-9
    assert np.max(np.abs(vals[1] - vals[2])) <= 1e-9


def test_deviation_zero_on_exact_manifold():
    p = ModelParams(N=6, J=0.1, F=0.1)
    s = init_gaussian(p, 1, 1.0)
    zdot = time_derivative(s, 2.0, p)
    delta, nerr = deviation_amplitude(s, zdot, 2.0, p)
    assert delta <= 1e-8
    assert nerr > 0


def test_deviation_equals_nerr_for_zero_velocity(rng):
    p = ModelParams(N=4, J=0.2, g=0.3, phi=0.1, F=0.1)
    s = random_state(rng, 2, 4)
    zero = MultiD2State(np.zeros((2, 4)), np.zeros((2, 4)))
    delta, nerr = deviation_amplitude(s, zero, 0.5, p)
    assert delta == pytest.approx(nerr, rel=1e-12)


def test_deviation_matches_fock_vector():
    # Off-diagonal coupling, M=4, after one Bloch period
    p = ModelParams(N=4, J=0.1, phi=0.28, F=0.1)
    tB = p.bloch_period
    tr = propagate(init_two_site(p, 4, eta=1e-2), p, tB, dt=tB / 1000, stride=1000)
    s = tr.final
    zdot = time_derivative(s, tB, p)
    basis = FockBasis(4, 12)
    v = embed_multiD2(s, basis)
    vdot = embed_tangent(s, zdot, basis)
    ref = np.linalg.norm(-1j * apply_hamiltonian(v, tB, p, None, basis) - vdot)
    delta, _ = deviation_amplitude(s, zdot, tB, p)
    assert delta > 1e-6
    assert delta == pytest.approx(ref, abs=1e-8)


def test_relative_deviation():
    p = ModelParams(N=6, J=0.1, F=0.1)
    tr = propagate(init_two_site(p, 1), p, 10.0, stride=500, deviation=True)
    assert relative_deviation(tr) <= 1e-8
    with pytest.raises(ValueError):
        relative_deviation([])
    with pytest.raises(ValueError):
        relative_deviation(propagate(init_two_site(p, 1), p, 1.0, stride=500))


def test_record_row_layout():
    p = ModelParams(N=4, J=0.1)
    rec = record_observables(init_two_site(p, 1), 0.0, p)
    assert len(rec.row()) == len(ObservableRecord.header(4)) == 1 + 8 + 11
    assert ObservableRecord.header(2)[:5] == ["t", "P0", "P1", "X0", "X1"]
    assert math.isnan(rec.Delta)


def test_imaginary_residue_is_flagged():
    from holstein_ring.observables import _real

    with pytest.raises(DiagnosticError):
        _real(1 + 1e-6j, "x")
