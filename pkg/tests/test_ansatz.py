import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from holstein_ring.ansatz import (MultiD2State, debye_waller, displaced_matrix_element, format_snapshot,
                                  init_gaussian, init_two_site, norm, overlap_matrix, parse_snapshot,
                                  seed_multiplicity)
from holstein_ring.fock import FockBasis, embed_multiD2
from holstein_ring.lattice import ModelParams
from holstein_ring.observables import centroid_width, energies, exciton_probability, record_observables
from holstein_ring.propagator import assemble_tangent_system

from conftest import random_state


# independent truncated-Fock oracle for ladder words on a few modes

def _column(lam, n_max):
    m = np.arange(n_max + 1)
    logf = np.array([math.lgamma(k + 1) for k in m])
    if lam == 0:
        return np.eye(n_max + 1, 1).ravel().astype(complex)
    return np.exp(-abs(lam) ** 2 / 2 + m * np.log(complex(lam)) - logf / 2)


def _ladder(n_max):
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), 1).astype(complex)


def _oracle_element(lam_i, lam_j, word, n_max):
    n_modes = len(lam_i)
    b = _ladder(n_max)
    eye = np.eye(n_max + 1)

    def on_mode(op, q):
        out = np.array([[1.0 + 0j]])
        for p in range(n_modes):
            out = np.kron(out, op if p == q else eye)
        return out

    def coherent(lam):
        v = np.array([1.0 + 0j])
        for l in lam:
            v = np.kron(v, _column(l, n_max))
        return v

    ket = coherent(lam_j)
    for q, cre in reversed(list(word)):
        ket = on_mode(b.conj().T if cre else b, q) @ ket
    return np.vdot(coherent(lam_i), ket)


def test_debye_waller_examples():
    lam = np.array([0.3 - 1.2j, 2.0, 0.1j])
    assert debye_waller(lam, lam) == pytest.approx(1.0, abs=1e-15)
    assert debye_waller([0.0], [0.7 + 0.2j]) == pytest.approx(math.exp(-abs(0.7 + 0.2j) ** 2 / 2), abs=1e-15)
    assert debye_waller([1.0], [1j]) == pytest.approx(np.exp(-1) * np.exp(1j), abs=1e-15)
    with pytest.raises(ValueError):
        debye_waller([1.0, 2.0], [1.0])


complex_small = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(complex_small, complex_small), min_size=1, max_size=5))
def test_debye_waller_bounded_and_conjugate_symmetric(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    s = debye_waller(a, b)
    assert abs(s) <= 1 + 1e-12
    assert debye_waller(b, a) == pytest.approx(np.conj(s), abs=1e-14)


def test_overlap_matrix_properties(rng):
    for M in (1, 2, 5):
        s = random_state(rng, M, 4, lam_scale=1.0)
        S = overlap_matrix(s.lam)
        assert np.all(np.diag(S) == 1)
        np.testing.assert_array_equal(S, S.conj().T)
        assert np.all(np.abs(S) <= 1 + 1e-15)
        for i in range(M):
            for j in range(M):
                assert S[i, j] == pytest.approx(debye_waller(s.lam[i], s.lam[j]), abs=1e-14)


def test_norm_examples():
    p = ModelParams(N=6)
    s1 = init_two_site(p, 1)
    assert norm(s1) == pytest.approx(1.0, abs=1e-14)
    s2 = MultiD2State(np.vstack([s1.psi, np.zeros(6)]), np.vstack([s1.lam, 0.4 + np.zeros(6)]))
    assert norm(s2) == pytest.approx(norm(s1), abs=1e-15)


def test_norm_matches_fock_inner_product(rng):
    # two copies sharing psi/sqrt(2), different displacements
    psi = rng.normal(size=3) + 1j * rng.normal(size=3)
    psi /= np.linalg.norm(psi)
    lam = 0.4 * (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)))
    s = MultiD2State(np.vstack([psi, psi]) / math.sqrt(2), lam)
    v = embed_multiD2(s, FockBasis(3, 14))
    assert norm(s) == pytest.approx(np.vdot(v, v).real, abs=1e-12)


def test_init_two_site_N8():
    p = ModelParams(N=8, J=0.1)
    s = init_two_site(p, 1)
    expected = np.zeros(8)
    expected[[4, 5]] = 1 / math.sqrt(2)
    np.testing.assert_allclose(s.psi[0], expected, atol=1e-15)
    np.testing.assert_array_equal(s.lam, 0)
    E = energies(s, 0.0, p)
    assert E[0] == pytest.approx(-0.1, abs=1e-15)
    assert E[4] == pytest.approx(-0.1, abs=1e-15)
    s16 = init_two_site(ModelParams(N=8, g=0.28), 16)
    assert abs(norm(s16) - 1) <= 1e-10
    assert s16.M == 16


@pytest.mark.parametrize("N", [2, 4, 6, 16])
def test_init_norms(N):
    p = ModelParams(N=N)
    for M in (1, 3, 8):
        assert abs(norm(init_two_site(p, M, eta=1e-3)) - 1) <= 1e-10
        assert abs(norm(init_gaussian(p, M, 0.7, eta=1e-3)) - 1) <= 1e-10


def test_init_gaussian():
    p = ModelParams(N=16)
    narrow = init_gaussian(p, 1, 0.05)
    assert abs(narrow.psi[0, 8]) == pytest.approx(1.0, abs=1e-12)
    s = init_gaussian(p, 1, 1.0)
    assert np.sum(np.abs(s.psi[0]) ** 2) == pytest.approx(1.0, abs=1e-15)
    c, sigma = centroid_width(exciton_probability(s))
    assert c == pytest.approx(8.0, abs=1e-12)
    assert abs(sigma - 1.0) <= 0.05
    with pytest.raises(ValueError):
        init_gaussian(p, 1, 0.0)
    with pytest.raises(ValueError):
        init_gaussian(p, 1, -1.0)


def test_seeding_noop_and_deterministic():
    p = ModelParams(N=6, g=0.3)
    s = init_two_site(p, 1)
    same = seed_multiplicity(s, 1, eta=0.0)
    np.testing.assert_array_equal(same.psi, s.psi)
    np.testing.assert_array_equal(same.lam, s.lam)
    a = init_two_site(p, 5, eta=1e-3, seed=7)
    b = init_two_site(p, 5, eta=1e-3, seed=7)
    c = init_two_site(p, 5, eta=1e-3, seed=8)
    np.testing.assert_array_equal(a.lam, b.lam)
    assert not np.array_equal(a.lam, c.lam)
    np.testing.assert_array_equal(a.psi[1:], 0)
    with pytest.raises(ValueError):
        seed_multiplicity(s, 2, eta=-1.0)


def test_zero_noise_makes_gram_singular():
    p = ModelParams(N=4, J=0.1, g=0.3, F=0.1)
    s = init_two_site(p, 2, eta=0.0)
    sv = np.linalg.svd(assemble_tangent_system(s, 0.0, p).gram, compute_uv=False)
    assert sv[-1] / sv[0] < 1e-12


def test_seeding_leaves_observables_unchanged():
    p = ModelParams(N=8, J=0.1, g=0.28, phi=0.1, F=0.1)
    r1 = record_observables(init_two_site(p, 1), 0.0, p)
    r16 = record_observables(init_two_site(p, 16, eta=1e-4), 0.0, p)
    for name in ("P", "X", "c", "sigma", "j", "E_ex", "E_ph", "E_diag", "E_off", "E_total", "norm"):
        np.testing.assert_allclose(getattr(r16, name), getattr(r1, name), atol=1e-6, err_msg=name)


def test_displaced_matrix_element_examples():
    lam_i = np.array([0.3 + 0.1j, -0.5j])
    lam_j = np.array([1.1, 0.2 - 0.2j])
    assert displaced_matrix_element(lam_i, lam_j, []) == pytest.approx(debye_waller(lam_i, lam_j), abs=1e-15)
    assert displaced_matrix_element(lam_j, lam_j, [(0, True), (0, False)]) == pytest.approx(1.21, abs=1e-14)
    z = np.zeros(2)
    assert displaced_matrix_element(z, z, [(1, False), (1, True)]) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        displaced_matrix_element(z, z, [(0, True)] * 3)


ladder = st.tuples(st.integers(0, 1), st.booleans())


def _quartic_per_mode(word):
    return all(sum(c for q, c in word if q == m) <= 2 and sum(not c for q, c in word if q == m) <= 2
               for m in (0, 1))


@given(st.lists(st.tuples(st.floats(0, 2), st.floats(0, 2 * math.pi)), min_size=4, max_size=4),
       st.lists(ladder, max_size=6).filter(_quartic_per_mode))
def test_displaced_matrix_element_matches_fock_oracle(polar, word):
    lam = np.array([r * np.exp(1j * a) for r, a in polar])
    lam_i, lam_j = lam[:2], lam[2:]
    # |lam| <= 2 with up to two raising operators per mode needs more than 20
    # levels for 1e-10; 40 levels push the truncation tail below 1e-15
    expected = _oracle_element(lam_i, lam_j, word, 40)
    got = displaced_matrix_element(lam_i, lam_j, word)
    assert abs(got - expected) <= 1e-10 * max(1.0, abs(expected))


def test_snapshot_round_trip(rng):
    s = random_state(rng, 3, 5)
    back = parse_snapshot(format_snapshot(s))
    np.testing.assert_array_equal(back.psi, s.psi)
    np.testing.assert_array_equal(back.lam, s.lam)
    with pytest.raises(ValueError):
        parse_snapshot("2 3 3\n1 0 0 0 0 0\n")
