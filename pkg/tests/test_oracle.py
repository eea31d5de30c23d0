import numpy as np
import pytest
from scipy.linalg import expm

from nlsm_dtheory.model import LatticeGeometry, build_d6_heisenberg, build_nn_heisenberg, build_rydberg, neel_bits
from nlsm_dtheory.dynamics import spin_picture
from nlsm_dtheory.oracle import (OracleSizeError, as_exact_state, dense_matrix, eigenvalues_csv,
                                 exact_correlation_matrix, exact_evolve, exact_ground, exact_zz,
                                 total_spin_squared)

# dense-diagonalization values, frozen
E0_2x2 = -2.0
E0_1x4 = -1.6160254037844386


def dense_ground(H):
    w = np.linalg.eigvalsh(dense_matrix(H))
    return w[0], w[1]


def neel_vector(g):
    v = np.zeros(2**g.n_sites)
    v[int("".join(map(str, neel_bits(g))), 2)] = 1.0
    return v


def test_small_ground_energies():
    _, E0, E1 = exact_ground(build_nn_heisenberg(LatticeGeometry(2, 1), 1, 1))
    assert (E0, E1) == pytest.approx((-0.75, 0.25), abs=1e-12)
    _, E0, _ = exact_ground(build_nn_heisenberg(LatticeGeometry(2, 2), 1, 1))
    assert E0 == pytest.approx(E0_2x2, abs=1e-12)
    H = build_nn_heisenberg(LatticeGeometry(1, 4), 1, 1)
    _, E0, _ = exact_ground(H)
    assert E0 == pytest.approx(E0_1x4, abs=1e-12)
    assert E0 == pytest.approx(dense_ground(H)[0], abs=1e-12)


@pytest.mark.parametrize("shape", [(3, 2), (4, 2)])
def test_sector_restricted_search_matches_unrestricted(shape):
    H = build_d6_heisenberg(LatticeGeometry(*shape, ax=1.1, ay=1.0))
    _, Ea, _ = exact_ground(H, sector="auto")
    _, Eb, _ = exact_ground(H, sector=None)
    assert Ea == pytest.approx(Eb, abs=1e-10)
    E0, _ = dense_ground(H)
    assert Eb == pytest.approx(E0, abs=1e-10)


def test_residual_and_normalization():
    H = build_nn_heisenberg(LatticeGeometry(3, 3), 1, 0.5)
    st, E0, _ = exact_ground(H)
    v = st.full_vector()
    M = dense_matrix(H)
    assert np.linalg.norm(M @ v - E0 * v) < 1e-10
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


def test_size_limits():
    with pytest.raises(OracleSizeError):
        exact_ground(build_nn_heisenberg(LatticeGeometry(5, 5), 1, 1))
    with pytest.raises(OracleSizeError):
        exact_evolve(np.zeros(2**21), build_nn_heisenberg(LatticeGeometry(7, 3), 1, 1), 1.0)


def test_evolution_identity_and_eigenstate_phase():
    H = build_nn_heisenberg(LatticeGeometry(2, 2), 1, 1)
    st, E0, _ = exact_ground(H, sector=None)
    v = st.full_vector().astype(complex)
    assert np.allclose(exact_evolve(v, H, 0.0), v)
    w = exact_evolve(v, H, 0.7)
    assert abs(np.vdot(v, w)) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w, np.exp(-1j * E0 * 0.7) * v, atol=1e-10)


def test_rydberg_segment_against_dense_expm():
    g = LatticeGeometry(2, 3, 11.0, 11.0)
    H = spin_picture(build_rydberg(g, 5.42e6 / 50, 1.3, 2.0))
    v = neel_vector(g).astype(complex)
    ref = expm(-1j * 0.3 * dense_matrix(H)) @ v
    got = exact_evolve(v, H, 0.3)
    assert np.abs(got - ref).max() < 1e-9
    assert np.linalg.norm(got) == pytest.approx(1.0, abs=1e-12)


def test_correlation_matrix_neel_and_singlet():
    g = LatticeGeometry(3, 2)
    G = exact_correlation_matrix(as_exact_state(neel_vector(g), 6), g).G
    assert np.allclose(G, np.full((3, 3), 2**2 / 4))
    # one singlet across a horizontal bond of a 2x1 lattice
    g2 = LatticeGeometry(2, 1)
    v = np.array([0, 1, -1, 0]) / np.sqrt(2)
    G2 = exact_correlation_matrix(as_exact_state(v, 2), g2).G
    # A_0 = Sz_0, A_1 = -Sz_1 and <Sz_0 Sz_1> = -1/4
    assert np.allclose(G2, [[0.25, 0.25], [0.25, 0.25]])


def test_zz_and_total_spin():
    H = build_nn_heisenberg(LatticeGeometry(2, 2), 1, 1)
    st, _, _ = exact_ground(H)
    zz = exact_zz(st)
    assert np.allclose(np.diag(zz), 0.25)
    assert total_spin_squared(st) == pytest.approx(0.0, abs=1e-10)
    assert total_spin_squared(as_exact_state(neel_vector(LatticeGeometry(2, 2)), 4)) == pytest.approx(2.0)


def test_eigenvalue_csv():
    text = eigenvalues_csv([-2.0, -1.0])
    assert text.splitlines()[0] == "index,energy"
    assert text.splitlines()[1] == "0,-2.0"
