import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsm_dtheory.model import (SZ, LatticeGeometry, SpinTerm, build_d6_heisenberg, build_nn_heisenberg, make_termlist,
                                neel_bits)
from nlsm_dtheory.oracle import dense_matrix, exact_ground, exact_zz, expectation as exact_expectation
from nlsm_dtheory.tensor import checkpoint
from nlsm_dtheory.tensor.mpo import identity_mpo, mpo_from_terms
from nlsm_dtheory.tensor.mps import MPS, compress, truncate, two_point_zz
from nlsm_dtheory.tensor.network import expectation
from nlsm_dtheory.tensor.sampling import UnnormalizedStateError, bitstrings, sample_shot, sample_shots, shot_rng

SINGLET = np.array([0, 1, -1, 0]) / math.sqrt(2)


def term_sum_expectation(psi, terms):
    """Term-by-term oracle: every term contracted separately through a one-term MPO."""
    total = terms.offset
    for t in terms:
        total += expectation(psi, mpo_from_terms(make_termlist(terms.geometry, [t])))
    return total


def test_single_z_term_has_bond_one():
    g = LatticeGeometry(3, 2)
    m = mpo_from_terms(make_termlist(g, [SpinTerm(SZ, (2,), 0.7)]))
    assert m.max_bond() == 1


def test_nn_mpo_matches_dense_matrix():
    H = build_nn_heisenberg(LatticeGeometry(2, 2), 1.0, 1.0)
    assert np.allclose(mpo_from_terms(H).to_matrix(), dense_matrix(H), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.floats(0.8, 1.6))
def test_mpo_matrix_elements_match_term_list(Lx, Ly, ax):
    g = LatticeGeometry(Lx, Ly, ax, 1.0)
    if g.n_sites < 2:
        return
    H = build_d6_heisenberg(g)
    assert np.abs(mpo_from_terms(H).to_matrix() - dense_matrix(H)).max() < 1e-9


def test_d6_6x6_expectation_matches_term_sum():
    g = LatticeGeometry(6, 6)
    H = build_d6_heisenberg(g)
    mpo = mpo_from_terms(H, 1e-10)
    psi = MPS.random(36, 16, np.random.default_rng(0))
    assert expectation(psi, mpo) == pytest.approx(term_sum_expectation(psi, H), abs=1e-8)


def test_simple_expectations():
    g = LatticeGeometry(2, 2)
    neel = MPS.product_state(neel_bits(g))
    assert expectation(neel, mpo_from_terms(build_nn_heisenberg(g, 1, 1))) == pytest.approx(-1.0, abs=1e-12)
    assert expectation(neel, identity_mpo(4)) == pytest.approx(1.0, abs=1e-12)
    singlet = MPS.from_vector(SINGLET, 2)
    H = build_nn_heisenberg(LatticeGeometry(2, 1), 1, 1)
    assert expectation(singlet, mpo_from_terms(H)) == pytest.approx(-0.75, abs=1e-12)


def test_expectation_shape_mismatch():
    with pytest.raises(ValueError):
        expectation(MPS.product_state([0, 1, 0]), identity_mpo(4))


def test_two_point_zz():
    g = LatticeGeometry(2, 2)
    neel = MPS.product_state(neel_bits(g))
    assert two_point_zz(neel, 1, 1) == 0.25
    assert two_point_zz(neel, g.index(0, 0), g.index(1, 0)) == pytest.approx(-0.25)
    st_, _, _ = exact_ground(build_nn_heisenberg(g, 1, 1), sector=None)
    psi = MPS.from_vector(st_.full_vector(), 4)
    ref = exact_zz(st_)
    for i in range(4):
        for j in range(4):
            assert two_point_zz(psi, i, j) == pytest.approx(ref[i, j], abs=1e-12)
            assert two_point_zz(psi, i, j) == pytest.approx(two_point_zz(psi, j, i), abs=1e-14)


def test_sampling_examples():
    rng = np.random.default_rng(0)
    up_down = MPS.product_state([1, 0])
    assert all(bitstrings(sample_shot(up_down, rng)[None])[0] == "10" for _ in range(20))
    g = LatticeGeometry(2, 2)
    neel = MPS.product_state(neel_bits(g))
    assert np.all(sample_shots(neel, 50, seed=1) == neel_bits(g))
    shots = sample_shots(MPS.from_vector(SINGLET, 2), 10_000, seed=2)
    strings = bitstrings(shots)
    assert set(strings) == {"01", "10"}
    k = strings.count("01")
    assert abs(k - 5000) < 3 * math.sqrt(10_000 * 0.25)


def test_sampling_rejects_unnormalized_state():
    psi = MPS.product_state([0, 1])
    psi.tensors[0] = 2 * psi.tensors[0]
    with pytest.raises(UnnormalizedStateError):
        sample_shot(psi, np.random.default_rng(0))


def test_sampling_is_reproducible_per_shot():
    psi = MPS.random(8, 4, np.random.default_rng(3))
    a = sample_shots(psi, 100, seed=5)
    b = sample_shots(psi, 60, seed=5, first_shot=40)
    assert np.array_equal(a[40:], b)
    assert np.array_equal(a[7], sample_shot(psi, shot_rng(5, 7)))


def test_sampling_marginals_within_four_sigma():
    psi = MPS.random(10, 6, np.random.default_rng(4))
    shots = sample_shots(psi, 100_000, seed=9)
    n = 100_000
    for i in range(10):
        p = psi.local_expectation(i, np.diag([0.0, 1.0]))
        assert abs(shots[:, i].mean() - p) < 4 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_compress_examples():
    prod = MPS.product_state([0, 1, 1, 0])
    c = compress(prod, 1)
    assert abs(c.overlap(prod)) == pytest.approx(1.0, abs=1e-14)
    psi = MPS.random(10, 8, np.random.default_rng(5))
    c = compress(psi, 8)
    assert abs(c.overlap(psi)) ** 2 == pytest.approx(1.0, abs=1e-12)
    ghz = np.zeros(2**8)
    ghz[0] = ghz[-1] = 1 / math.sqrt(2)
    c = compress(MPS.from_vector(ghz, 8), 1)
    assert abs(np.vdot(c.to_vector(), ghz)) ** 2 == pytest.approx(0.5, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 12), st.integers(1, 6))
def test_discarded_weight_is_infidelity(seed, n, D):
    psi = MPS.random(n, 16, np.random.default_rng(seed))
    phi, disc = truncate(psi, D)
    assert disc == pytest.approx(1 - abs(phi.overlap(psi)) ** 2, abs=1e-9)
    assert phi.norm() == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 7), st.integers(0, 7))
def test_gauge_invariance_and_idempotent_canonicalization(seed, c1, c2):
    rng = np.random.default_rng(seed)
    psi = MPS.random(8, 6, rng)
    H = mpo_from_terms(build_d6_heisenberg(LatticeGeometry(4, 2)))
    e = expectation(psi, H)
    zz = psi.zz_matrix()
    psi.canonicalize(c1)
    assert psi.isometry_residual() < 1e-10
    once = [t.copy() for t in psi.tensors]
    psi.canonicalize(c1)
    assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(once, psi.tensors))
    psi.canonicalize(c2)
    assert expectation(psi, H) == pytest.approx(e, abs=1e-10)
    assert np.allclose(psi.zz_matrix(), zz, atol=1e-10)
    assert psi.norm() == pytest.approx(1.0, abs=1e-10)


def test_mps_agrees_with_exact_vector_expectation():
    g = LatticeGeometry(3, 2)
    H = build_d6_heisenberg(g)
    psi = MPS.random(6, 4, np.random.default_rng(6))
    assert expectation(psi, mpo_from_terms(H)) == pytest.approx(exact_expectation(psi.to_vector(), H), abs=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    psi = MPS.random(6, 4, np.random.default_rng(7), dtype=complex)
    psi.trunc_error = 1e-9
    path = tmp_path / "state.mps"
    checkpoint.save(path, psi, LatticeGeometry(3, 2).to_dict(), {"step": 3})
    back, header = checkpoint.load(path)
    assert all(np.array_equal(a, b) for a, b in zip(psi.tensors, back.tensors))
    assert back.center == psi.center and back.trunc_error == psi.trunc_error
    assert header["bond_dims"] == psi.bond_dims() and header["log"] == {"step": 3}
    data = path.read_bytes()
    assert data[:8] == b"NLSMMPS\0"
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXXXXXX" + data[8:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(data[:-1])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(data + b"\0")
    assert checkpoint.dumps(psi) == checkpoint.dumps(back)
