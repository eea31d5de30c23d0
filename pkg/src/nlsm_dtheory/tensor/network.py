"""Environment contractions, expectation values and MPO application.

Environment tensors have index order ``(ket, mpo, bra)``.
"""

from __future__ import annotations

import numpy as np

from .linalg import truncated_svd
from .mpo import MPO
from .mps import MPS


def left_boundary(dtype=float):
    return np.ones((1, 1, 1), dtype=dtype)


right_boundary = left_boundary


def extend_left(L, A, W, Abra=None):
    """Absorb site ``(A, W)`` into a left environment."""
    if Abra is None:
        Abra = A
    T = np.tensordot(L, A, axes=(0, 0))  # (w, v, s, u')
    T = np.tensordot(T, W, axes=([0, 2], [0, 2]))  # (v, u', t, w')
    return np.tensordot(T, Abra.conj(), axes=([0, 2], [0, 1]))  # (u', w', v')


def extend_right(R, A, W, Abra=None):
    if Abra is None:
        Abra = A
    T = np.tensordot(A, R, axes=(2, 0))  # (u, s, w, v)
    T = np.tensordot(T, W, axes=([1, 2], [2, 3]))  # (u, v, w_l, t)
    return np.tensordot(T, Abra.conj(), axes=([1, 3], [2, 1]))  # (u, w_l, v')


def extend_left_overlap(E, A, Bbra):
    """Overlap environment ``(ket, bra)`` without an operator."""
    T = np.tensordot(E, A, axes=(0, 0))  # (v, s, u')
    return np.tensordot(T, Bbra.conj(), axes=([0, 1], [0, 1]))


def extend_right_overlap(E, A, Bbra):
    T = np.tensordot(A, E, axes=(2, 0))  # (u, s, v)
    return np.tensordot(T, Bbra.conj(), axes=([1, 2], [1, 2]))


def apply_heff2(L, W1, W2, R, theta):
    T = np.tensordot(L, theta, axes=(0, 0))  # (w, v, s1, s2, b)
    T = np.tensordot(T, W1, axes=([0, 2], [0, 2]))  # (v, s2, b, t1, w1)
    T = np.tensordot(T, W2, axes=([4, 1], [0, 2]))  # (v, b, t1, t2, w2)
    return np.tensordot(T, R, axes=([1, 4], [0, 1])).transpose(0, 1, 2, 3)  # (v, t1, t2, v2)


def apply_heff1(L, W, R, A):
    T = np.tensordot(L, A, axes=(0, 0))  # (w, v, s, b)
    T = np.tensordot(T, W, axes=([0, 2], [0, 2]))  # (v, b, t, w')
    return np.tensordot(T, R, axes=([1, 3], [0, 1]))  # (v, t, v2)


def apply_heff0(L, R, C):
    T = np.tensordot(L, C, axes=(0, 0))  # (w, v, b)
    return np.tensordot(T, R, axes=([0, 2], [1, 0]))  # (v, v2)


def expectation(psi: MPS, op: MPO) -> float:
    """``<psi|O|psi> / <psi|psi>`` for Hermitian ``O``.

    Raises if the imaginary part exceeds ``1e-10`` relative.
    """
    if psi.n_sites != op.n_sites:
        raise ValueError(f"state has {psi.n_sites} sites, operator {op.n_sites}")
    E = left_boundary()
    for A, W in zip(psi.tensors, op.tensors):
        E = extend_left(E, A, W)
    val = complex(E[0, 0, 0])
    nrm = psi.norm() ** 2 if psi.center is not None else abs(psi.overlap(psi))
    val /= nrm
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError(f"non-Hermitian expectation value {val}")
    return float(val.real)


def variance(psi: MPS, op: MPO) -> float:
    """``<O^2> - <O>^2`` via two stacked operator layers."""
    E = np.ones((1, 1, 1, 1))
    for A, W in zip(psi.tensors, op.tensors):
        T = np.tensordot(E, A, axes=(0, 0))  # (w1, w2, v, s, u')
        T = np.tensordot(T, W, axes=([0, 3], [0, 2]))  # (w2, v, u', t, w1')
        T = np.tensordot(T, W, axes=([0, 3], [0, 2]))  # (v, u', w1', r, w2')
        E = np.tensordot(T, A.conj(), axes=([0, 3], [0, 1]))  # (u', w1', w2', v')
    nrm = abs(psi.overlap(psi))
    h2 = float(np.real(E[0, 0, 0, 0])) / nrm
    return h2 - expectation(psi, op) ** 2


def apply_mpo(op: MPO, psi: MPS, max_bond: int, tol: float = 1e-12) -> MPS:
    """``O|psi>`` compressed by a zip-up sweep (left to right)."""
    phi = psi.copy()
    phi.canonicalize(0)
    n = phi.n_sites
    dtype = np.result_type(phi.dtype, op.tensors[0].dtype)
    C = np.ones((1, 1, 1), dtype=dtype)  # (new, psi bond, mpo bond)
    tensors = []
    err = 0.0
    for j in range(n):
        A = phi.tensors[j]
        W = op.tensors[j]
        T = np.tensordot(C, A, axes=(1, 0))  # (k, w, s, b)
        T = np.tensordot(T, W, axes=([1, 2], [0, 2]))  # (k, b, t, w')
        k, b, t, w = T.shape
        T = T.transpose(0, 2, 1, 3)
        if j == n - 1:
            tensors.append(T.reshape(k, t, 1))
            break
        U, S, Vh, disc = truncated_svd(T.reshape(k * t, b * w), max_bond, tol)
        err += disc
        tensors.append(U.reshape(k, t, -1))
        C = (S[:, None] * Vh).reshape(-1, b, w)
    out = MPS(tensors, center=n - 1, trunc_error=err)
    return out
