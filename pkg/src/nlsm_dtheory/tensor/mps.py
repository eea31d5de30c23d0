"""Matrix product states.

Site tensors have index order ``(left bond, physical, right bond)`` with
physical dimension 2 (index 1 = spin up).
"""

from __future__ import annotations

import numpy as np

from .linalg import truncated_svd

SZ = np.diag([-0.5, 0.5])


class MPS:
    """Finite open-boundary MPS.

    Attributes:
        tensors: list of rank-3 arrays ``(Dl, d, Dr)``.
        center: orthogonality center if the state is in mixed canonical form,
            else ``None``.
        trunc_error: cumulative discarded weight of all truncations applied.
    """

    def __init__(self, tensors, center: int | None = None, trunc_error: float = 0.0):
        self.tensors = [np.asarray(t) for t in tensors]
        self.center = center
        self.trunc_error = float(trunc_error)
        for a, b in zip(self.tensors[:-1], self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("inconsistent bond dimensions")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have dimension 1")

    # construction --------------------------------------------------------
    @classmethod
    def product_state(cls, bits, dtype=float) -> "MPS":
        tensors = []
        for b in bits:
            t = np.zeros((1, 2, 1), dtype=dtype)
            t[0, int(b), 0] = 1.0
            tensors.append(t)
        return cls(tensors, center=0)

    @classmethod
    def random(cls, n_sites: int, bond: int, rng: np.random.Generator, dtype=float) -> "MPS":
        dims = [1] + [min(bond, 2 ** min(i, n_sites - i)) for i in range(1, n_sites)] + [1]
        tensors = []
        for i in range(n_sites):
            shape = (dims[i], 2, dims[i + 1])
            t = rng.standard_normal(shape)
            if np.iscomplexobj(np.empty(0, dtype=dtype)):
                t = t + 1j * rng.standard_normal(shape)
            tensors.append(t.astype(dtype))
        psi = cls(tensors)
        psi.canonicalize(0)
        psi.normalize()
        return psi

    @classmethod
    def from_vector(cls, vec, n_sites: int, max_bond: int = 2**30, tol: float = 0.0) -> "MPS":
        vec = np.asarray(vec)
        tensors = []
        rest = vec.reshape(1, -1)
        err = 0.0
        for i in range(n_sites - 1):
            Dl = rest.shape[0]
            M = rest.reshape(Dl * 2, -1)
            U, S, Vh, disc = truncated_svd(M, max_bond, tol)
            err += disc
            tensors.append(U.reshape(Dl, 2, -1))
            rest = S[:, None] * Vh
        tensors.append(rest.reshape(rest.shape[0], 2, 1))
        return cls(tensors, center=n_sites - 1, trunc_error=err)

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], self.center, self.trunc_error)

    def astype(self, dtype) -> "MPS":
        return MPS([t.astype(dtype) for t in self.tensors], self.center, self.trunc_error)

    # basic properties ----------------------------------------------------
    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def dtype(self):
        return np.result_type(*self.tensors)

    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def max_bond(self) -> int:
        return max([1] + self.bond_dims())

    # gauge ---------------------------------------------------------------
    def canonicalize(self, center: int = 0) -> "MPS":
        """Bring into mixed canonical form with the given center (in place)."""
        n = self.n_sites
        if not 0 <= center < n:
            raise ValueError("center out of range")
        if self.center is None:
            lo, hi = 0, n - 1
        else:
            lo, hi = min(self.center, center), max(self.center, center)
        if self.center is None:
            for i in range(0, center):
                self._qr_right(i)
            for i in range(n - 1, center, -1):
                self._qr_left(i)
        elif self.center < center:
            for i in range(lo, hi):
                self._qr_right(i)
        else:
            for i in range(hi, lo, -1):
                self._qr_left(i)
        self.center = center
        return self

    def _qr_right(self, i: int):
        A = self.tensors[i]
        Dl, d, Dr = A.shape
        Q, R = np.linalg.qr(A.reshape(Dl * d, Dr))
        self.tensors[i] = Q.reshape(Dl, d, -1)
        self.tensors[i + 1] = np.tensordot(R, self.tensors[i + 1], axes=(1, 0))

    def _qr_left(self, i: int):
        A = self.tensors[i]
        Dl, d, Dr = A.shape
        Q, R = np.linalg.qr(A.reshape(Dl, d * Dr).T)
        self.tensors[i] = Q.T.reshape(-1, d, Dr)
        self.tensors[i - 1] = np.tensordot(self.tensors[i - 1], R.T, axes=(2, 0))

    def isometry_residual(self) -> float:
        """Largest deviation of the canonical-form conditions."""
        if self.center is None:
            return float("inf")
        res = 0.0
        for i, A in enumerate(self.tensors):
            Dl, d, Dr = A.shape
            if i < self.center:
                M = A.reshape(Dl * d, Dr)
                res = max(res, np.abs(M.conj().T @ M - np.eye(Dr)).max())
            elif i > self.center:
                M = A.reshape(Dl, d * Dr)
                res = max(res, np.abs(M @ M.conj().T - np.eye(Dl)).max())
        return float(res)

    def norm(self) -> float:
        if self.center is not None:
            return float(np.linalg.norm(self.tensors[self.center]))
        return float(np.sqrt(abs(self.overlap(self))))

    def normalize(self) -> "MPS":
        if self.center is None:
            self.canonicalize(0)
        c = self.center
        self.tensors[c] = self.tensors[c] / np.linalg.norm(self.tensors[c])
        return self

    # contractions --------------------------------------------------------
    def overlap(self, other: "MPS") -> complex:
        """``<self|other>``."""
        if other.n_sites != self.n_sites:
            raise ValueError("site-count mismatch")
        E = np.ones((1, 1))
        for A, B in zip(self.tensors, other.tensors):
            E = np.tensordot(E, B, axes=(1, 0))  # (a, s, b')
            E = np.tensordot(A.conj(), E, axes=([0, 1], [0, 1]))  # (a', b')
        return complex(E[0, 0]) if np.iscomplexobj(E) else float(E[0, 0])

    def to_vector(self) -> np.ndarray:
        if self.n_sites > 24:
            raise ValueError("state too large to densify")
        v = self.tensors[0].reshape(2, -1)
        for A in self.tensors[1:]:
            v = np.tensordot(v, A, axes=(1, 0)).reshape(-1, A.shape[2])
        return v.reshape(-1)

    def entanglement_entropy(self, bond: int) -> float:
        """Von Neumann entropy across the cut right of site ``bond``."""
        psi = self.copy()
        psi.canonicalize(bond)
        A = psi.tensors[bond]
        S = np.linalg.svd(A.reshape(-1, A.shape[2]), compute_uv=False)
        p = S**2 / np.sum(S**2)
        p = p[p > 1e-16]
        return float(-np.sum(p * np.log(p)))

    def local_expectation(self, site: int, op: np.ndarray) -> float:
        self.canonicalize(site)
        A = self.tensors[site]
        val = np.einsum("asb,ts,atb->", A.conj(), op, A)
        return float(np.real(val)) / float(np.linalg.norm(A) ** 2)

    def zz_matrix(self, op: np.ndarray = SZ) -> np.ndarray:
        """All ``<O_i O_j>`` in one pass per left site (O(N^2 D^3))."""
        n = self.n_sites
        psi = self.copy()
        psi.canonicalize(0)
        psi.normalize()
        out = np.zeros((n, n))
        op2 = op @ op
        for i in range(n):
            if i > 0:
                psi.canonicalize(i)
            A = psi.tensors[i]
            out[i, i] = float(np.real(np.einsum("asb,ts,atb->", A.conj(), op2, A)))
            # E carries O_i, open bonds (ket, bra)
            OA = np.tensordot(op, A, axes=(1, 1)).transpose(1, 0, 2)
            E = np.tensordot(OA, A.conj(), axes=([0, 1], [0, 1]))
            for j in range(i + 1, n):
                B = psi.tensors[j]
                T = np.tensordot(E, B, axes=(0, 0))  # (bra, s, ket')
                OB = np.tensordot(T, op, axes=(1, 1))  # (bra, ket', t)
                val = np.tensordot(OB, B.conj(), axes=([0, 2], [0, 1]))  # (ket', bra')
                out[i, j] = out[j, i] = float(np.real(np.trace(val)))
                E = np.tensordot(T, B.conj(), axes=([0, 1], [0, 1]))
        return out


def truncate(psi: MPS, max_bond: int, tol: float = 0.0) -> tuple[MPS, float]:
    """Global SVD truncation sweep.

    The state is first right-canonicalized, then truncated left to right.
    Returns the normalized truncated state and its discarded weight, which
    equals ``1 - |<psi_trunc|psi>|^2`` for a normalized input.
    """
    if max_bond < 1:
        raise ValueError("max_bond must be at least 1")
    phi = psi.copy()
    phi.canonicalize(0)
    phi.normalize()
    keep = 1.0
    n = phi.n_sites
    for i in range(n - 1):
        A = phi.tensors[i]
        Dl, d, Dr = A.shape
        U, S, Vh, disc = truncated_svd(A.reshape(Dl * d, Dr), max_bond, tol)
        keep *= 1.0 - disc
        S = S / np.linalg.norm(S)
        phi.tensors[i] = U.reshape(Dl, d, -1)
        phi.tensors[i + 1] = np.tensordot(S[:, None] * Vh, phi.tensors[i + 1], axes=(1, 0))
    phi.center = n - 1
    discarded = 1.0 - keep
    phi.trunc_error = psi.trunc_error + discarded
    return phi, discarded


def compress(psi: MPS, max_bond: int, tol: float = 0.0) -> MPS:
    """Truncated copy of ``psi``; discarded weight is accumulated in ``trunc_error``."""
    return truncate(psi, max_bond, tol)[0]


def two_point_zz(psi: MPS, site1: int, site2: int) -> float:
    """Raw correlator ``<Sz_site1 Sz_site2>``."""
    if site1 == site2:
        return psi.local_expectation(site1, SZ @ SZ)
    i, j = sorted((site1, site2))
    phi = psi.copy()
    phi.canonicalize(i)
    A = phi.tensors[i]
    OA = np.tensordot(SZ, A, axes=(1, 1)).transpose(1, 0, 2)
    E = np.tensordot(OA, A.conj(), axes=([0, 1], [0, 1]))
    for k in range(i + 1, j):
        B = phi.tensors[k]
        E = np.tensordot(np.tensordot(E, B, axes=(0, 0)), B.conj(), axes=([0, 1], [0, 1]))
    B = phi.tensors[j]
    T = np.tensordot(E, B, axes=(0, 0))
    T = np.tensordot(T, SZ, axes=(1, 1))
    val = np.tensordot(T, B.conj(), axes=([0, 2], [0, 1]))
    return float(np.real(np.trace(val))) / float(np.linalg.norm(A) ** 2)
