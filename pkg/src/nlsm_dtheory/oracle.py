"""Brute-force reference: sparse diagonalization and exact propagation.

Basis states are integers whose binary expansion lists chain sites from the
most significant bit (site 0) down, bit value 1 meaning spin up / Rydberg.
This is the same ordering as ``MPS.to_vector``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, expm_multiply

from .model import N, NN, SDOTS, SZ, SZSZ, X, LatticeGeometry, TermList

MAX_GROUND_SPINS = 24
MAX_EVOLVE_SPINS = 20


class OracleSizeError(ValueError):
    pass


@dataclass
class ExactState:
    """Amplitudes on an explicit list of basis integers (full space or a sector)."""

    n_sites: int
    states: np.ndarray
    amps: np.ndarray

    def full_vector(self) -> np.ndarray:
        if self.n_sites > MAX_EVOLVE_SPINS:
            raise OracleSizeError("full vector too large")
        v = np.zeros(2**self.n_sites, dtype=self.amps.dtype)
        v[self.states] = self.amps
        return v

    def bits(self) -> np.ndarray:
        """(n_states, n_sites) array of 0/1 occupation of every basis state."""
        shifts = np.arange(self.n_sites - 1, -1, -1, dtype=np.uint64)
        return ((self.states[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.int8)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2


def full_basis(n_sites: int) -> np.ndarray:
    return np.arange(2**n_sites, dtype=np.uint64)


def sz_sector_basis(n_sites: int, n_up: int) -> np.ndarray:
    """Sorted basis integers with exactly ``n_up`` set bits."""
    allstates = np.arange(2**n_sites, dtype=np.uint64)
    count = np.zeros(allstates.shape, dtype=np.uint8)
    s = allstates.copy()
    while True:
        nz = s != 0
        if not nz.any():
            break
        count += (s & np.uint64(1)).astype(np.uint8)
        s >>= np.uint64(1)
    return allstates[count == n_up]


def _bit(states: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    return ((states >> np.uint64(n_sites - 1 - site)) & np.uint64(1)).astype(np.int8)


def conserves_sz(terms: TermList) -> bool:
    return all(t.kind in (SDOTS, SZSZ, NN, SZ, N) for t in terms)


def build_sparse(terms: TermList, basis: np.ndarray | None = None) -> sp.csr_matrix:
    """Sparse Hamiltonian restricted to ``basis`` (full space if None)."""
    n = terms.n_sites
    if basis is None:
        basis = full_basis(n)
    full = len(basis) == 2**n
    dim = len(basis)
    diag = np.full(dim, terms.offset, dtype=float)
    rows, cols, vals = [], [], []
    bits_cache: dict[int, np.ndarray] = {}

    def bits(i):
        if i not in bits_cache:
            bits_cache[i] = _bit(basis, i, n)
        return bits_cache[i]

    def lookup(targets):
        if full:
            return targets.astype(np.int64), np.ones(len(targets), dtype=bool)
        idx = np.searchsorted(basis, targets)
        idx = np.minimum(idx, dim - 1)
        return idx, basis[idx] == targets

    for t in terms:
        c = t.coefficient
        if t.kind in (SDOTS, SZSZ):
            i, j = t.sites
            bi, bj = bits(i), bits(j)
            diag += c * np.where(bi == bj, 0.25, -0.25)
            if t.kind == SDOTS:
                src = np.nonzero(bi != bj)[0]
                mask = np.uint64((1 << (n - 1 - i)) | (1 << (n - 1 - j)))
                tgt, ok = lookup(basis[src] ^ mask)
                rows.append(tgt[ok]); cols.append(src[ok]); vals.append(np.full(ok.sum(), 0.5 * c))
        elif t.kind == NN:
            i, j = t.sites
            diag += c * (bits(i) * bits(j))
        elif t.kind == SZ:
            diag += c * (bits(t.sites[0]) - 0.5)
        elif t.kind == N:
            diag += c * bits(t.sites[0])
        elif t.kind == X:
            i = t.sites[0]
            mask = np.uint64(1 << (n - 1 - i))
            src = np.arange(dim)
            tgt, ok = lookup(basis ^ mask)
            rows.append(tgt[ok]); cols.append(src[ok]); vals.append(np.full(ok.sum(), c))
        else:  # pragma: no cover - guarded by SpinTerm
            raise ValueError(t.kind)
    rows.append(np.arange(dim)); cols.append(np.arange(dim)); vals.append(diag)
    r = np.concatenate(rows); cidx = np.concatenate(cols); v = np.concatenate(vals)
    return sp.csr_matrix((v, (r, cidx)), shape=(dim, dim))


def dense_matrix(terms: TermList) -> np.ndarray:
    if terms.n_sites > 14:
        raise OracleSizeError("dense matrix limited to 14 spins")
    return build_sparse(terms).toarray()


def exact_ground(terms: TermList, sector: str | int | None = "auto", k: int = 2,
                 tol: float = 1e-14) -> tuple[ExactState, float, float]:
    """Lowest two eigenpairs by Lanczos (ARPACK) on the sparse Hamiltonian.

    ``sector="auto"`` restricts to total ``Sz = 0`` when the terms conserve it
    and the site count is even; an integer selects that number of up spins.

    Returns:
        (ground state, E0, E1)
    """
    n = terms.n_sites
    if n > MAX_GROUND_SPINS:
        raise OracleSizeError(f"{n} spins exceeds the oracle limit of {MAX_GROUND_SPINS}")
    if sector == "auto":
        sector = n // 2 if (conserves_sz(terms) and n % 2 == 0 and n > 2) else None
    basis = full_basis(n) if sector is None else sz_sector_basis(n, int(sector))
    H = build_sparse(terms, basis)
    dim = H.shape[0]
    if dim <= 64:
        w, v = np.linalg.eigh(H.toarray())
    else:
        v0 = np.random.default_rng(1234).standard_normal(dim)
        w, v = eigsh(H, k=k, which="SA", tol=tol, v0=v0, ncv=min(dim - 1, 32))
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        res = np.linalg.norm(H @ v[:, 0] - w[0] * v[:, 0])
        if res > 1e-10 * max(1.0, abs(w[0])):
            raise RuntimeError(f"Lanczos residual {res:.2e} above tolerance")
    psi = v[:, 0]
    # fix the overall sign for reproducibility
    psi = psi * np.sign(psi[np.argmax(np.abs(psi))])
    E1 = float(w[1]) if len(w) > 1 else float("nan")
    return ExactState(n, basis, psi), float(w[0]), E1


def exact_evolve(state: ExactState | np.ndarray, terms: TermList, t: float) -> np.ndarray:
    """``exp(-i H t) |psi>`` in the full space (returns a dense vector)."""
    n = terms.n_sites
    if n > MAX_EVOLVE_SPINS:
        raise OracleSizeError(f"{n} spins exceeds the propagation limit of {MAX_EVOLVE_SPINS}")
    vec = state.full_vector() if isinstance(state, ExactState) else np.asarray(state)
    vec = vec.astype(complex)
    if t == 0:
        return vec.copy()
    H = build_sparse(terms)
    return expm_multiply(-1j * t * H, vec)


def expectation(vec: np.ndarray, terms: TermList) -> float:
    H = build_sparse(terms)
    return float(np.real(np.vdot(vec, H @ vec)) / np.real(np.vdot(vec, vec)))


def as_exact_state(vec: np.ndarray, n_sites: int) -> ExactState:
    return ExactState(n_sites, full_basis(n_sites), np.asarray(vec))


def sz_values(state: ExactState) -> np.ndarray:
    """(n_states, n_sites) Sz eigenvalues."""
    return state.bits().astype(float) - 0.5


def exact_zz(state: ExactState) -> np.ndarray:
    """Matrix of <Sz_i Sz_j> over chain sites."""
    sz = sz_values(state)
    p = state.probabilities()
    return (sz * p[:, None]).T @ sz / p.sum()


def exact_correlation_matrix(state: ExactState, geom: LatticeGeometry):
    """Staggered column correlation matrix by direct summation over the basis."""
    from .observables import CorrelationMatrix

    if state.n_sites != geom.n_sites:
        raise ValueError("state does not match geometry")
    sz = sz_values(state) * geom.parities()[None, :]
    cols = geom.column_of()
    A = np.zeros((sz.shape[0], geom.Lx))
    for x in range(geom.Lx):
        A[:, x] = sz[:, cols == x].sum(axis=1)
    p = state.probabilities()
    G = (A * p[:, None]).T @ A / p.sum()
    return CorrelationMatrix(0.5 * (G + G.T), source="exact")


def total_spin_squared(state: ExactState) -> float:
    """<S_tot^2> via the Heisenberg all-pairs operator (small systems)."""
    from .model import SpinTerm, make_termlist

    n = state.n_sites
    geom = LatticeGeometry(n, 1)
    terms = make_termlist(geom, [SpinTerm(SDOTS, (i, j), 2.0) for i in range(n) for j in range(i + 1, n)],
                          offset=0.75 * n)
    H = build_sparse(terms, state.states if len(state.states) < 2**n else None)
    a = state.amps
    return float(np.real(np.vdot(a, H @ a)))


def eigenvalues_csv(values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "energy"])
    for i, e in enumerate(values):
        w.writerow([i, repr(float(e))])
    return buf.getvalue()
