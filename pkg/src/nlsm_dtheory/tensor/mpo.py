"""Matrix product operators built from term lists.

Two-site terms are grouped into families sharing an operator pair ``(A, B)``;
each family is a coupling matrix ``V[i, j]`` (``i < j``).  For every cut the
block ``V[:k+1, k+1:]`` is factorized by SVD and singular values below the
tolerance are dropped, which gives the minimal number of channels carrying
"open" left operators across that cut.  Channels that can never connect the
two boundaries are pruned afterwards.

Tensor index order: ``(left, out, in, right)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import N, NN, SDOTS, SZ, SZSZ, X, TermList

I2 = np.eye(2)
OPS = {
    "I": I2,
    "Sz": np.diag([-0.5, 0.5]),
    "Sp": np.array([[0.0, 0.0], [1.0, 0.0]]),  # |up><down|
    "Sm": np.array([[0.0, 1.0], [0.0, 0.0]]),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "n": np.diag([0.0, 1.0]),
}

# term kind -> [(left op, right op, weight)]
_PAIR_DECOMP = {
    SDOTS: [("Sz", "Sz", 1.0), ("Sp", "Sm", 0.5), ("Sm", "Sp", 0.5)],
    SZSZ: [("Sz", "Sz", 1.0)],
    NN: [("n", "n", 1.0)],
}
_ONE_SITE_OP = {X: "X", SZ: "Sz", N: "n"}


@dataclass
class MPO:
    tensors: list
    log: dict = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    def bond_dims(self) -> list[int]:
        return [W.shape[3] for W in self.tensors[:-1]]

    def max_bond(self) -> int:
        return max([1] + self.bond_dims())

    def to_matrix(self) -> np.ndarray:
        if self.n_sites > 12:
            raise ValueError("operator too large to densify")
        M = self.tensors[0][0]  # (out, in, right)
        for W in self.tensors[1:]:
            # M: (O, I, w) ; W: (w, o, i, w')
            M = np.tensordot(M, W, axes=(2, 0))  # (O, I, o, i, w')
            O, I_, o, i, w = M.shape
            M = M.transpose(0, 2, 1, 3, 4).reshape(O * o, I_ * i, w)
        return M[:, :, 0]

    def scaled(self, factor: float) -> "MPO":
        tensors = [W.copy() for W in self.tensors]
        tensors[0] = tensors[0] * factor
        return MPO(tensors, dict(self.log))


def _families(terms: TermList):
    """Group two-site terms into coupling matrices per operator pair."""
    n = terms.n_sites
    fam: dict[tuple[str, str], np.ndarray] = {}
    onsite = [np.zeros((2, 2)) for _ in range(n)]
    for t in terms:
        if t.kind in _PAIR_DECOMP:
            i, j = t.sites
            for a, b, w in _PAIR_DECOMP[t.kind]:
                V = fam.setdefault((a, b), np.zeros((n, n)))
                V[i, j] += w * t.coefficient
        else:
            onsite[t.sites[0]] += t.coefficient * OPS[_ONE_SITE_OP[t.kind]]
    if terms.offset != 0.0:
        onsite[0] = onsite[0] + terms.offset * I2
    return fam, onsite


def _factorize(V: np.ndarray, tol: float):
    """Sequential SVD factorization of a strictly-upper coupling matrix.

    Returns per-bond ``(P_k, close_k)`` where ``P_k`` has orthonormal columns
    spanning the kept left space at cut ``k`` and ``close_k = P_k^T V[:k+1, k+1]``.
    """
    n = V.shape[0]
    scale = np.abs(V).max() if V.size else 0.0
    out = []
    for k in range(n - 1):
        M = V[: k + 1, k + 1:]
        if scale == 0.0 or not M.any():
            out.append((np.zeros((k + 1, 0)), np.zeros(0)))
            continue
        U, S, _ = np.linalg.svd(M, full_matrices=False)
        r = int(np.sum(S > tol * scale))
        P = U[:, :r]
        out.append((P, P.T @ M[:, 0]))
    return out


def _represented_couplings(fact, n: int) -> np.ndarray:
    """Coupling matrix actually encoded by a factorization."""
    W = np.zeros((n, n))
    for i in range(n - 1):
        P_i, _ = fact[i]
        vec = P_i[i, :].copy()  # channel amplitudes at bond i
        for j in range(i + 1, n):
            _, close = fact[j - 1]
            W[i, j] = vec @ close if vec.size else 0.0
            if j < n - 1:
                P_prev, _ = fact[j - 1]
                P_next, _ = fact[j]
                T = P_prev.T @ P_next[: j, :]
                vec = vec @ T
    return W


def mpo_from_terms(terms: TermList, tol: float = 1e-12) -> MPO:
    """Build an MPO whose action equals the term sum.

    Args:
        terms: the Hamiltonian.
        tol: singular values of the coupling blocks below ``tol`` times the
            largest coupling are dropped.

    The construction log records the number of terms, per-family channel
    ranks and the achieved maximum coupling error.
    """
    n = terms.n_sites
    fam, onsite = _families(terms)
    keys = sorted(fam)
    facts = {key: _factorize(fam[key], tol) for key in keys}

    # channel layout per bond: [start] + family channels + [done]
    offsets = []
    dims = []
    for k in range(n - 1):
        off = {}
        pos = 1
        for key in keys:
            r = facts[key][k][0].shape[1]
            off[key] = (pos, r)
            pos += r
        offsets.append(off)
        dims.append(pos + 1)

    tensors = []
    for j in range(n):
        wl = 1 if j == 0 else dims[j - 1]
        wr = 1 if j == n - 1 else dims[j]
        W = np.zeros((wl, 2, 2, wr))
        start_l = 0
        done_l = wl - 1
        start_r = 0
        done_r = wr - 1
        if j == 0:
            done_l = None
        if j == n - 1:
            start_r = None
        if start_r is not None:
            W[start_l, :, :, start_r] = I2
        if done_l is not None:
            W[done_l, :, :, done_r] = I2
        W[start_l, :, :, done_r] += onsite[j]
        for key in keys:
            A, B = (OPS[o] for o in key)
            if j < n - 1:
                P_j, _ = facts[key][j]
                p0, r = offsets[j][key]
                # open a new left operator at site j
                for b in range(r):
                    W[start_l, :, :, p0 + b] += P_j[j, b] * A
            if j > 0:
                P_prev, close = facts[key][j - 1]
                q0, rp = offsets[j - 1][key]
                for a in range(rp):
                    W[q0 + a, :, :, done_r] += close[a] * B
                if j < n - 1:
                    P_j, _ = facts[key][j]
                    p0, r = offsets[j][key]
                    T = P_prev.T @ P_j[:j, :]
                    for a in range(rp):
                        for b in range(r):
                            if T[a, b] != 0.0:
                                W[q0 + a, :, :, p0 + b] += T[a, b] * I2
        tensors.append(W)

    tensors = _prune(tensors)
    err = 0.0
    for key in keys:
        rep = _represented_couplings(facts[key], n)
        err = max(err, float(np.abs(rep - np.triu(fam[key], 1)).max()) if n > 1 else 0.0)
    log = {
        "n_terms": len(terms),
        "tol": tol,
        "families": {f"{a}-{b}": [facts[(a, b)][k][0].shape[1] for k in range(n - 1)] for a, b in keys},
        "max_coupling_error": err,
        "bond_dims": [W.shape[3] for W in tensors[:-1]],
    }
    return MPO(tensors, log)


def _prune(tensors):
    """Drop channels unreachable from the left boundary or unable to reach the right one."""
    n = len(tensors)
    nz = [np.abs(W).sum(axis=(1, 2)) > 0 for W in tensors]  # (wl, wr) connectivity
    fwd = [None] * n  # reachable right channels at bond j
    reach = np.ones(1, dtype=bool)
    for j in range(n):
        reach = (nz[j][reach, :]).any(axis=0)
        fwd[j] = reach
    bwd = [None] * n  # left channels at site j that reach the right boundary
    reach = np.ones(1, dtype=bool)
    for j in range(n - 1, -1, -1):
        reach = (nz[j][:, reach]).any(axis=1)
        bwd[j] = reach
    keep = [fwd[j] & bwd[j + 1] for j in range(n - 1)]
    out = []
    for j, W in enumerate(tensors):
        if j > 0:
            W = W[keep[j - 1]]
        if j < n - 1:
            W = W[..., keep[j]]
        out.append(W)
    # an operator that is identically zero still needs a bond
    for j in range(n - 1):
        if out[j].shape[3] == 0:
            out = [np.zeros((1, 2, 2, 1)) for _ in range(n)]
            break
    return out


def identity_mpo(n_sites: int) -> MPO:
    return MPO([I2.reshape(1, 2, 2, 1).copy() for _ in range(n_sites)], {"n_terms": 0})


def total_spin_squared_mpo(n_sites: int) -> MPO:
    """``S_tot^2 = Sz_tot^2 + (S+_tot S-_tot + S-_tot S+_tot)/2``."""
    Sz, Sp, Sm = OPS["Sz"], OPS["Sp"], OPS["Sm"]
    onsite = Sz @ Sz + 0.5 * (Sp @ Sm + Sm @ Sp)
    # channels: start, Sz, Sp, Sm, done
    W = np.zeros((5, 2, 2, 5))
    W[0, :, :, 0] = I2
    W[0, :, :, 1] = Sz
    W[0, :, :, 2] = Sp
    W[0, :, :, 3] = Sm
    W[0, :, :, 4] = onsite
    W[1, :, :, 1] = I2
    W[2, :, :, 2] = I2
    W[3, :, :, 3] = I2
    W[1, :, :, 4] = 2 * Sz
    W[2, :, :, 4] = Sm
    W[3, :, :, 4] = Sp
    W[4, :, :, 4] = I2
    if n_sites == 1:
        return MPO([W[:1, :, :, 4:]], {})
    tensors = [W[:1].copy()] + [W.copy() for _ in range(n_sites - 2)] + [W[..., 4:].copy()]
    return MPO(tensors, {"n_terms": "S_tot^2"})


def sum_mpo(a: MPO, b: MPO) -> MPO:
    """Direct-sum MPO of ``a + b``."""
    n = a.n_sites
    tensors = []
    for j, (Wa, Wb) in enumerate(zip(a.tensors, b.tensors)):
        la, _, _, ra = Wa.shape
        lb, _, _, rb = Wb.shape
        if n == 1:
            tensors.append(Wa + Wb)
        elif j == 0:
            W = np.zeros((1, 2, 2, ra + rb))
            W[..., :ra] = Wa
            W[..., ra:] = Wb
            tensors.append(W)
        elif j == n - 1:
            W = np.zeros((la + lb, 2, 2, 1))
            W[:la] = Wa
            W[la:] = Wb
            tensors.append(W)
        else:
            W = np.zeros((la + lb, 2, 2, ra + rb))
            W[:la, :, :, :ra] = Wa
            W[la:, :, :, ra:] = Wb
            tensors.append(W)
    return MPO(tensors, {"sum_of": [a.log, b.log]})
