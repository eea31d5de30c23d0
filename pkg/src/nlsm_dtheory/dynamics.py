"""Real-time evolution: one-site TDVP with global Krylov basis enrichment.

States evolve under ``exp(-i H t)`` in the spin picture; atom-picture term
lists are converted through the staggered map before building operators.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .model import NN, N, TermList, staggered_map
from .tensor.linalg import lanczos_expm
from .tensor.mpo import MPO, mpo_from_terms
from .tensor.mps import MPS, SZ, truncate
from .tensor.network import (apply_heff0, apply_heff1, apply_mpo, expectation, extend_left,
                             extend_right, extend_right_overlap, left_boundary, right_boundary)

log = logging.getLogger(__name__)


class TdvpError(RuntimeError):
    pass


class Schedule(Protocol):
    duration: float

    def terms_at(self, t: float) -> TermList: ...


@dataclass
class ScheduledHamiltonian:
    """A term list as a function of time on ``[0, duration]``."""

    duration: float
    builder: Callable[[float], TermList]

    def terms_at(self, t: float) -> TermList:
        return self.builder(t)

    @classmethod
    def constant(cls, terms: TermList, duration: float) -> "ScheduledHamiltonian":
        return cls(duration, lambda t: terms)


def discretize_schedule(schedule: Schedule, n_steps: int) -> list[tuple[TermList, float]]:
    """Piecewise-constant segments sampled at their midpoints."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    T = float(schedule.duration)
    if not T > 0:
        raise ValueError("empty schedule")
    dt = T / n_steps
    return [(schedule.terms_at((k + 0.5) * dt), dt) for k in range(n_steps)]


def spin_picture(terms: TermList) -> TermList:
    """Atom-picture terms mapped to spin operators; spin-picture input is returned as is."""
    if any(t.kind in (NN, N) for t in terms):
        return staggered_map(terms.geometry).to_spin_terms(terms)
    return terms


# ---------------------------------------------------------------------------
# TDVP


def _right_envs(psi: MPS, mpo: MPO):
    n = psi.n_sites
    R = [None] * n
    R[n - 1] = right_boundary(psi.dtype)
    for j in range(n - 1, 0, -1):
        R[j - 1] = extend_right(R[j], psi.tensors[j], mpo.tensors[j])
    return R


def _expm_site(L, W, R, A, tau, j, tol):
    try:
        return lanczos_expm(lambda x: apply_heff1(L, W, R, x), A, tau, tol=tol)
    except RuntimeError as exc:
        raise TdvpError(f"local exponential failed at site {j}") from exc


def _expm_bond(L, R, C, tau, j, tol):
    try:
        return lanczos_expm(lambda x: apply_heff0(L, R, x), C, tau, tol=tol)
    except RuntimeError as exc:
        raise TdvpError(f"bond exponential failed right of site {j}") from exc


def tdvp_step(psi: MPS, mpo: MPO, dt: float, max_bond: int | None = None, tol: float = 1e-12) -> MPS:
    """One symmetric second-order one-site TDVP step of length ``dt``.

    The norm is not renormalized, so drift stays observable.

    ``max_bond`` is accepted for interface symmetry; one-site TDVP never
    changes bond dimensions.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = psi.n_sites
    psi = psi.astype(complex)
    psi.canonicalize(0)
    if n == 1:
        H = mpo.tensors[0][0, :, :, 0]
        w, V = np.linalg.eigh(H)
        psi.tensors[0] = (V @ (np.exp(-1j * w * dt) * (V.conj().T @ psi.tensors[0][0, :, 0])))[None, :, None]
        return psi
    tau = -0.5j * dt
    W = mpo.tensors
    R = _right_envs(psi, mpo)
    L = [None] * n
    L[0] = left_boundary(complex)
    T = psi.tensors
    for j in range(n):
        T[j] = _expm_site(L[j], W[j], R[j], T[j], tau, j, tol)
        if j == n - 1:
            break
        Dl, d, Dr = T[j].shape
        Q, C = np.linalg.qr(T[j].reshape(Dl * d, Dr))
        T[j] = Q.reshape(Dl, d, -1)
        L[j + 1] = extend_left(L[j], T[j], W[j])
        C = _expm_bond(L[j + 1], R[j], C, -tau, j, tol)
        T[j + 1] = np.tensordot(C, T[j + 1], axes=(1, 0))
    for j in range(n - 1, -1, -1):
        T[j] = _expm_site(L[j], W[j], R[j], T[j], tau, j, tol)
        if j == 0:
            break
        Dl, d, Dr = T[j].shape
        Q, C = np.linalg.qr(T[j].reshape(Dl, d * Dr).T)
        T[j] = Q.T.reshape(-1, d, Dr)
        C = C.T
        R[j - 1] = extend_right(R[j], T[j], W[j])
        C = _expm_bond(L[j], R[j - 1], C, -tau, j - 1, tol)
        T[j - 1] = np.tensordot(T[j - 1], C, axes=(2, 0))
    psi.center = 0
    return psi


# ---------------------------------------------------------------------------
# global Krylov enrichment


def krylov_vectors(psi: MPS, mpo: MPO, k: int, max_bond: int, tol: float = 1e-12) -> list[MPS]:
    out = []
    phi = psi
    for _ in range(k):
        phi = apply_mpo(mpo, phi, max_bond, tol)
        nrm = phi.norm()
        if nrm < 1e-300:
            break
        phi.tensors[phi.center] = phi.tensors[phi.center] / nrm
        out.append(phi)
    return out


def krylov_expand(psi: MPS, mpo: MPO, k: int = 3, max_bond: int = 550, krylov_bond: int | None = None,
                  tol: float = 1e-12, eig_cut: float = 1e-12) -> MPS:
    """Enlarge the bond bases of ``psi`` with ``span{H psi, ..., H^k psi}``.

    For every bond (right to left) the reduced density matrix of the Krylov
    vectors, projected onto the complement of the existing right basis, adds
    its leading eigenvectors as new basis states with zero amplitude.  The
    represented vector is unchanged; bonds are capped at ``max_bond``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    psi = psi.copy()
    psi.canonicalize(0)
    if k == 0:
        return psi
    n = psi.n_sites
    phis = krylov_vectors(psi, mpo, k, krylov_bond or max_bond, tol)
    if not phis or n == 1:
        return psi
    dtype = np.result_type(psi.dtype, *[p.dtype for p in phis])
    psi = psi.astype(dtype)
    for p in phis:
        p.canonicalize(n - 1)
    O = [np.ones((1, 1), dtype=dtype) for _ in phis]  # (phi, psi) right overlaps
    T = psi.tensors
    n_added = 0
    for b in range(n - 1, 0, -1):
        B = T[b]
        Dl, d, Dr = B.shape
        rho = np.zeros((d * Dr, d * Dr), dtype=dtype)
        for p, Ok in zip(phis, O):
            M = np.tensordot(p.tensors[b], Ok, axes=(2, 0)).reshape(p.tensors[b].shape[0], d * Dr)
            rho += M.T @ M.conj()
        scale = float(np.real(np.trace(rho)))
        Bm = B.reshape(Dl, d * Dr)
        proj = np.eye(d * Dr, dtype=dtype) - Bm.T @ Bm.conj()
        rho = proj @ rho @ proj.conj().T
        room = min(max_bond, d * Dr, 2 ** min(b, 60)) - Dl
        if room > 0:
            w, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
            order = np.argsort(w)[::-1]
            w, V = w[order], V[:, order]
            m = int(np.sum(w[:room] > eig_cut * scale)) if scale > 0 else 0
            if m > 0:
                # new rows must be orthonormal to Bm; re-project for stability
                E = V[:, :m].T
                E = E - (E @ Bm.conj().T) @ Bm
                q, _ = np.linalg.qr(E.T)
                Bm = np.vstack([Bm, q.T])
                T[b] = Bm.reshape(Dl + m, d, Dr)
                A = T[b - 1]
                T[b - 1] = np.concatenate([A, np.zeros(A.shape[:2] + (m,), dtype=dtype)], axis=2)
                n_added += m
        for i, p in enumerate(phis):
            p.canonicalize(b - 1)
            O[i] = extend_right_overlap(O[i], p.tensors[b], T[b])
    psi.center = 0
    log.debug("krylov_expand added %d basis states", n_added)
    return psi


# ---------------------------------------------------------------------------
# schedule evolution


@dataclass
class Trajectory:
    state: MPS
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("step", "time", "energy", "norm", "max_bond", "truncation_error", "staggered_magnetization",
               "entropy")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c])) for c in self.COLUMNS])
        return buf.getvalue()


def staggered_magnetization(psi: MPS, signs: np.ndarray) -> float:
    phi = psi.copy()
    return float(sum(s * phi.local_expectation(i, SZ) for i, s in enumerate(signs)))


def evolve_schedule(psi: MPS, schedule: Schedule, n_steps: int = 200, max_bond: int = 550, krylov_k: int = 3,
                    krylov_bond: int | None = None, mpo_tol: float = 1e-10, expand: bool = True,
                    tol: float = 1e-12) -> Trajectory:
    """Evolve through the discretized schedule, enlarging the basis before every step."""
    segs = discretize_schedule(schedule, n_steps)
    geom = segs[0][0].geometry
    signs = geom.parities().astype(float)
    mid = max(0, psi.n_sites // 2 - 1)
    state = psi.astype(complex)
    state.canonicalize(0)
    state.normalize()
    traj = Trajectory(state)
    t = 0.0
    trunc = 0.0
    for step, (terms, dt) in enumerate(segs):
        mpo = mpo_from_terms(spin_picture(terms), mpo_tol)
        if expand and krylov_k > 0 and state.max_bond() < max_bond:
            state = krylov_expand(state, mpo, krylov_k, max_bond, krylov_bond, tol)
        if state.max_bond() > max_bond:
            state, disc = truncate(state, max_bond)
            trunc += disc
            log.info("step %d: truncated to bond %d (discarded %.2e)", step, max_bond, disc)
        state = tdvp_step(state, mpo, dt, max_bond, tol)
        t += dt
        traj.rows.append({
            "step": step,
            "time": t,
            "energy": expectation(state, mpo),
            "norm": state.norm(),
            "max_bond": state.max_bond(),
            "truncation_error": trunc,
            "staggered_magnetization": staggered_magnetization(state, signs),
            "entropy": state.entanglement_entropy(mid),
        })
    traj.state = state
    return traj
