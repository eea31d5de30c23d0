"""Two-site DMRG for ground and first excited states."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor.linalg import lowest_eigenpair, svd, truncation_rank
from .tensor.mpo import MPO, total_spin_squared_mpo
from .tensor.mps import MPS
from .tensor.network import (apply_heff2, expectation, extend_left, extend_left_overlap, extend_right,
                             extend_right_overlap, left_boundary, right_boundary)

log = logging.getLogger(__name__)


class DmrgError(RuntimeError):
    pass


class PenaltyTooSmall(DmrgError):
    pass


@dataclass
class DmrgConfig:
    """Sweep schedule.  The last entry of each schedule repeats."""

    max_sweeps: int = 30
    bond_schedule: tuple[int, ...] = (16, 32, 64, 128, 256)
    trunc_tol: float = 1e-12
    energy_tol: float = 1e-9
    noise_schedule: tuple[float, ...] = (1e-4, 1e-5, 1e-7, 0.0)
    eig_tol: float = 1e-12
    min_sweeps: int = 4
    krylov_dim: int = 6
    early_restarts: int = 1
    final_restarts: int = 20

    def __post_init__(self):
        if not self.bond_schedule or not self.noise_schedule:
            raise ValueError("schedules must be non-empty")
        if self.trunc_tol <= 0 or self.energy_tol <= 0:
            raise ValueError("tolerances must be positive")

    def bond(self, sweep: int) -> int:
        return self.bond_schedule[min(sweep, len(self.bond_schedule) - 1)]

    def noise(self, sweep: int) -> float:
        return self.noise_schedule[min(sweep, len(self.noise_schedule) - 1)]

    def schedule_done(self, sweep: int) -> bool:
        return sweep >= len(self.bond_schedule) - 1 and sweep >= len(self.noise_schedule) - 1


@dataclass
class DmrgResult:
    state: MPS
    energy: float
    converged: bool
    log: list[dict] = field(default_factory=list)
    monotone: bool = True

    def log_csv(self) -> str:
        return convergence_csv(self.log)


@dataclass
class GapResult:
    E0: float
    E1: float
    gap: float
    ground: DmrgResult
    excited: DmrgResult
    excited_total_spin: float = float("nan")
    degenerate_multiplet: bool = False


def convergence_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep", "energy", "max_bond", "discarded_weight"])
    for r in rows:
        w.writerow([r["sweep"], repr(r["energy"]), r["max_bond"], repr(r["discarded_weight"])])
    return buf.getvalue()


def neel_initial_state(n_sites: int) -> MPS:
    """Alternating product state; the snake ordering makes chain neighbors lattice neighbors."""
    return MPS.product_state([i % 2 for i in range(n_sites)])


class _Sweeper:
    """Holds environments for one two-site DMRG run."""

    def __init__(self, mpo: MPO, psi: MPS, config: DmrgConfig, projectors=(), penalty: float = 0.0):
        self.mpo = mpo
        self.psi = psi
        self.cfg = config
        self.projectors = list(projectors)
        self.penalty = penalty
        self.restarts = config.early_restarts
        n = psi.n_sites
        psi.canonicalize(0)
        psi.normalize()
        self.L = [None] * n
        self.R = [None] * n
        self.L[0] = left_boundary()
        self.R[n - 1] = right_boundary()
        for j in range(n - 1, 0, -1):
            self.R[j - 1] = extend_right(self.R[j], psi.tensors[j], mpo.tensors[j])
        self.OL = [[None] * n for _ in self.projectors]
        self.OR = [[None] * n for _ in self.projectors]
        for k, phi in enumerate(self.projectors):
            self.OL[k][0] = np.ones((1, 1))
            self.OR[k][n - 1] = np.ones((1, 1))
            for j in range(n - 1, 0, -1):
                self.OR[k][j - 1] = extend_right_overlap(self.OR[k][j], phi.tensors[j], psi.tensors[j])

    def _local_projections(self, j):
        out = []
        for k, phi in enumerate(self.projectors):
            T = np.tensordot(self.OL[k][j], phi.tensors[j], axes=(0, 0))
            T = np.tensordot(T, phi.tensors[j + 1], axes=(2, 0))
            out.append(np.tensordot(T, self.OR[k][j + 1], axes=(3, 0)))
        return out

    def _solve(self, j, theta):
        L, R = self.L[j], self.R[j + 1]
        W1, W2 = self.mpo.tensors[j], self.mpo.tensors[j + 1]
        shape = theta.shape
        projs = self._local_projections(j)
        w = self.penalty

        def mv(x):
            x = x.reshape(shape)
            y = apply_heff2(L, W1, W2, R, x)
            for c in projs:
                y = y + w * c * np.vdot(c, x)
            return y.reshape(-1)

        return lowest_eigenpair(mv, theta, tol=self.cfg.eig_tol, max_krylov=self.cfg.krylov_dim,
                                max_restarts=self.restarts)

    def _split(self, j, theta, direction, max_bond, noise):
        Dl, d1, d2, Dr = theta.shape
        M = theta.reshape(Dl * d1, d2 * Dr)
        if noise > 0:
            # density-matrix perturbation with the operator applied on the kept side
            if direction == "right":
                P = np.tensordot(self.L[j], theta, axes=(0, 0))  # (w, v, s1, s2, b)
                P = np.tensordot(P, self.mpo.tensors[j], axes=([0, 2], [0, 2]))  # (v, s2, b, t1, w1)
                P = P.transpose(0, 3, 4, 1, 2).reshape(Dl * d1, -1)
                rho = M @ M.conj().T
            else:
                P = np.tensordot(theta, self.R[j + 1], axes=(3, 0))  # (u, s1, s2, w, v)
                P = np.tensordot(P, self.mpo.tensors[j + 1], axes=([2, 3], [2, 3]))  # (u, s1, v, w, t2)
                P = P.transpose(4, 2, 0, 1, 3).reshape(d2 * Dr, -1)
                rho = M.T @ M.conj()
            pn = np.linalg.norm(P)
            if pn > 0:
                rho = rho + (noise / pn**2) * (P @ P.conj().T)
            evals, evecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
            order = np.argsort(evals)[::-1]
            evals = np.clip(evals[order], 0, None)
            evecs = evecs[:, order]
            k = truncation_rank(np.sqrt(evals), min(max_bond, Dl * d1, d2 * Dr), self.cfg.trunc_tol)
            U = evecs[:, :k]
            if direction == "right":
                rest = U.conj().T @ M
                disc = max(0.0, 1.0 - float(np.linalg.norm(rest) ** 2) / float(np.linalg.norm(M) ** 2))
                return U.reshape(Dl, d1, k), rest.reshape(k, d2, Dr), disc
            rest = M @ U.conj()
            disc = max(0.0, 1.0 - float(np.linalg.norm(rest) ** 2) / float(np.linalg.norm(M) ** 2))
            return rest.reshape(Dl, d1, k), U.T.reshape(k, d2, Dr), disc
        U, S, Vh = svd(M)
        k = truncation_rank(S, max_bond, self.cfg.trunc_tol)
        total = float(np.sum(S**2))
        disc = float(np.sum(S[k:] ** 2)) / total if total > 0 else 0.0
        U, S, Vh = U[:, :k], S[:k] / np.linalg.norm(S[:k]), Vh[:k]
        if direction == "right":
            return U.reshape(Dl, d1, k), (S[:, None] * Vh).reshape(k, d2, Dr), disc
        return (U * S[None, :]).reshape(Dl, d1, k), Vh.reshape(k, d2, Dr), disc

    def sweep(self, max_bond: int, noise: float):
        psi = self.psi
        n = psi.n_sites
        energy = np.inf
        max_disc = 0.0
        if n == 1:
            raise DmrgError("two-site DMRG needs at least two sites")
        # left to right
        for j in range(n - 1):
            theta = np.tensordot(psi.tensors[j], psi.tensors[j + 1], axes=(2, 0))
            energy, theta = self._solve(j, theta)
            A, B, disc = self._split(j, theta, "right", max_bond, noise)
            B = B / np.linalg.norm(B)
            psi.tensors[j], psi.tensors[j + 1] = A, B
            max_disc = max(max_disc, disc)
            psi.trunc_error += disc
            self.L[j + 1] = extend_left(self.L[j], A, self.mpo.tensors[j])
            for k, phi in enumerate(self.projectors):
                self.OL[k][j + 1] = extend_left_overlap(self.OL[k][j], phi.tensors[j], A)
        # right to left
        for j in range(n - 2, -1, -1):
            theta = np.tensordot(psi.tensors[j], psi.tensors[j + 1], axes=(2, 0))
            energy, theta = self._solve(j, theta)
            A, B, disc = self._split(j, theta, "left", max_bond, noise)
            A = A / np.linalg.norm(A)
            psi.tensors[j], psi.tensors[j + 1] = A, B
            max_disc = max(max_disc, disc)
            psi.trunc_error += disc
            self.R[j] = extend_right(self.R[j + 1], B, self.mpo.tensors[j + 1])
            for k, phi in enumerate(self.projectors):
                self.OR[k][j] = extend_right_overlap(self.OR[k][j + 1], phi.tensors[j + 1], B)
        psi.center = 0
        return energy, max_disc


def _run(mpo: MPO, config: DmrgConfig, psi: MPS, projectors=(), penalty=0.0, label="dmrg") -> DmrgResult:
    if psi.n_sites != mpo.n_sites:
        raise ValueError("initial state does not match operator")
    sw = _Sweeper(mpo, psi.copy(), config, projectors, penalty)
    rows = []
    prev = np.inf
    converged = False
    monotone = True
    for s in range(config.max_sweeps):
        sw.restarts = config.final_restarts if config.schedule_done(s) else config.early_restarts
        e, disc = sw.sweep(config.bond(s), config.noise(s))
        rows.append({"sweep": s, "energy": e, "max_bond": sw.psi.max_bond(), "discarded_weight": disc})
        log.debug("%s sweep %d E=%.12f D=%d disc=%.2e", label, s, e, sw.psi.max_bond(), disc)
        if (s > 0 and e > prev + 1e-9 * max(1.0, abs(prev)) and config.noise(s) == 0
                and config.noise(s - 1) == 0 and config.bond(s) == config.bond(s - 1)):
            monotone = False
        if (s + 1 >= config.min_sweeps and config.schedule_done(s)
                and abs(e - prev) <= config.energy_tol * max(1.0, abs(e))):
            converged = True
            prev = e
            break
        prev = e
    state = sw.psi
    state.normalize()
    return DmrgResult(state, prev, converged, rows, monotone)


def dmrg_ground(mpo: MPO, config: DmrgConfig | None = None, initial_state: MPS | None = None) -> DmrgResult:
    """Variational ground state.

    The returned state is right-canonical (center 0).  ``converged`` is False
    when the energy did not settle within ``config.max_sweeps``.
    """
    config = config or DmrgConfig()
    psi = initial_state if initial_state is not None else neel_initial_state(mpo.n_sites)
    res = _run(mpo, config, psi, label="ground")
    res.energy = expectation(res.state, mpo)
    return res


def dmrg_excited(mpo: MPO, config: DmrgConfig | None, ground: MPS, ground_energy: float | None = None,
                 weight: float | None = None, seed: int = 7, initial_state: MPS | None = None) -> DmrgResult:
    """Lowest state orthogonal to ``ground`` via ``H + w|0><0|``.

    The default weight is ``10 |E0|``.  Raises :class:`PenaltyTooSmall` when the
    result keeps an overlap above 1e-4 with the ground state.
    """
    config = config or DmrgConfig()
    if ground_energy is None:
        ground_energy = expectation(ground, mpo)
    w = weight if weight is not None else 10.0 * abs(ground_energy)
    if w <= 0:
        raise DmrgError("penalty weight must be positive")
    g = ground.copy().normalize()
    if initial_state is None:
        initial_state = MPS.random(mpo.n_sites, 8, np.random.default_rng(seed))
    res = _run(mpo, config, initial_state, projectors=[g], penalty=w, label="excited")
    ov = abs(g.overlap(res.state))
    if ov > 1e-4:
        raise PenaltyTooSmall(f"excited state overlaps the ground state by {ov:.2e} (penalty {w:.3e})")
    res.energy = expectation(res.state, mpo)
    return res


def energy_gap(mpo: MPO, config: DmrgConfig | None = None, initial_state: MPS | None = None,
               excited_config: DmrgConfig | None = None) -> GapResult:
    g = dmrg_ground(mpo, config, initial_state)
    e = dmrg_excited(mpo, excited_config or config, g.state, g.energy)
    s2 = expectation(e.state, total_spin_squared_mpo(mpo.n_sites))
    # S(S+1) >= 2 signals a member of a (2S+1)-fold multiplet
    return GapResult(g.energy, e.energy, e.energy - g.energy, g, e, s2, bool(s2 > 1.0))
