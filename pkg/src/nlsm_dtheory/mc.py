"""Classical Monte Carlo for the lattice O(3) sigma model.

    S_lat = -beta sum_<ij> phi_i . phi_j,    beta = 1/g

on an ``Lt x Lx`` lattice, open in x and (by default) periodic in t.  The
renormalized coupling is measured from equal-time correlators

    G_{x1,x2} = < phi(x1, t) . phi(x2, t) >

averaged over time slices and configurations, then fed to the same
eigenvalue formula as the quantum pipeline.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from .observables import (CouplingResult, DegenerateSpectrumError, ReferenceCurve, StepScalingPoint,
                          _gbar_from_eigs)

RENORM_EVERY = 64


class ThermalizationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _seed(s):
    np.random.seed(s)


@numba.njit(cache=True)
def _random_unit():
    while True:
        a = 2.0 * np.random.random() - 1.0
        b = 2.0 * np.random.random() - 1.0
        c = 2.0 * np.random.random() - 1.0
        r2 = a * a + b * b + c * c
        if 1e-12 < r2 <= 1.0:
            r = math.sqrt(r2)
            return a / r, b / r, c / r


@numba.njit(cache=True)
def _neighbors(t, x, Lt, Lx, periodic_t, out):
    k = 0
    if x > 0:
        out[k, 0] = t
        out[k, 1] = x - 1
        k += 1
    if x < Lx - 1:
        out[k, 0] = t
        out[k, 1] = x + 1
        k += 1
    if t > 0:
        out[k, 0] = t - 1
        out[k, 1] = x
        k += 1
    elif periodic_t and Lt > 2:
        out[k, 0] = Lt - 1
        out[k, 1] = x
        k += 1
    if t < Lt - 1:
        out[k, 0] = t + 1
        out[k, 1] = x
        k += 1
    elif periodic_t and Lt > 2:
        out[k, 0] = 0
        out[k, 1] = x
        k += 1
    return k


@numba.njit(cache=True)
def _wolff_cluster(phi, beta, periodic_t, r0, r1, r2, t0, x0):
    Lt, Lx = phi.shape[0], phi.shape[1]
    inc = np.zeros((Lt, Lx), dtype=np.bool_)
    stack = np.empty((Lt * Lx, 2), dtype=np.int64)
    nb = np.empty((4, 2), dtype=np.int64)
    stack[0, 0] = t0
    stack[0, 1] = x0
    top = 1
    inc[t0, x0] = True
    size = 0
    while top > 0:
        top -= 1
        t = stack[top, 0]
        x = stack[top, 1]
        pi = phi[t, x, 0] * r0 + phi[t, x, 1] * r1 + phi[t, x, 2] * r2
        # reflect after reading the projection used for the bond weights
        phi[t, x, 0] -= 2.0 * pi * r0
        phi[t, x, 1] -= 2.0 * pi * r1
        phi[t, x, 2] -= 2.0 * pi * r2
        size += 1
        k = _neighbors(t, x, Lt, Lx, periodic_t, nb)
        for m in range(k):
            tn = nb[m, 0]
            xn = nb[m, 1]
            if inc[tn, xn]:
                continue
            pj = phi[tn, xn, 0] * r0 + phi[tn, xn, 1] * r1 + phi[tn, xn, 2] * r2
            arg = 2.0 * beta * pi * pj
            if arg > 0.0 and np.random.random() < 1.0 - math.exp(-arg):
                inc[tn, xn] = True
                stack[top, 0] = tn
                stack[top, 1] = xn
                top += 1
    return size


@numba.njit(cache=True)
def _renormalize(phi):
    Lt, Lx = phi.shape[0], phi.shape[1]
    for t in range(Lt):
        for x in range(Lx):
            n = math.sqrt(phi[t, x, 0] ** 2 + phi[t, x, 1] ** 2 + phi[t, x, 2] ** 2)
            for c in range(3):
                phi[t, x, c] /= n


@numba.njit(cache=True)
def _wolff_sweeps(phi, beta, periodic_t, n_updates, renorm_every):
    Lt, Lx = phi.shape[0], phi.shape[1]
    total = 0
    for k in range(n_updates):
        r0, r1, r2 = _random_unit()
        t0 = np.random.randint(0, Lt)
        x0 = np.random.randint(0, Lx)
        total += _wolff_cluster(phi, beta, periodic_t, r0, r1, r2, t0, x0)
        if (k + 1) % renorm_every == 0:
            _renormalize(phi)
    return total


@numba.njit(cache=True)
def _metropolis_sweeps(phi, beta, periodic_t, n_sweeps, width):
    Lt, Lx = phi.shape[0], phi.shape[1]
    nb = np.empty((4, 2), dtype=np.int64)
    accepted = 0
    for _ in range(n_sweeps):
        for t in range(Lt):
            for x in range(Lx):
                h0 = 0.0
                h1 = 0.0
                h2 = 0.0
                k = _neighbors(t, x, Lt, Lx, periodic_t, nb)
                for m in range(k):
                    h0 += phi[nb[m, 0], nb[m, 1], 0]
                    h1 += phi[nb[m, 0], nb[m, 1], 1]
                    h2 += phi[nb[m, 0], nb[m, 1], 2]
                # isotropic Gaussian kick: the proposal depends only on the angle
                a = phi[t, x, 0] + width * np.random.standard_normal()
                b = phi[t, x, 1] + width * np.random.standard_normal()
                c = phi[t, x, 2] + width * np.random.standard_normal()
                n = math.sqrt(a * a + b * b + c * c)
                a /= n
                b /= n
                c /= n
                dS = -beta * ((a - phi[t, x, 0]) * h0 + (b - phi[t, x, 1]) * h1 + (c - phi[t, x, 2]) * h2)
                if dS <= 0.0 or np.random.random() < math.exp(-dS):
                    phi[t, x, 0] = a
                    phi[t, x, 1] = b
                    phi[t, x, 2] = c
                    accepted += 1
    return accepted


@numba.njit(cache=True)
def _link_sum(phi, periodic_t):
    Lt, Lx = phi.shape[0], phi.shape[1]
    s = 0.0
    for t in range(Lt):
        for x in range(Lx):
            if x + 1 < Lx:
                s += phi[t, x, 0] * phi[t, x + 1, 0] + phi[t, x, 1] * phi[t, x + 1, 1] + phi[t, x, 2] * phi[t, x + 1, 2]
            if t + 1 < Lt or (periodic_t and Lt > 2):
                u = (t + 1) % Lt
                s += phi[t, x, 0] * phi[u, x, 0] + phi[t, x, 1] * phi[u, x, 1] + phi[t, x, 2] * phi[u, x, 2]
    return s


# ---------------------------------------------------------------------------
# field


@dataclass
class SpinField:
    """Unit 3-vectors ``phi[t, x]``; ``beta = 1/g``."""

    phi: np.ndarray
    beta: float
    periodic_t: bool = True
    last_cluster: int = 0

    def __post_init__(self):
        self.phi = np.ascontiguousarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 3 or self.phi.shape[2] != 3:
            raise ValueError("phi must have shape (Lt, Lx, 3)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        norms = np.linalg.norm(self.phi, axis=2)
        if np.abs(norms - 1.0).max() > 1e-12:
            raise ValueError("field vectors must be unit length")

    @classmethod
    def aligned(cls, Lt: int, Lx: int, beta: float, periodic_t: bool = True, axis=(0.0, 0.0, 1.0)):
        a = np.asarray(axis, float) / np.linalg.norm(axis)
        return cls(np.broadcast_to(a, (Lt, Lx, 3)).copy(), beta, periodic_t)

    @classmethod
    def random(cls, Lt: int, Lx: int, beta: float, rng: np.random.Generator, periodic_t: bool = True):
        v = rng.standard_normal((Lt, Lx, 3))
        return cls(v / np.linalg.norm(v, axis=2, keepdims=True), beta, periodic_t)

    @property
    def Lt(self) -> int:
        return self.phi.shape[0]

    @property
    def Lx(self) -> int:
        return self.phi.shape[1]

    @property
    def n_links(self) -> int:
        Lt, Lx = self.Lt, self.Lx
        t_links = Lt * Lx if (self.periodic_t and Lt > 2) else (Lt - 1) * Lx
        return Lt * (Lx - 1) + t_links

    def link_sum(self) -> float:
        return float(_link_sum(self.phi, self.periodic_t))

    def action(self) -> float:
        return -self.beta * self.link_sum()

    def energy_density(self) -> float:
        """``-<phi_i . phi_j>`` per link."""
        return -self.link_sum() / self.n_links

    def slice_correlator(self) -> np.ndarray:
        """``C[x1, x2] = mean_t phi(x1, t) . phi(x2, t)``."""
        return np.einsum("tac,tbc->ab", self.phi, self.phi) / self.Lt

    def max_norm_error(self) -> float:
        return float(np.abs(np.linalg.norm(self.phi, axis=2) - 1.0).max())


def _seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def wolff_update(field: SpinField, rng: np.random.Generator, axis=None, site=None) -> SpinField:
    """One embedded-cluster reflection; the cluster size is kept in ``field.last_cluster``."""
    _seed(_seed_from(rng))
    if axis is None:
        v = rng.standard_normal(3)
        axis = v / np.linalg.norm(v)
    r = np.asarray(axis, float) / np.linalg.norm(axis)
    t0, x0 = site if site is not None else (int(rng.integers(field.Lt)), int(rng.integers(field.Lx)))
    field.last_cluster = int(_wolff_cluster(field.phi, field.beta, field.periodic_t, r[0], r[1], r[2], t0, x0))
    _renormalize(field.phi)
    return field


def wolff_sweeps(field: SpinField, rng: np.random.Generator, n_updates: int) -> float:
    """``n_updates`` cluster updates; returns the mean cluster size."""
    _seed(_seed_from(rng))
    total = _wolff_sweeps(field.phi, field.beta, field.periodic_t, int(n_updates), RENORM_EVERY)
    _renormalize(field.phi)
    return total / max(n_updates, 1)


def metropolis_sweeps(field: SpinField, rng: np.random.Generator, n_sweeps: int, width: float = 0.6) -> float:
    """Single-site Metropolis sweeps; returns the acceptance rate."""
    _seed(_seed_from(rng))
    acc = _metropolis_sweeps(field.phi, field.beta, field.periodic_t, int(n_sweeps), float(width))
    _renormalize(field.phi)
    return acc / max(n_sweeps * field.Lt * field.Lx, 1)


def bond_probability(beta: float, pi: float, pj: float) -> float:
    """Probability that the bond joins the cluster, projections taken before the flip."""
    arg = 2.0 * beta * pi * pj
    return 1.0 - math.exp(-arg) if arg > 0 else 0.0


def cluster_transition_ratio(field: SpinField, axis, cluster) -> tuple[float, float]:
    """``P(C -> C') / P(C' -> C)`` over boundary bonds, and ``exp(-(S' - S))``.

    ``cluster`` is a set of ``(t, x)`` sites flipped together.  Interior
    bonds contribute identical factors in both directions and cancel.
    """
    r = np.asarray(axis, float) / np.linalg.norm(axis)
    phi = field.phi
    proj = phi @ r
    inside = set(cluster)
    nb = np.empty((4, 2), dtype=np.int64)
    fwd = rev = 1.0
    for (t, x) in inside:
        k = _neighbors(t, x, field.Lt, field.Lx, field.periodic_t, nb)
        for m in range(k):
            j = (int(nb[m, 0]), int(nb[m, 1]))
            if j in inside:
                continue
            fwd *= 1.0 - bond_probability(field.beta, proj[t, x], proj[j])
            rev *= 1.0 - bond_probability(field.beta, -proj[t, x], proj[j])
    flipped = phi.copy()
    for (t, x) in inside:
        flipped[t, x] -= 2.0 * proj[t, x] * r
    S0 = field.action()
    S1 = -field.beta * _link_sum(flipped, field.periodic_t)
    return fwd / rev, math.exp(-(S1 - S0))


# ---------------------------------------------------------------------------
# ensembles and error analysis


@dataclass
class McConfig:
    n_therm: int = 200
    n_meas: int = 2000
    updates_per_meas: int = 0  # 0: enough clusters to cover the lattice once on average
    algorithm: str = "wolff"
    lt_factor: int = 8
    periodic_t: bool = True
    n_blocks: int = 20
    metropolis_width: float = 0.6
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ("wolff", "metropolis"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.n_blocks < 2 or self.n_meas < self.n_blocks:
            raise ValueError("need at least two blocks and one measurement per block")


@dataclass
class Ensemble:
    Lx: int
    Lt: int
    beta: float
    correlators: np.ndarray  # (n_meas, Lx, Lx)
    energies: np.ndarray  # per-link energy density
    mean_cluster: float | None
    config: McConfig
    seed: int
    extra: dict = field(default_factory=dict)


def run_chain(Lx: int, beta: float, config: McConfig | None = None, seed: int | None = None,
              Lt: int | None = None) -> Ensemble:
    config = config or McConfig()
    seed = config.seed if seed is None else seed
    Lt = config.lt_factor * Lx if Lt is None else Lt
    rng = np.random.default_rng([seed, Lx, Lt])
    f = SpinField.random(Lt, Lx, beta, rng, config.periodic_t)
    if config.algorithm == "wolff":
        sizes = []

        def step(n):
            sizes.append(wolff_sweeps(f, rng, n))

        n_up = config.updates_per_meas
        if n_up <= 0:
            f2 = SpinField.random(Lt, Lx, beta, np.random.default_rng([seed, 1]), config.periodic_t)
            wolff_sweeps(f2, rng, 50)
            probe = wolff_sweeps(f2, rng, 50)
            n_up = max(1, int(math.ceil(Lt * Lx / max(probe, 1.0))))
        for _ in range(config.n_therm):
            step(n_up)
        sizes.clear()
    else:
        n_up = max(config.updates_per_meas, 1)

        def step(n):
            metropolis_sweeps(f, rng, n, config.metropolis_width)

        for _ in range(config.n_therm):
            step(n_up)
    C = np.empty((config.n_meas, Lx, Lx))
    E = np.empty(config.n_meas)
    for k in range(config.n_meas):
        step(n_up)
        C[k] = f.slice_correlator()
        E[k] = f.energy_density()
    mean_cluster = float(np.mean(sizes)) if config.algorithm == "wolff" else None
    return Ensemble(Lx, Lt, beta, C, E, mean_cluster, config, seed, {"updates_per_meas": n_up})


def integrated_autocorrelation(x: np.ndarray, c: float = 6.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window."""
    x = np.asarray(x, float) - np.mean(x)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 0.5
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return max(tau, 0.5)


def blocked_mean_error(x: np.ndarray, n_blocks: int = 20) -> tuple[float, float]:
    x = np.asarray(x, float)
    nb = len(x) // n_blocks
    blocks = x[: nb * n_blocks].reshape(n_blocks, nb, *x.shape[1:]).mean(axis=1)
    return float(np.mean(x)), float(np.std(blocks, ddof=1) / math.sqrt(n_blocks))


def _gbar(C: np.ndarray, Lx: int) -> tuple[float, float, float]:
    ev = np.sort(np.linalg.eigvalsh(0.5 * (C + C.T)))[::-1]
    return _gbar_from_eigs(float(ev[0]), float(ev[1]), Lx), float(ev[0]), float(ev[1])


def mc_coupling(ensemble: Ensemble, Lx: int | None = None, check_tau: bool = True) -> CouplingResult:
    """Eigenvalue coupling from the slice-averaged correlators, jackknife over blocks."""
    Lx = ensemble.Lx if Lx is None else Lx
    if Lx != ensemble.Lx:
        raise ValueError(f"ensemble has Lx={ensemble.Lx}, not {Lx}")
    C = ensemble.correlators
    nb = ensemble.config.n_blocks
    block_len = len(C) // nb
    if check_tau:
        tau = integrated_autocorrelation(np.trace(C, axis1=1, axis2=2) + C.sum(axis=(1, 2)))
        if 2.0 * tau > block_len:
            raise ThermalizationError(f"tau_int={tau:.1f} exceeds half the block length {block_len}")
    blocks = C[: nb * block_len].reshape(nb, block_len, Lx, Lx).mean(axis=1)
    total = blocks.sum(axis=0)
    gbar, G0, G1 = _gbar(total / nb, Lx)
    jk = []
    n_deg = 0
    for b in range(nb):
        try:
            jk.append(_gbar((total - blocks[b]) / (nb - 1), Lx)[0])
        except DegenerateSpectrumError:
            n_deg += 1
    jk = np.array(jk)
    err = math.sqrt((len(jk) - 1) / len(jk) * np.sum((jk - jk.mean()) ** 2)) if len(jk) > 1 else math.nan
    return CouplingResult(gbar, G0, G1, Lx, err, n_deg, {"beta": ensemble.beta}, "mc", ensemble.seed)


def _chain_task(args):
    Lx, beta, config, seed = args
    return run_chain(Lx, beta, config, seed)


def mc_step_scaling(g_bare: float, Lx: int, s, config: McConfig | None = None) -> StepScalingPoint:
    """Paired chains at ``Lx`` and ``s Lx`` with the same bare coupling ``g = 1/beta``."""
    config = config or McConfig()
    s = Fraction(s)
    sL = s * Lx
    if sL.denominator != 1:
        raise ValueError(f"s*Lx = {sL} is not an integer")
    beta = 1.0 / g_bare
    tasks = [(Lx, beta, config, config.seed), (int(sL), beta, config, config.seed + 1)]
    if config.workers > 1:
        with ProcessPoolExecutor(min(config.workers, 2)) as ex:
            ens = list(ex.map(_chain_task, tasks))
    else:
        ens = [_chain_task(t) for t in tasks]
    small, large = (mc_coupling(e) for e in ens)
    z = small.gbar
    F = float(s) * large.gbar / z
    rel = math.hypot(small.stat_error / small.gbar, large.stat_error / large.gbar)
    return StepScalingPoint(z, F, s, Lx, int(sL), None, None, small.stat_error, F * rel, "mc", config.seed,
                            {"beta": beta})


def reference_curve(points) -> ReferenceCurve:
    """Monotone piecewise-cubic fit through ``(z, F)`` points."""
    pts = sorted(points, key=lambda p: p.z)
    return ReferenceCurve(np.array([p.z for p in pts]), np.array([p.F for p in pts]))


def reference_table(g_bares, Lx: int, s, config: McConfig | None = None) -> list[StepScalingPoint]:
    config = config or McConfig()
    return [mc_step_scaling(g, Lx, s, McConfig(**{**config.__dict__, "seed": config.seed + 1000 * k}))
            for k, g in enumerate(g_bares)]
