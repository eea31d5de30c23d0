"""Correlation matrix, renormalized coupling, step scaling and shot statistics.

The renormalized coupling on an ``Lx`` column lattice is

    gbar(L) = 1/2 * sqrt((G0/G1 - 1) / (L sin(pi / 2L)))

with ``G0 >= G1`` the two largest eigenvalues of the staggered column
correlation matrix ``G[x1, x2] = sum_{y1, y2} (-1)^(x1+y1+x2+y2) <Sz Sz>``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .model import LatticeGeometry

B0 = 1.0 / (2.0 * math.pi)
B1 = 1.0 / (4.0 * math.pi**2)
PERTURBATIVE_Z_MIN = 0.45
DEGENERATE_REL_GAP = 1e-8


class DegenerateSpectrumError(ValueError):
    """Raised when ``G1 <= 0`` or ``G0`` and ``G1`` cannot be separated."""


class BareParameterMismatch(ValueError):
    pass


@dataclass
class CorrelationMatrix:
    G: np.ndarray
    source: str = "exact"
    n_shots: int | None = None
    seed: int | None = None

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("G must be square")
        scale = max(1.0, float(np.abs(G).max()))
        if self.source == "exact":
            if np.abs(G - G.T).max() > 1e-12 * scale:
                raise ValueError("exact correlation matrix is not symmetric")
        G = 0.5 * (G + G.T)
        self.G = G

    @property
    def Lx(self) -> int:
        return self.G.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Descending eigenvalues."""
        return np.linalg.eigvalsh(self.G)[::-1]


@dataclass
class CouplingResult:
    gbar: float
    G0: float
    G1: float
    Lx: int
    stat_error: float = 0.0
    n_degenerate: int = 0
    bare: dict = field(default_factory=dict)
    source: str = "exact"
    seed: int | None = None


@dataclass
class StepScalingPoint:
    z: float
    F: float
    s: Fraction
    Lx: int
    sLx: int
    Ly: int | None = None
    anisotropy: float | None = None
    z_err: float = 0.0
    F_err: float = 0.0
    source: str = "exact"
    seed: int | None = None
    bare: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PerturbativePoint:
    F: float
    valid: bool


# ---------------------------------------------------------------------------
# correlation matrices


def column_projector(geom: LatticeGeometry) -> np.ndarray:
    """``P[site, x] = (-1)^(x+y)`` if the site lies in column ``x``."""
    P = np.zeros((geom.n_sites, geom.Lx))
    P[np.arange(geom.n_sites), geom.column_of()] = geom.parities()
    return P


def correlation_matrix(state, geom: LatticeGeometry) -> CorrelationMatrix:
    """Exact-expectation correlation matrix of an MPS or a state vector."""
    from .tensor.mps import MPS

    if isinstance(state, MPS):
        if state.n_sites != geom.n_sites:
            raise ValueError("state does not match geometry")
        C = state.zz_matrix()
        P = column_projector(geom)
        G = P.T @ C @ P
        return CorrelationMatrix(0.5 * (G + G.T), source="exact")
    from .oracle import as_exact_state, exact_correlation_matrix

    if isinstance(state, np.ndarray):
        state = as_exact_state(state, geom.n_sites)
    return exact_correlation_matrix(state, geom)


def _gbar_from_eigs(G0: float, G1: float, L: int) -> float:
    if G1 <= DEGENERATE_REL_GAP * abs(G0) or G0 / G1 - 1.0 < 0:
        raise DegenerateSpectrumError(f"G0={G0:.6g}, G1={G1:.6g}: second eigenvalue not positive")
    if (G0 - G1) / G0 < DEGENERATE_REL_GAP:
        raise DegenerateSpectrumError(f"G0={G0:.6g} and G1={G1:.6g} are degenerate")
    return 0.5 * math.sqrt((G0 / G1 - 1.0) / (L * math.sin(math.pi / (2 * L))))


def renormalized_coupling(G: CorrelationMatrix | np.ndarray, Lx: int | None = None,
                          bare: dict | None = None) -> CouplingResult:
    if not isinstance(G, CorrelationMatrix):
        G = CorrelationMatrix(np.asarray(G, dtype=float))
    L = G.Lx if Lx is None else int(Lx)
    if L < 2:
        raise ValueError("Lx must be at least 2")
    if L != G.Lx:
        raise ValueError(f"Lx={L} does not match a {G.Lx}x{G.Lx} correlation matrix")
    ev = G.eigenvalues()
    G0, G1 = float(ev[0]), float(ev[1])
    return CouplingResult(_gbar_from_eigs(G0, G1, L), G0, G1, L, bare=dict(bare or {}),
                          source=G.source, seed=G.seed)


def step_scaling(small: CouplingResult, large: CouplingResult, Ly: int | None = None,
                 anisotropy: float | None = None) -> StepScalingPoint:
    """``z = gbar(L)``, ``F = s gbar(sL) / gbar(L)`` with ``s = sLx / Lx``."""
    if small.bare != large.bare:
        raise BareParameterMismatch(f"bare parameters differ: {small.bare} vs {large.bare}")
    s = Fraction(large.Lx, small.Lx)
    z = small.gbar
    F = float(s) * large.gbar / z
    rel = math.hypot(small.stat_error / small.gbar, large.stat_error / large.gbar)
    src = small.source if small.source == large.source else f"{small.source}+{large.source}"
    return StepScalingPoint(z, F, s, small.Lx, large.Lx, Ly, anisotropy, small.stat_error, F * rel,
                            src, small.seed, dict(small.bare))


STEP_SCALING_COLUMNS = ["s", "Lx", "Ly", "anisotropy", "z", "z_err", "F", "F_err", "source", "seed"]


def step_scaling_csv(points, preamble: str = "") -> str:
    """CSV with the documented step-scaling columns; ``preamble`` lines are prefixed with ``#``."""
    buf = io.StringIO()
    for line in preamble.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STEP_SCALING_COLUMNS)

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    for p in points:
        w.writerow([fmt(v) for v in (str(p.s), p.Lx, p.Ly, p.anisotropy, p.z, p.z_err, p.F, p.F_err,
                                      p.source, p.seed)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# finite shots


def _column_sums(shots, geom: LatticeGeometry) -> np.ndarray:
    """``A_x = sum_y (-1)^(x+y) Sz_{x,y}`` per shot; equals ``sum_y (n - 1/2)``."""
    shots = np.asarray(shots)
    if shots.ndim != 2 or shots.shape[1] != geom.n_sites:
        raise ValueError(f"expected shots of shape (n, {geom.n_sites})")
    occ = shots.astype(float) - 0.5
    A = np.zeros((shots.shape[0], geom.Lx))
    cols = geom.column_of()
    for x in range(geom.Lx):
        A[:, x] = occ[:, cols == x].sum(axis=1)
    return A


def shot_estimator(shots, geom: LatticeGeometry, seed: int | None = None) -> CorrelationMatrix:
    """Unbiased ``G`` from occupation-basis bitstrings (rows in chain order)."""
    shots = np.asarray(shots)
    if shots.ndim != 2 or shots.shape[0] < 2:
        raise ValueError("at least two shots are required")
    A = _column_sums(shots, geom)
    G = A.T @ A / A.shape[0]
    return CorrelationMatrix(G, source="shots", n_shots=int(A.shape[0]), seed=seed)


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def bootstrap_coupling(shots, geom: LatticeGeometry, n_resamples: int = 1000, seed: int = 0,
                       bare: dict | None = None) -> CouplingResult:
    """Coupling from the full sample with a whole-shot bootstrap error.

    Resamples whose spectrum is degenerate are skipped and counted in
    ``n_degenerate``.  The full-sample estimate itself must be non-degenerate.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be at least 100")
    shots = np.asarray(shots)
    Gc = shot_estimator(shots, geom, seed)
    res = renormalized_coupling(Gc, geom.Lx, bare)
    A = _column_sums(shots, geom)
    n = A.shape[0]
    rng = _rng(seed, 1)
    vals = []
    bad = 0
    for _ in range(n_resamples):
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        G = (A * w[:, None]).T @ A / n
        ev = np.linalg.eigvalsh(0.5 * (G + G.T))[::-1]
        try:
            vals.append(_gbar_from_eigs(float(ev[0]), float(ev[1]), geom.Lx))
        except DegenerateSpectrumError:
            bad += 1
    res.stat_error = float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")
    res.n_degenerate = bad
    res.seed = seed
    if bad:
        warnings.warn(f"{bad} of {n_resamples} bootstrap resamples had a degenerate spectrum", RuntimeWarning,
                      stacklevel=2)
    return res


# ---------------------------------------------------------------------------
# perturbative reference


def _run_kappa(kappa0: float, log_s: float, loops: int) -> float:
    """Integrate ``d kappa / d ln L = -(b0 + b1 / kappa)`` over ``ln s``."""
    if loops == 0 or log_s == 0.0:
        return kappa0
    if loops == 1:
        return kappa0 - B0 * log_s
    if loops != 2:
        raise ValueError("loops must be 0, 1 or 2")

    def rhs(_, k):
        return [-(B0 + B1 / k[0])]

    def hit_zero(_, k):
        return k[0] - 1e-6

    hit_zero.terminal = True
    sol = solve_ivp(rhs, (0.0, log_s), [kappa0], rtol=1e-12, atol=1e-14, events=hit_zero)
    if sol.status == 1:
        return -1.0
    return float(sol.y[0, -1])


def perturbative_step_scaling(z: float, s: float, loops: int = 2, table: "ReferenceCurve | None" = None,
                              z_min: float = PERTURBATIVE_Z_MIN) -> PerturbativePoint:
    """Perturbative ``F_s(z)``.

    ``kappa = 2 gbar^2`` plays the role of the inverse bare coupling and runs
    with the O(3) coefficients ``b0 = 1/2pi``, ``b1 = 1/4pi^2``.  ``loops=0``
    freezes the coupling.  A loaded ``table`` replaces the integration.  The
    result is flagged invalid below ``z_min`` or if the coupling runs to zero.
    """
    if z <= 0 or s <= 0:
        raise ValueError("z and s must be positive")
    if table is not None:
        return PerturbativePoint(float(table(z)), bool(table.z[0] <= z <= table.z[-1]))
    kappa0 = 2.0 * z * z
    k1 = _run_kappa(kappa0, math.log(s), loops)
    if k1 <= 0:
        return PerturbativePoint(float("nan"), False)
    return PerturbativePoint(s * math.sqrt(k1 / kappa0), bool(z >= z_min))


@dataclass
class ReferenceCurve:
    """Monotone piecewise-cubic curve ``F(z)`` through tabulated points."""

    z: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.z)
        self.z = np.asarray(self.z, dtype=float)[order]
        self.F = np.asarray(self.F, dtype=float)[order]
        if len(self.z) < 2 or np.any(np.diff(self.z) <= 0):
            raise ValueError("reference curve needs at least two distinct z values")
        self._f = PchipInterpolator(self.z, self.F, extrapolate=True)

    def __call__(self, z):
        return self._f(z)

    @classmethod
    def load(cls, path: str | Path) -> "ReferenceCurve":
        """Read a CSV with ``z`` and ``F`` columns; ``#`` lines are comments."""
        text = Path(path).read_text()
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        reader = csv.DictReader(rows)
        zs, Fs = [], []
        for r in reader:
            zs.append(float(r["z"]))
            Fs.append(float(r["F"]))
        return cls(np.array(zs), np.array(Fs))


def perturbative_table(zs, s: float, loops: int = 2) -> list[tuple[float, float, bool]]:
    return [(float(z), *_astuple(perturbative_step_scaling(float(z), s, loops))) for z in zs]


def _astuple(p: PerturbativePoint):
    return p.F, p.valid
