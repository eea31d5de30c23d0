"""Adiabatic-spiral pulse schedules for a rectangular Rydberg array.

Frequencies are angular (rad/us) and times are in us.  The detuning enters
the Hamiltonian as ``-Delta n`` (see :func:`nlsm_dtheory.model.build_rydberg`).

    Delta_{x,y}(t) = (-1)^(x+y) Omega_D + h_P (1 - t/T) + 1/2 sum C6 / r^6
    Omega(t)       = sqrt(2) Omega_D (t/T + sin(pi t/T) / pi)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .model import LatticeGeometry, TermList, build_rydberg, interaction_offsets

C6_RB87 = 5.42e6
OMEGA_D = 25.0 / math.sqrt(2.0)
T_SPIRAL = 3.83
OMEGA_MAX = 25.0
COHERENCE_BUDGET = 4.0
QUENCH_TIME = 0.1
DETUNING_OVERHEAD = 0.07
AY = 11.0
SCHEMA = "nlsm-spiral-schedule/1"

# ax (um) -> (h_P, (E - E0)/gap)
TABLE_6x6 = {12.5: (0.44, 2.81), 12.1: (0.52, 2.90), 11.8: (0.56, 3.43), 11.1: (0.49, 4.64)}
TABLE_8x6 = {12.5: (0.30, 4.52), 12.1: (0.40, 4.56), 11.8: (0.46, 5.43), 11.1: (0.45, 7.52)}
AX_PRESETS = (12.5, 12.1, 11.8, 11.1)

_REL = 1e-9


class HardwareLimitError(ValueError):
    pass


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class PulseSchedule:
    """Spiral schedule; evolution runs over ``[0, duration]``.

    ``quench`` is the Rabi ramp-down appended after ``T``; ``overhead`` is
    dead time charged to the coherence budget but not evolved.
    """

    geometry: LatticeGeometry
    C6: float
    h_P: float
    omega_D: float
    T: float
    quench: float = 0.0
    overhead: float = 0.0
    omega_max: float = OMEGA_MAX
    budget: float = COHERENCE_BUDGET
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "offsets", interaction_offsets(self.geometry, self.C6))

    @property
    def duration(self) -> float:
        return self.T + self.quench

    @property
    def total_time(self) -> float:
        return self.T + self.quench + self.overhead

    def rabi(self, t: float) -> float:
        if t <= self.T:
            u = t / self.T
            return math.sqrt(2.0) * self.omega_D * (u + math.sin(math.pi * u) / math.pi)
        if self.quench > 0 and t <= self.T + self.quench:
            return self.rabi(self.T) * max(0.0, 1.0 - (t - self.T) / self.quench)
        return 0.0

    def detuning(self, t: float) -> np.ndarray:
        u = min(t, self.T) / self.T
        return self.geometry.parities() * self.omega_D + self.h_P * (1.0 - u) + self.offsets

    def terms_at(self, t: float) -> TermList:
        return build_rydberg(self.geometry, self.C6, self.detuning(t), self.rabi(t), t)

    # serialization ------------------------------------------------------
    def parameters(self) -> dict:
        return {"C6": self.C6, "h_P": self.h_P, "omega_D": self.omega_D, "T": self.T, "quench": self.quench,
                "overhead": self.overhead, "omega_max": self.omega_max, "budget": self.budget}

    def to_json(self, n_samples: int = 201) -> str:
        """Waveforms sampled on a uniform grid over ``[0, T]`` plus the quench end point."""
        times = [self.T * k / (n_samples - 1) for k in range(n_samples)]
        if self.quench > 0:
            times.append(self.T + self.quench)
        det = np.array([self.detuning(t) for t in times])
        sites = []
        for i in range(self.geometry.n_sites):
            x, y = self.geometry.coords(i)
            sites.append({"x": x, "y": y, "values": [repr(float(v)) for v in det[:, i]]})
        doc = {
            "schema": SCHEMA,
            "units": {"time": "us", "frequency": "rad/us", "C6": "rad/us um^6"},
            "geometry": self.geometry.to_dict(),
            "parameters": {k: repr(float(v)) for k, v in self.parameters().items()},
            "times": [repr(float(t)) for t in times],
            "rabi": [repr(float(self.rabi(t))) for t in times],
            "detuning": sites,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PulseSchedule":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unknown schedule schema {doc.get('schema')!r}")
        p = {k: float(v) for k, v in doc["parameters"].items()}
        return cls(LatticeGeometry.from_dict(doc["geometry"]), **p)


def build_spiral(geom: LatticeGeometry, C6: float = C6_RB87, h_P: float = 0.44, omega_D: float = OMEGA_D,
                 T: float = T_SPIRAL, omega_max: float = OMEGA_MAX, budget: float = COHERENCE_BUDGET) -> PulseSchedule:
    if C6 <= 0 or omega_D <= 0 or T <= 0 or h_P < 0:
        raise ValueError("C6, omega_D and T must be positive and h_P non-negative")
    s = PulseSchedule(geom, C6, h_P, omega_D, T, omega_max=omega_max, budget=budget)
    peak = s.rabi(T)
    if peak > omega_max * (1 + _REL):
        raise HardwareLimitError(f"final Rabi frequency {peak:.6g} exceeds the limit {omega_max:.6g}")
    return s


def add_measurement_quench(schedule: PulseSchedule, quench: float = QUENCH_TIME,
                           overhead: float = DETUNING_OVERHEAD) -> PulseSchedule:
    total = schedule.T + quench + overhead
    if total > schedule.budget * (1 + _REL):
        raise BudgetError(f"schedule needs {total:.4f} us, budget is {schedule.budget:.4f} us")
    return replace(schedule, quench=quench, overhead=overhead)


def preset_geometry(Lx: int, Ly: int, ax: float, ay: float = AY) -> LatticeGeometry:
    return LatticeGeometry(Lx, Ly, ax, ay)


def table_values(Lx: int, Ly: int, ax: float) -> tuple[float, float]:
    """Published ``(h_P, (E - E0)/gap)`` for a 6x6 or 8x6 preset."""
    table = {(6, 6): TABLE_6x6, (8, 6): TABLE_8x6}.get((Lx, Ly))
    if table is None or ax not in table:
        raise KeyError(f"no preset for {Lx}x{Ly} at ax={ax}")
    return table[ax]


# ---------------------------------------------------------------------------
# penalty optimization


@dataclass
class PenaltySearch:
    h_P: float
    gbar: float
    target: float
    evaluations: list = field(default_factory=list)  # (h_P, gbar or None)

    def to_dict(self) -> dict:
        return asdict(self)


def default_grid() -> list[float]:
    return [round(0.1 + 0.05 * k, 10) for k in range(15)]


def optimize_penalty(measure: Callable[[float], float], target: float, grid=None, refine: bool = True,
                     tol: float = 0.005, max_iter: int = 12) -> PenaltySearch:
    """Minimize ``|measure(h_P) - target|`` over a grid, then golden-section refine.

    ``measure`` evolves the spiral at the given penalty and returns the
    prepared state's coupling; it may raise
    :class:`~nlsm_dtheory.observables.DegenerateSpectrumError`.  Ties go to the
    smaller penalty.
    """
    from .observables import DegenerateSpectrumError

    grid = sorted(default_grid() if grid is None else grid)
    if not grid:
        raise ValueError("empty penalty grid")
    evals = []
    cache = {}

    def f(h):
        if h not in cache:
            try:
                g = float(measure(h))
            except DegenerateSpectrumError:
                g = None
            cache[h] = g
            evals.append((h, g))
        g = cache[h]
        return math.inf if g is None else abs(g - target)

    best = min(grid, key=lambda h: (f(h), h))
    if math.isinf(f(best)):
        raise DegenerateSpectrumError("every penalty candidate produced a degenerate spectrum")
    if refine and len(grid) > 1:
        i = grid.index(best)
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, len(grid) - 1)]
        phi = (math.sqrt(5) - 1) / 2
        a, b = lo, hi
        c, d = b - phi * (b - a), a + phi * (b - a)
        for _ in range(max_iter):
            if b - a < tol:
                break
            if (f(c), c) <= (f(d), d):
                b, d = d, c
                c = b - phi * (b - a)
            else:
                a, c = c, d
                d = a + phi * (b - a)
        for h in (c, d):
            if (f(h), h) < (f(best), best):
                best = h
    return PenaltySearch(best, cache[best], target, evals)


# ---------------------------------------------------------------------------
# preparation pipeline


@dataclass
class SpiralResult:
    schedule: PulseSchedule
    energy: float  # <H_d6> of the state at T
    E0: float
    E1: float
    reference: str
    coupling: object | None  # CouplingResult from the sampled shots
    trajectory: object
    shots: np.ndarray | None = None

    @property
    def gap(self) -> float:
        return self.E1 - self.E0

    @property
    def energy_ratio(self) -> float:
        return (self.energy - self.E0) / self.gap

    def summary(self) -> dict:
        c = self.coupling
        return {"h_P": self.schedule.h_P, "energy": self.energy, "E0": self.E0, "E1": self.E1,
                "energy_ratio": self.energy_ratio, "reference": self.reference,
                "gbar": None if c is None else c.gbar, "gbar_err": None if c is None else c.stat_error,
                "n_degenerate": None if c is None else c.n_degenerate}


ED_MAX_SITES = 20


def reference_energies(geom: LatticeGeometry, method: str = "auto", dmrg_config=None) -> tuple[float, float, str]:
    """``(E0, E1)`` of the 1/r^6 Heisenberg target; exact up to 20 sites, DMRG beyond."""
    from .model import build_d6_heisenberg

    H = build_d6_heisenberg(geom)
    if method == "auto":
        method = "exact" if geom.n_sites <= ED_MAX_SITES else "dmrg"
    if method == "exact":
        from .oracle import exact_ground

        _, E0, E1 = exact_ground(H)
        return float(E0), float(E1), "exact"
    if method == "dmrg":
        from .groundstate import energy_gap
        from .tensor.mpo import mpo_from_terms

        res = energy_gap(mpo_from_terms(H), dmrg_config)
        return float(res.E0), float(res.E1), "dmrg"
    raise ValueError(f"unknown reference method {method!r}")


def run_spiral(schedule: PulseSchedule, n_steps: int = 200, max_bond: int = 550, shots: int = 0, seed: int = 0,
               energies: tuple[float, float] | None = None, n_resamples: int = 1000, krylov_k: int = 3,
               reference: str = "auto") -> SpiralResult:
    """Evolve the Neel state through the spiral, then (optionally) quench and sample.

    The energy is measured at ``T``.  When ``schedule.quench > 0`` the Rabi
    ramp-down is evolved with the same step size before sampling.
    """
    from .dynamics import ScheduledHamiltonian, evolve_schedule
    from .model import build_d6_heisenberg, neel_bits, staggered_map
    from .observables import bootstrap_coupling
    from .tensor.mpo import mpo_from_terms
    from .tensor.mps import MPS
    from .tensor.network import expectation
    from .tensor.sampling import sample_shots

    g = schedule.geometry
    if energies is None:
        E0, E1, ref = reference_energies(g, reference)
    else:
        (E0, E1), ref = energies, "given"
    main = ScheduledHamiltonian(schedule.T, schedule.terms_at)
    traj = evolve_schedule(MPS.product_state(neel_bits(g)), main, n_steps, max_bond, krylov_k)
    E = float(np.real(expectation(traj.state, mpo_from_terms(build_d6_heisenberg(g)))))
    state = traj.state
    if schedule.quench > 0:
        dt = schedule.T / n_steps
        nq = max(1, math.ceil(schedule.quench / dt - 1e-9))
        tail = ScheduledHamiltonian(schedule.quench, lambda t: schedule.terms_at(schedule.T + t))
        qtraj = evolve_schedule(state, tail, nq, max_bond, krylov_k)
        traj.rows += [{**r, "step": r["step"] + n_steps, "time": r["time"] + schedule.T} for r in qtraj.rows]
        state = qtraj.state
        traj.state = state
    coupling = None
    occ = None
    if shots:
        spin = sample_shots(state, shots, seed)
        occ = staggered_map(g).occupation_from_spin_bits(spin)
        coupling = bootstrap_coupling(occ, g, n_resamples, seed, bare={"h_P": schedule.h_P})
    return SpiralResult(schedule, E, E0, E1, ref, coupling, traj, occ)


def exact_spiral(schedule: PulseSchedule, n_steps: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Exact-propagator reference for the same discretization: vectors at ``T`` and at ``T + quench``."""
    from .dynamics import ScheduledHamiltonian, discretize_schedule, spin_picture
    from .model import neel_bits
    from .oracle import exact_evolve

    g = schedule.geometry
    v = np.zeros(2**g.n_sites, dtype=complex)
    v[int("".join(map(str, neel_bits(g))), 2)] = 1.0
    for terms, dt in discretize_schedule(ScheduledHamiltonian(schedule.T, schedule.terms_at), n_steps):
        v = exact_evolve(v, spin_picture(terms), dt)
    at_T = v
    if schedule.quench > 0:
        dt = schedule.T / n_steps
        nq = max(1, math.ceil(schedule.quench / dt - 1e-9))
        tail = ScheduledHamiltonian(schedule.quench, lambda t: schedule.terms_at(schedule.T + t))
        for terms, d in discretize_schedule(tail, nq):
            v = exact_evolve(v, spin_picture(terms), d)
    return at_T, v


def prepared_coupling(geom: LatticeGeometry, h_P: float, n_steps: int = 200, max_bond: int = 550,
                      method: str = "tdvp", **spiral_kw) -> float:
    """``gbar`` of the state prepared at ``T`` from exact expectations of its correlation matrix."""
    from .observables import correlation_matrix, renormalized_coupling
    from .oracle import as_exact_state, exact_correlation_matrix

    s = build_spiral(geom, h_P=h_P, **spiral_kw)
    if method == "exact":
        v, _ = exact_spiral(s, n_steps)
        G = exact_correlation_matrix(as_exact_state(v, geom.n_sites), geom)
    elif method == "tdvp":
        res = run_spiral(s, n_steps, max_bond, energies=(0.0, 1.0))
        G = correlation_matrix(res.trajectory.state, geom)
    else:
        raise ValueError(f"unknown method {method!r}")
    return renormalized_coupling(G, geom.Lx).gbar
