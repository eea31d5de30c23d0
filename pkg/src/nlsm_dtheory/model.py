"""Lattice geometry and Hamiltonian term lists.

Hamiltonians are kept as explicit, ordered lists of one- and two-site terms
(:class:`TermList`).  Everything downstream (MPO construction, exact
diagonalization) consumes this representation, so term generation is kept
pure and deterministic.

Local basis convention used throughout the package: basis index ``1`` is spin
up (``Sz = +1/2``) and index ``0`` is spin down.  In the atom picture index
``1`` is the Rydberg state (``n = 1``).

Spin <-> atom picture: ``n_{x,y} = 1/2 + (-1)^(x+y) Sz_{x,y}``.

Units: couplings quoted in "MHz" follow the neutral-atom hardware convention
and are angular frequencies (rad/us); a Hamiltonian with coefficient ``c``
evolves with phase ``exp(-i c t)`` for ``t`` in microseconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

# Two-site kinds
SDOTS = "SdotS"  # S_i . S_j
SZSZ = "SzSz"  # Sz_i Sz_j
NN = "NN"  # n_i n_j (atom occupation)
# One-site kinds
X = "X"  # Pauli X
SZ = "Sz"
N = "N"

TWO_SITE_KINDS = (SDOTS, SZSZ, NN)
ONE_SITE_KINDS = (X, SZ, N)
_KIND_ORDER = {k: i for i, k in enumerate(TWO_SITE_KINDS + ONE_SITE_KINDS)}

TERMLIST_SCHEMA_VERSION = 1

Waveform = Union[float, Callable[[float], float]]


class ModelError(ValueError):
    """Invalid geometry or term specification."""


@dataclass(frozen=True)
class LatticeGeometry:
    """Rectangular ``Lx x Ly`` array with open boundaries.

    Sites ``(x, y)`` are mapped to a 1D chain by a column-major snake: column
    ``x`` occupies chain positions ``x*Ly ... x*Ly + Ly - 1``, traversed
    upwards for even ``x`` and downwards for odd ``x``.  Vertical bonds are
    therefore always chain neighbors.
    """

    Lx: int
    Ly: int
    ax: float = 1.0
    ay: float = 1.0
    boundary: str = "open"

    def __post_init__(self):
        if int(self.Lx) != self.Lx or int(self.Ly) != self.Ly:
            raise ModelError("lattice sizes must be integers")
        if self.Lx < 1 or self.Ly < 1:
            raise ModelError(f"lattice must have at least one site, got {self.Lx}x{self.Ly}")
        if not (self.ax > 0 and self.ay > 0 and math.isfinite(self.ax) and math.isfinite(self.ay)):
            raise ModelError("lattice spacings must be positive and finite")
        if self.boundary != "open":
            raise ModelError("only open boundaries are supported")

    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly

    def index(self, x: int, y: int) -> int:
        """Chain position of site ``(x, y)``."""
        if not (0 <= x < self.Lx and 0 <= y < self.Ly):
            raise ModelError(f"site ({x}, {y}) outside {self.Lx}x{self.Ly} lattice")
        return x * self.Ly + (y if x % 2 == 0 else self.Ly - 1 - y)

    def coords(self, i: int) -> tuple[int, int]:
        """Inverse of :meth:`index`."""
        if not 0 <= i < self.n_sites:
            raise ModelError(f"chain index {i} out of range")
        x, r = divmod(i, self.Ly)
        return x, (r if x % 2 == 0 else self.Ly - 1 - r)

    def sites(self) -> Iterator[tuple[int, int]]:
        """Sites in chain order."""
        for i in range(self.n_sites):
            yield self.coords(i)

    def parity(self, i: int) -> int:
        """Staggering sign ``(-1)^(x+y)`` of chain site ``i``."""
        x, y = self.coords(i)
        return 1 if (x + y) % 2 == 0 else -1

    def parities(self) -> np.ndarray:
        return np.array([self.parity(i) for i in range(self.n_sites)], dtype=np.int8)

    def column_of(self) -> np.ndarray:
        """x-coordinate of every chain site."""
        return np.array([self.coords(i)[0] for i in range(self.n_sites)], dtype=np.int64)

    def distance2(self, i: int, j: int) -> float:
        x1, y1 = self.coords(i)
        x2, y2 = self.coords(j)
        return self.ax**2 * (x1 - x2) ** 2 + self.ay**2 * (y1 - y2) ** 2

    def to_dict(self) -> dict:
        return {"Lx": self.Lx, "Ly": self.Ly, "ax": repr(float(self.ax)),
                "ay": repr(float(self.ay)), "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeGeometry":
        return cls(int(d["Lx"]), int(d["Ly"]), float(d["ax"]), float(d["ay"]),
                   d.get("boundary", "open"))


@dataclass(frozen=True)
class SpinTerm:
    kind: str
    sites: tuple[int, ...]
    coefficient: float

    def __post_init__(self):
        if self.kind in TWO_SITE_KINDS:
            if len(self.sites) != 2 or self.sites[0] == self.sites[1]:
                raise ModelError(f"{self.kind} term needs two distinct sites, got {self.sites}")
        elif self.kind in ONE_SITE_KINDS:
            if len(self.sites) != 1:
                raise ModelError(f"{self.kind} term acts on one site, got {self.sites}")
        else:
            raise ModelError(f"unknown term kind {self.kind!r}")
        if not math.isfinite(self.coefficient):
            raise ModelError("term coefficients must be finite")

    def sort_key(self):
        return (tuple(sorted(self.sites)), _KIND_ORDER[self.kind])


@dataclass(frozen=True)
class TermList:
    """Ordered sum of :class:`SpinTerm` plus a constant energy offset."""

    geometry: LatticeGeometry
    terms: tuple[SpinTerm, ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        n = self.geometry.n_sites
        for t in self.terms:
            if any(s < 0 or s >= n for s in t.sites):
                raise ModelError(f"term {t} references a site outside the lattice")

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def n_sites(self) -> int:
        return self.geometry.n_sites

    def of_kind(self, kind: str) -> list[SpinTerm]:
        return [t for t in self.terms if t.kind == kind]

    def scaled(self, factor: float) -> "TermList":
        return TermList(self.geometry,
                        tuple(SpinTerm(t.kind, t.sites, factor * t.coefficient) for t in self.terms),
                        factor * self.offset)

    def __add__(self, other: "TermList") -> "TermList":
        if other.geometry != self.geometry:
            raise ModelError("cannot add term lists on different geometries")
        return make_termlist(self.geometry, list(self.terms) + list(other.terms),
                             self.offset + other.offset)

    # serialization -------------------------------------------------------
    def to_json(self) -> str:
        """Serialize to the versioned JSON schema.

        ``{"schema": 1, "geometry": {...}, "offset": "<float>",
        "terms": [{"kind": str, "sites": [int, ...], "coefficient": "<float>"}]}``

        Floats are written as their shortest round-trip decimal strings.
        """
        payload = {
            "schema": TERMLIST_SCHEMA_VERSION,
            "geometry": self.geometry.to_dict(),
            "offset": repr(float(self.offset)),
            "terms": [{"kind": t.kind, "sites": list(t.sites), "coefficient": repr(float(t.coefficient))}
                      for t in self.terms],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TermList":
        d = json.loads(text)
        if d.get("schema") != TERMLIST_SCHEMA_VERSION:
            raise ModelError(f"unsupported term-list schema {d.get('schema')!r}")
        geom = LatticeGeometry.from_dict(d["geometry"])
        terms = tuple(SpinTerm(t["kind"], tuple(int(s) for s in t["sites"]), float(t["coefficient"]))
                      for t in d["terms"])
        return cls(geom, terms, float(d["offset"]))


def make_termlist(geom: LatticeGeometry, terms: Sequence[SpinTerm], offset: float = 0.0) -> TermList:
    """Canonicalize: two-site terms get ascending sites, order by site pair then kind."""
    canon = []
    for t in terms:
        if t.kind in TWO_SITE_KINDS and t.sites[0] > t.sites[1]:
            t = SpinTerm(t.kind, (t.sites[1], t.sites[0]), t.coefficient)
        canon.append(t)
    canon.sort(key=SpinTerm.sort_key)
    return TermList(geom, tuple(canon), float(offset))


# ---------------------------------------------------------------------------
# Hamiltonian builders


def build_nn_heisenberg(geom: LatticeGeometry, Jx: float, Jy: float) -> TermList:
    """Nearest-neighbor anisotropic Heisenberg antiferromagnet with open boundaries."""
    if not (math.isfinite(Jx) and math.isfinite(Jy)):
        raise ModelError("couplings must be finite")
    terms = []
    for x in range(geom.Lx):
        for y in range(geom.Ly):
            i = geom.index(x, y)
            if x + 1 < geom.Lx:
                terms.append(SpinTerm(SDOTS, (i, geom.index(x + 1, y)), float(Jx)))
            if y + 1 < geom.Ly:
                terms.append(SpinTerm(SDOTS, (i, geom.index(x, y + 1)), float(Jy)))
    return make_termlist(geom, terms)


def d6_coefficient(geom: LatticeGeometry, i: int, j: int) -> float:
    """Staggered ``1/r^6`` Heisenberg coupling between chain sites ``i`` and ``j``."""
    if i == j:
        raise ModelError("coincident sites have no 1/r^6 coupling")
    x1, y1 = geom.coords(i)
    x2, y2 = geom.coords(j)
    sign = -1.0 if (x1 + y1 + x2 + y2) % 2 == 0 else 1.0
    return sign / geom.distance2(i, j) ** 3


def build_d6_heisenberg(geom: LatticeGeometry) -> TermList:
    """All-pairs Heisenberg model with staggered-sign ``1/r^6`` couplings.

    Pairs on opposite sublattices are antiferromagnetic, pairs on the same
    sublattice ferromagnetic, so the Neel pattern frustrates no bond.
    """
    n = geom.n_sites
    terms = [SpinTerm(SDOTS, (i, j), d6_coefficient(geom, i, j))
             for i in range(n) for j in range(i + 1, n)]
    return make_termlist(geom, terms)


def _waveform_value(w, site: int, t: float) -> float:
    if callable(w):
        return float(w(site, t))
    arr = np.asarray(w, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return float(arr[site])


def build_rydberg(geom: LatticeGeometry, C6: float, detuning, rabi, t: float = 0.0,
                  domain: tuple[float, float] | None = None) -> TermList:
    """Rydberg-array Hamiltonian at time ``t`` in the atom picture.

    ``H = sum_i Omega_i/2 X_i - sum_i Delta_i n_i + sum_{i<j} C6/r_ij^6 n_i n_j``

    The detuning enters with a minus sign (neutral-atom hardware convention);
    with it the interaction-cancelling offset in the spiral detuning has the
    sign that makes the cancellation work.

    Args:
        geom: array geometry, spacings in micrometres.
        C6: van der Waals coefficient in rad/us * um^6.
        detuning, rabi: per-site waveforms.  Each may be a scalar (uniform), a
            length-``n_sites`` array, or a callable ``f(site, t)``.
        t: evaluation time in microseconds.
        domain: optional ``(t0, t1)`` validity interval of the waveforms.
    """
    if not C6 > 0:
        raise ModelError("C6 must be positive")
    if domain is not None and not (domain[0] - 1e-12 <= t <= domain[1] + 1e-12):
        raise ModelError(f"time {t} outside schedule domain {domain}")
    n = geom.n_sites
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            terms.append(SpinTerm(NN, (i, j), C6 / geom.distance2(i, j) ** 3))
    for i in range(n):
        d = _waveform_value(detuning, i, t)
        om = _waveform_value(rabi, i, t)
        if d != 0.0:
            terms.append(SpinTerm(N, (i,), -d))
        if om != 0.0:
            terms.append(SpinTerm(X, (i,), om / 2.0))
    return make_termlist(geom, terms)


def interaction_offsets(geom: LatticeGeometry, C6: float) -> np.ndarray:
    """``1/2 sum_{j != i} C6 / r_ij^6`` for every site, in chain order."""
    n = geom.n_sites
    out = np.zeros(n)
    for i in range(n):
        out[i] = 0.5 * sum(C6 / geom.distance2(i, j) ** 3 for j in range(n) if j != i)
    return out


# ---------------------------------------------------------------------------
# Staggered spin <-> occupation map


@dataclass(frozen=True)
class StaggeredMap:
    """``n_{x,y} = 1/2 + (-1)^(x+y) Sz_{x,y}``, applied per chain site."""

    geometry: LatticeGeometry
    signs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "signs", self.geometry.parities().astype(float))

    def sz_from_n(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        return self.signs * (n - 0.5)

    def n_from_sz(self, sz) -> np.ndarray:
        sz = np.asarray(sz, dtype=float)
        return 0.5 + self.signs * sz

    def spin_bits_from_occupation(self, bits) -> np.ndarray:
        """Occupation bitstrings (..., n_sites) -> spin-basis bits (1 = up)."""
        bits = np.asarray(bits, dtype=np.int8)
        flip = (self.signs < 0).astype(np.int8)
        return bits ^ flip

    occupation_from_spin_bits = spin_bits_from_occupation  # involution

    def staggered_magnetization(self, sz) -> float:
        return float(np.sum(self.signs * np.asarray(sz, dtype=float)))

    def to_spin_terms(self, terms: TermList) -> TermList:
        """Rewrite an atom-picture term list (NN, N, X) as spin operators.

        Constant pieces are collected into ``offset``; like single-site terms
        are merged.
        """
        s = self.signs
        fields = np.zeros(terms.n_sites)
        xfields = np.zeros(terms.n_sites)
        zz = []
        offset = terms.offset
        for t in terms:
            if t.kind == NN:
                i, j = t.sites
                c = t.coefficient
                offset += c / 4.0
                fields[i] += c * s[i] / 2.0
                fields[j] += c * s[j] / 2.0
                zz.append(SpinTerm(SZSZ, (i, j), c * s[i] * s[j]))
            elif t.kind == N:
                (i,) = t.sites
                offset += t.coefficient / 2.0
                fields[i] += t.coefficient * s[i]
            elif t.kind == X:
                xfields[t.sites[0]] += t.coefficient
            else:
                zz.append(t)
        out = list(zz)
        for i in range(terms.n_sites):
            if fields[i] != 0.0:
                out.append(SpinTerm(SZ, (i,), float(fields[i])))
            if xfields[i] != 0.0:
                out.append(SpinTerm(X, (i,), float(xfields[i])))
        return make_termlist(terms.geometry, out, offset)


def staggered_map(geom: LatticeGeometry) -> StaggeredMap:
    return StaggeredMap(geom)


def neel_bits(geom: LatticeGeometry) -> np.ndarray:
    """Spin-basis bits of the image of the all-ground-state atom configuration."""
    return staggered_map(geom).spin_bits_from_occupation(np.zeros(geom.n_sites, dtype=np.int8))
