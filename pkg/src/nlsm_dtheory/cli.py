"""Command-line driver: ``nlsm run {step-scale,spiral,mc-reference,perturbative,oracle-suite}``.

Settings come from built-in defaults, then an optional TOML file
(``--config``), then explicit flags.  Every CSV starts with ``#`` lines
holding the resolved configuration as JSON, so a file describes the run that
produced it.  Exit codes: 0 success, 2 configuration, 3 convergence,
4 coherence budget or hardware limit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import re
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_BUDGET = 4

CACHE_ENV = "NLSM_CACHE_DIR"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration schema


@dataclass(frozen=True)
class Field:
    kind: type
    default: object
    help: str = ""
    choices: tuple | None = None
    minimum: float | None = None


_COMMON = {
    "seed": Field(int, 0, "master seed", minimum=0),
    "workers": Field(int, 1, "worker processes", minimum=1),
    "out": Field(str, "results", "output directory"),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "step-scale": {
        "model": Field(str, "nn", "nearest-neighbour or 1/r^6 Heisenberg", ("nn", "d6")),
        "pair": Field(list, ["6:8"], "lattice pairs Lx:sLx"),
        "Ly": Field(int, 6, "rows", minimum=1),
        "sweep": Field(str, "", "param=lo:hi:n; J (Jx/Jy) for nn, rho ((ay/ax)^6) for d6; empty means 0.1:1.3:13"),
        "max_bond": Field(int, 256, "largest DMRG bond dimension", minimum=2),
        "max_sweeps": Field(int, 30, "DMRG sweep limit", minimum=1),
        "energy_tol": Field(float, 1e-9, "DMRG energy tolerance", minimum=0.0),
        **_COMMON,
    },
    "spiral": {
        "geom": Field(str, "6x6", "LxxLy"),
        "ax": Field(float, 12.5, "x spacing in um", minimum=0.0),
        "ay": Field(float, 11.0, "y spacing in um", minimum=0.0),
        "h_P": Field(float, -1.0, "energy penalty in MHz; negative selects the table preset"),
        "shots": Field(int, 5000, "measurement shots", minimum=0),
        "steps": Field(int, 200, "time steps over T", minimum=1),
        "max_bond": Field(int, 550, "TDVP bond cap", minimum=1),
        "T": Field(float, 3.83, "spiral duration in us", minimum=0.0),
        "omega_D": Field(float, 25.0 / math.sqrt(2.0), "drive frequency", minimum=0.0),
        "quench": Field(bool, True, "evolve the Rabi ramp-down before sampling"),
        "n_resamples": Field(int, 1000, "bootstrap resamples", minimum=100),
        "optimize": Field(bool, False, "optimize h_P against the vacuum coupling"),
        "grid": Field(list, [], "candidate h_P values for --optimize"),
        "reference": Field(str, "auto", "reference energies", ("auto", "exact", "dmrg")),
        **_COMMON,
    },
    "mc-reference": {
        "Lx": Field(int, 8, "small lattice width", minimum=2),
        "s": Field(str, "4/3", "scale factor"),
        "g_bare": Field(str, "0.8:1.6:5", "bare couplings lo:hi:n"),
        "n_therm": Field(int, 200, "thermalization sweeps", minimum=0),
        "n_meas": Field(int, 1000, "measurements", minimum=2),
        "algorithm": Field(str, "wolff", "update", ("wolff", "metropolis")),
        "lt_factor": Field(int, 8, "Lt / Lx", minimum=1),
        "n_blocks": Field(int, 20, "jackknife blocks", minimum=2),
        **_COMMON,
    },
    "perturbative": {
        "s": Field(str, "4/3", "scale factor"),
        "z": Field(str, "0.3:0.9:61", "z grid lo:hi:n"),
        "loops": Field(int, 2, "loop order", (0, 1, 2)),
        **_COMMON,
    },
    "oracle-suite": {
        "lattices": Field(list, ["2x2", "4x2", "4x4"], "NN lattices LxxLy"),
        "tol": Field(float, 1e-8, "relative tolerance", minimum=0.0),
        "max_bond": Field(int, 256, "largest DMRG bond dimension", minimum=2),
        **_COMMON,
    },
}


def _key_position(text: str, key: str) -> str:
    pat = re.compile(rf"^\s*[\"']?{re.escape(key)}[\"']?\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return f"line {n}, column {line.index(key[0]) + 1}"
    return "unknown position"


def _coerce(name: str, f: Field, value, where: str):
    if f.kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if f.kind is list and isinstance(value, str):
        value = [value]
    if f.kind is list and isinstance(value, list):
        value = [u for v in value for u in (v.split(",") if isinstance(v, str) else [v]) if u != ""]
    if f.kind is int and isinstance(value, bool) or not isinstance(value, f.kind):
        raise ConfigError(f"{where}: {name} must be {f.kind.__name__}, got {type(value).__name__}")
    if f.choices is not None and value not in f.choices:
        raise ConfigError(f"{where}: {name}={value!r} is not one of {list(f.choices)}")
    if f.minimum is not None and value < f.minimum:
        raise ConfigError(f"{where}: {name}={value!r} is below {f.minimum}")
    return value


def load_config(command: str, path: str | None = None, overrides: dict | None = None) -> dict:
    """Resolve defaults, file and flags into one validated dict."""
    schema = SCHEMAS[command]
    resolved = {k: f.default for k, f in schema.items()}
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if command in doc and isinstance(doc[command], dict):
            doc = {**{k: v for k, v in doc.items() if k != command}, **doc[command]}
        for k, v in doc.items():
            where = f"{path}: {_key_position(text, k)}"
            if k not in schema:
                raise ConfigError(f"{where}: unknown key {k!r} for {command}")
            resolved[k] = _coerce(k, schema[k], v, where)
    for k, v in (overrides or {}).items():
        resolved[k] = _coerce(k, schema[k], v, f"--{k.replace('_', '-')}")
    return {"command": command, **resolved}


def parse_range(text: str, name: str) -> list[float]:
    """``lo:hi:n`` to ``n`` evenly spaced values, or a comma list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return [float(v) for v in np.linspace(float(lo), float(hi), n)]
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse range {text!r}") from None


def parse_fraction(text: str, name: str) -> Fraction:
    try:
        s = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{name}: cannot parse {text!r} as a fraction") from None
    if s <= 0:
        raise ConfigError(f"{name}: scale factor must be positive")
    return s


def parse_shape(text: str, name: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise ConfigError(f"{name}: expected LxxLy, got {text!r}")
    return int(m[1]), int(m[2])


# ---------------------------------------------------------------------------
# output helpers


def preamble(config: dict) -> str:
    return f"# config: {json.dumps(config, sort_keys=True)}\n# seed: {config['seed']}\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, config: dict, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(preamble(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    path.write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _pool_map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(workers, len(tasks))) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _cache_dir() -> Path | None:
    d = os.environ.get(CACHE_ENV)
    if not d:
        return None
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cached(kind: str, key: dict, compute):
    """Memoize a JSON-serializable result under ``$NLSM_CACHE_DIR``."""
    d = _cache_dir()
    if d is None:
        return compute()
    h = hashlib.sha256(json.dumps({"kind": kind, **key}, sort_keys=True).encode()).hexdigest()[:24]
    path = d / f"{kind}-{h}.json"
    if path.exists():
        return json.loads(path.read_text())
    value = compute()
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(value, sort_keys=True))
    tmp.replace(path)
    return value


# ---------------------------------------------------------------------------
# vacuum couplings


def model_geometry(model: str, Lx: int, Ly: int, value: float):
    """Geometry and Hamiltonian for one sweep point.

    ``nn``: ``value = Jx/Jy`` with ``Jy = 1``.  ``d6``: ``value = (ay/ax)^6``
    with ``ay = 1``.
    """
    from .model import LatticeGeometry, build_d6_heisenberg, build_nn_heisenberg

    if value <= 0:
        raise ConfigError(f"sweep value must be positive, got {value}")
    if model == "nn":
        g = LatticeGeometry(Lx, Ly)
        return g, build_nn_heisenberg(g, value, 1.0)
    if model == "d6":
        g = LatticeGeometry(Lx, Ly, value ** (-1.0 / 6.0), 1.0)
        return g, build_d6_heisenberg(g)
    raise ConfigError(f"unknown model {model!r}")


def vacuum_coupling(model: str, Lx: int, Ly: int, value: float, max_bond: int = 256, max_sweeps: int = 30,
                    energy_tol: float = 1e-9) -> dict:
    """DMRG vacuum of one sweep point and its renormalized coupling."""
    from .groundstate import DmrgConfig, dmrg_ground
    from .observables import DegenerateSpectrumError, correlation_matrix, renormalized_coupling
    from .tensor.mpo import mpo_from_terms

    def compute():
        g, H = model_geometry(model, Lx, Ly, value)
        bonds = tuple(b for b in (16, 32, 64, 128, 256, 512, 1024, 2048) if b < max_bond) + (max_bond,)
        cfg = DmrgConfig(max_sweeps=max_sweeps, bond_schedule=bonds, energy_tol=energy_tol)
        res = dmrg_ground(mpo_from_terms(H), cfg)
        G = correlation_matrix(res.state, g)
        try:
            c = renormalized_coupling(G, Lx)
            gbar, G0, G1, err = c.gbar, c.G0, c.G1, ""
        except DegenerateSpectrumError as exc:
            ev = G.eigenvalues()
            gbar, G0, G1, err = float("nan"), float(ev[0]), float(ev[1]), str(exc)
        return {"gbar": gbar, "G0": G0, "G1": G1, "E0": res.energy, "converged": bool(res.converged),
                "max_bond": res.state.max_bond(), "error": err}

    key = {"model": model, "Lx": Lx, "Ly": Ly, "value": repr(float(value)), "max_bond": max_bond,
           "max_sweeps": max_sweeps, "energy_tol": repr(float(energy_tol))}
    return cached("vacuum", key, compute)


def _vacuum_task(args):
    return vacuum_coupling(*args)


STEP_SCALE_COLUMNS = ["model", "param", "value", "Lx", "sLx", "Ly", "s", "z", "F", "gbar_sL", "E0_L", "E0_sL",
                      "converged", "status"]


@dataclass
class SweepPoint:
    z: float
    F: float
    z_err: float = 0.0
    F_err: float = 0.0
    converged: bool = True


def run_step_scale(config: dict) -> int:
    from .observables import perturbative_table

    model = config["model"]
    param = "J" if model == "nn" else "rho"
    sweep = config["sweep"] or f"{param}=0.1:1.3:13"
    name, _, rng = sweep.partition("=")
    if name != param:
        raise ConfigError(f"sweep: model {model} sweeps {param!r}, got {name!r}")
    values = parse_range(rng, "sweep")
    pairs = []
    for p in config["pair"]:
        m = re.fullmatch(r"(\d+):(\d+)", str(p))
        if not m or int(m[1]) < 2 or int(m[2]) <= int(m[1]):
            raise ConfigError(f"pair: expected Lx:sLx with 2 <= Lx < sLx, got {p!r}")
        pairs.append((int(m[1]), int(m[2])))
    Ly = config["Ly"]
    sizes = sorted({L for pr in pairs for L in pr})
    tasks = [(model, L, Ly, v, config["max_bond"], config["max_sweeps"], config["energy_tol"])
             for L in sizes for v in values]
    results = dict(zip([(t[1], t[3]) for t in tasks], _pool_map(_vacuum_task, tasks, config["workers"])))

    rows, points = [], []
    for Lx, sLx in pairs:
        s = Fraction(sLx, Lx)
        for v in values:
            a, b = results[(Lx, v)], results[(sLx, v)]
            ok = a["converged"] and b["converged"]
            status = a["error"] or b["error"] or ("" if ok else "dmrg not converged")
            z, F = a["gbar"], float(s) * b["gbar"] / a["gbar"]
            rows.append({"model": model, "param": param, "value": v, "Lx": Lx, "sLx": sLx, "Ly": Ly, "s": s,
                         "z": z, "F": F, "gbar_sL": b["gbar"], "E0_L": a["E0"], "E0_sL": b["E0"],
                         "converged": ok, "status": status or "ok"})
            points.append(SweepPoint(z, F, converged=ok and not status))
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "step_scale.csv", config, STEP_SCALE_COLUMNS, rows)
    good = [p for p in points if p.converged and math.isfinite(p.F)]
    curves = []
    if good:
        from .plotting import step_scaling_figure

        zs = np.linspace(min(p.z for p in good) * 0.9, max(p.z for p in good) * 1.1, 50)
        for s in sorted({Fraction(b, a) for a, b in pairs}):
            curves.append((f"two-loop s={s}", zs, [F for _, F, _ in perturbative_table(zs, float(s))]))
        step_scaling_figure(out / "step_scale.svg", good, curves, f"{model}, Ly={Ly}", config)
    bad = len(points) - len(good)
    for r in rows:
        print(f"{r['Lx']}:{r['sLx']} {param}={r['value']:.4g}  z={r['z']:.6f}  F={r['F']:.6f}  {r['status']}")
    if bad:
        print(f"{bad} point(s) flagged and left out of the plot", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# spiral


SPIRAL_COLUMNS = ["Lx", "Ly", "ax", "ay", "h_P", "energy", "E0", "E1", "energy_ratio", "reference", "gbar",
                  "gbar_err", "n_degenerate", "shots", "target_gbar"]


def _prepared_task(args):
    from .spiral import prepared_coupling

    geom_dict, h, steps, max_bond, T, omega_D = args
    from .model import LatticeGeometry

    return prepared_coupling(LatticeGeometry.from_dict(geom_dict), h, steps, max_bond, "tdvp", T=T,
                             omega_D=omega_D)


def run_spiral_command(config: dict) -> int:
    from .observables import correlation_matrix, renormalized_coupling
    from .spiral import (add_measurement_quench, build_spiral, default_grid, optimize_penalty, preset_geometry,
                         reference_energies, run_spiral, table_values)

    Lx, Ly = parse_shape(config["geom"], "geom")
    g = preset_geometry(Lx, Ly, config["ax"], config["ay"])
    h_P = config["h_P"]
    if h_P < 0:
        try:
            h_P = table_values(Lx, Ly, config["ax"])[0]
        except KeyError:
            raise ConfigError(f"h_P: no preset for {config['geom']} at ax={config['ax']}; set h_P") from None
    target = None
    if config["optimize"]:
        from .model import build_d6_heisenberg

        if g.n_sites <= 20:
            from .oracle import exact_ground

            vac, _, _ = exact_ground(build_d6_heisenberg(g))
            G = correlation_matrix(vac.full_vector(), g)
        else:
            from .groundstate import dmrg_ground
            from .tensor.mpo import mpo_from_terms

            G = correlation_matrix(dmrg_ground(mpo_from_terms(build_d6_heisenberg(g))).state, g)
        target = renormalized_coupling(G, Lx).gbar
        grid = sorted(float(v) for v in (config["grid"] or default_grid()))
        tasks = [(g.to_dict(), h, config["steps"], config["max_bond"], config["T"], config["omega_D"]) for h in grid]
        pre = dict(zip(grid, _pool_map(_prepared_task, tasks, config["workers"])))

        def measure(h):
            if h in pre:
                return pre[h]
            return _prepared_task((g.to_dict(), h, config["steps"], config["max_bond"], config["T"],
                                   config["omega_D"]))

        search = optimize_penalty(measure, target, grid)
        h_P = search.h_P
        print(f"optimized h_P = {h_P:.6g} MHz (prepared gbar {search.gbar:.6f}, vacuum {target:.6f})")
    s = build_spiral(g, h_P=h_P, omega_D=config["omega_D"], T=config["T"])
    if config["quench"]:
        s = add_measurement_quench(s)
    E0, E1, ref = reference_energies(g, config["reference"])
    res = run_spiral(s, config["steps"], config["max_bond"], config["shots"], config["seed"], (E0, E1),
                     config["n_resamples"])
    summ = res.summary()
    row = {"Lx": Lx, "Ly": Ly, "ax": config["ax"], "ay": config["ay"], **summ, "reference": ref,
           "shots": config["shots"], "target_gbar": target}
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "spiral.csv", config, SPIRAL_COLUMNS, [row])
    traj = res.trajectory
    write_csv(out / "trajectory.csv", config, list(traj.COLUMNS), traj.rows)
    (out / "schedule.json").write_text(s.to_json())
    msg = f"(E - E0)/gap = {res.energy_ratio:.4f}"
    if res.coupling is not None:
        msg += f"  gbar = {res.coupling.gbar:.5f} +- {res.coupling.stat_error:.5f}"
    print(msg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Monte Carlo reference and perturbative table


MC_COLUMNS = ["g_bare", "beta", "Lx", "sLx", "s", "z", "z_err", "F", "F_err", "status"]


def _mc_task(args):
    from .mc import McConfig, ThermalizationError, mc_step_scaling
    from .observables import DegenerateSpectrumError

    g_bare, Lx, s, cfg = args
    try:
        p = mc_step_scaling(g_bare, Lx, s, McConfig(**cfg))
        return {"z": p.z, "z_err": p.z_err, "F": p.F, "F_err": p.F_err, "status": "ok"}
    except (ThermalizationError, DegenerateSpectrumError) as exc:
        return {"status": f"{type(exc).__name__}: {exc}"}


def run_mc_reference(config: dict) -> int:
    s = parse_fraction(config["s"], "s")
    Lx = config["Lx"]
    if (s * Lx).denominator != 1:
        raise ConfigError(f"s: s*Lx = {s * Lx} is not an integer")
    gs = parse_range(config["g_bare"], "g_bare")
    if any(g <= 0 for g in gs):
        raise ConfigError("g_bare: bare couplings must be positive")
    base = {k: config[k] for k in ("n_therm", "n_meas", "algorithm", "lt_factor", "n_blocks")}
    tasks = [(g, Lx, s, {**base, "seed": config["seed"] + 1000 * k, "workers": 1}) for k, g in enumerate(gs)]
    res = _pool_map(_mc_task, tasks, config["workers"])
    rows = [{"g_bare": g, "beta": 1.0 / g, "Lx": Lx, "sLx": int(s * Lx), "s": s, **r} for g, r in zip(gs, res)]
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "mc_reference.csv", config, MC_COLUMNS, rows)
    good = [SweepPoint(r["z"], r["F"], r["z_err"], r["F_err"]) for r in rows if r["status"] == "ok"]
    if len(good) >= 1:
        from .plotting import step_scaling_figure

        curves = []
        if len(good) >= 2 and len({p.z for p in good}) == len(good):
            from .mc import reference_curve

            zs = np.linspace(min(p.z for p in good), max(p.z for p in good), 100)
            curves.append(("monotone fit", zs, reference_curve(good)(zs)))
        step_scaling_figure(out / "mc_reference.svg", good, curves, f"Monte Carlo, s={s}", config)
    for r in rows:
        if r["status"] == "ok":
            print(f"g={r['g_bare']:.4g}  z={r['z']:.5f} +- {r['z_err']:.5f}  F={r['F']:.5f} +- {r['F_err']:.5f}")
        else:
            print(f"g={r['g_bare']:.4g}  {r['status']}", file=sys.stderr)
    return EXIT_OK if len(good) == len(rows) else EXIT_CONVERGENCE


def run_perturbative(config: dict) -> int:
    from .observables import perturbative_table

    s = parse_fraction(config["s"], "s")
    zs = parse_range(config["z"], "z")
    rows = [{"z": z, "F": F, "valid": ok} for z, F, ok in perturbative_table(zs, float(s), config["loops"])]
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "perturbative.csv", config, ["z", "F", "valid"], rows)
    print(f"{len(rows)} points, {sum(r['valid'] for r in rows)} inside the validity window")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle suite


ORACLE_COLUMNS = ["lattice", "E0_ed", "E0_dmrg", "E0_rel", "G_rel", "gbar_ed", "gbar_dmrg", "gbar_rel", "pass"]


def _oracle_task(args):
    from .groundstate import DmrgConfig, dmrg_ground
    from .model import LatticeGeometry, build_nn_heisenberg
    from .observables import correlation_matrix, renormalized_coupling
    from .oracle import exact_correlation_matrix, exact_ground
    from .tensor.mpo import mpo_from_terms

    (Lx, Ly), tol, max_bond = args
    g = LatticeGeometry(Lx, Ly)
    H = build_nn_heisenberg(g, 1.0, 1.0)
    st, E_ed, _ = exact_ground(H)
    G_ed = exact_correlation_matrix(st, g)
    bonds = tuple(b for b in (16, 32, 64, 128, 256, 512) if b < max_bond) + (max_bond,)
    res = dmrg_ground(mpo_from_terms(H), DmrgConfig(bond_schedule=bonds))
    G_mps = correlation_matrix(res.state, g)
    gb_ed = renormalized_coupling(G_ed, Lx).gbar
    gb_mps = renormalized_coupling(G_mps, Lx).gbar
    e_rel = abs(res.energy - E_ed) / abs(E_ed)
    g_rel = float(np.abs(G_mps.G - G_ed.G).max() / np.abs(G_ed.G).max())
    b_rel = abs(gb_mps - gb_ed) / gb_ed
    return {"lattice": f"{Lx}x{Ly}", "E0_ed": E_ed, "E0_dmrg": res.energy, "E0_rel": e_rel, "G_rel": g_rel,
            "gbar_ed": gb_ed, "gbar_dmrg": gb_mps, "gbar_rel": b_rel,
            "pass": bool(res.converged and max(e_rel, g_rel, b_rel) < tol)}


def run_oracle_suite(config: dict) -> int:
    shapes = [parse_shape(str(s), "lattices") for s in config["lattices"]]
    for Lx, Ly in shapes:
        if Lx < 2 or Lx * Ly > 24:
            raise ConfigError(f"lattices: {Lx}x{Ly} needs Lx >= 2 and at most 24 sites")
    rows = _pool_map(_oracle_task, [(sh, config["tol"], config["max_bond"]) for sh in shapes], config["workers"])
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "oracle_suite.csv", config, ORACLE_COLUMNS, rows)
    for r in rows:
        print(f"{r['lattice']:>6}  E0 {r['E0_rel']:.1e}  G {r['G_rel']:.1e}  gbar {r['gbar_rel']:.1e}  "
              f"{'PASS' if r['pass'] else 'FAIL'}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_CONVERGENCE


COMMANDS = {
    "step-scale": run_step_scale,
    "spiral": run_spiral_command,
    "mc-reference": run_mc_reference,
    "perturbative": run_perturbative,
    "oracle-suite": run_oracle_suite,
}


# ---------------------------------------------------------------------------
# argument parsing


def _flag_type(f: Field):
    if f.kind is bool:
        return lambda v: v.lower() in ("1", "true", "yes", "on")
    if f.kind is list:
        return str
    return f.kind


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlsm", description="D-theory O(3) sigma-model step-scaling driver")
    sub = p.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run an experiment")
    cmds = run.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        c = cmds.add_parser(name)
        c.add_argument("--config", default=None, help="TOML file with settings")
        for key, f in schema.items():
            kw = {"dest": key, "default": argparse.SUPPRESS, "help": f"{f.help} (default {f.default!r})"}
            if f.kind is list:
                c.add_argument(f"--{key.replace('_', '-')}", action="append", **kw)
            else:
                c.add_argument(f"--{key.replace('_', '-')}", type=_flag_type(f), **kw)
    return p


def main(argv=None) -> int:
    from .groundstate import DmrgError
    from .observables import DegenerateSpectrumError
    from .spiral import BudgetError, HardwareLimitError

    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    args.pop("verb")
    path = args.pop("config")
    try:
        config = load_config(command, path, args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda m, c, *a, **k: print(f"warning: {m}", file=sys.stderr)
            return COMMANDS[command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetError, HardwareLimitError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (DmrgError, DegenerateSpectrumError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
