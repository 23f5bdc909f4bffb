"""Config parsing and CSV readers/writers.

All CSV files carry a header row; floats are written with 17 significant digits.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .hjb import Policy, Potential
from .lattice import Lattice, make_lattice
from .model import GridMeasure, LagrangianSpec, ProblemConfig, TimeProfile, control_grid

NUMBER = (int, float)

# (section, key, types, required, default)
SCHEMA = [
    ("lagrangian", "kind", (str,), True, None),
    ("lagrangian", "p", NUMBER, False, 2.0),
    ("lagrangian", "q", NUMBER, False, 1.0),
    ("lagrangian", "a_u", NUMBER, False, 0.0),
    ("lagrangian", "a_x", NUMBER, False, 0.0),
    ("lagrangian", "a_0", NUMBER, True, None),
    ("lagrangian", "time_profile", (str, dict), False, "constant"),
    ("lagrangian", "u_bound", NUMBER + (type(None),), False, None),
    ("lagrangian", "c", NUMBER + (type(None),), False, None),
    ("lagrangian", "C", NUMBER + (type(None),), False, None),
    ("lagrangian", "table", (list, type(None)), False, None),
    ("grid", "d", (int,), True, None),
    ("grid", "h", NUMBER, True, None),
    ("grid", "dt", NUMBER, True, None),
    ("grid", "T", NUMBER, True, None),
    ("grid", "R", NUMBER, True, None),
    ("controls", "per_axis", (int,), True, None),
    ("controls", "max", NUMBER, True, None),
    ("measures", "mu_file", (str,), True, None),
    ("measures", "nu_file", (str,), True, None),
    ("solver", "eps_gap", NUMBER, False, 1e-6),
    ("solver", "eps_marginal", NUMBER, False, 1e-6),
    ("solver", "eps_mass", NUMBER, False, 1e-3),
    ("solver", "step0", NUMBER, False, 1.0),
    ("solver", "step_rule", (str,), False, "sqrt"),
    ("solver", "max_iter", (int,), False, 10_000),
    ("solver", "norm_every", (int,), False, 0),
    ("mc", "n", (int,), False, 10_000),
    ("mc", "seed", (int,), False, 0),
]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    return rows[0], rows[1:]


def _load_raw(path):
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text)


def _typecheck(raw):
    values, problems = {}, []
    if not isinstance(raw, dict):
        return values, ["config root must be a mapping"]
    for section, key, types, required, default in SCHEMA:
        block = raw.get(section) or {}
        if not isinstance(block, dict):
            problems.append(f"{section}: expected a mapping")
            continue
        if key not in block:
            if required:
                problems.append(f"{section}.{key}: missing required key")
            values[(section, key)] = default
            continue
        v = block[key]
        if isinstance(v, bool) or not isinstance(v, types):
            names = "/".join(t.__name__ for t in types)
            problems.append(f"{section}.{key}: expected {names}, got {type(v).__name__} {v!r}")
            continue
        values[(section, key)] = v
    return values, problems


def _profile(value):
    if isinstance(value, str):
        return TimeProfile(value)
    return TimeProfile(value.get("kind", "constant"), float(value.get("g0", 1.0)), float(value.get("rate", 0.0)))


def read_measure(path, lattice: Lattice, name="measure") -> GridMeasure:
    """Read ``x_1..x_d,weight`` rows onto the lattice nodes (weights on repeated nodes add up)."""
    header, rows = read_csv(path)
    d = lattice.d
    if len(header) != d + 1:
        raise ConfigError(f"{name} file {path}: expected {d + 1} columns (coordinates, weight), got {len(header)}")
    w = np.zeros(lattice.n_nodes)
    outside, off_grid = [], []
    for row in rows:
        if not row:
            continue
        x = np.array([float(v) for v in row[:d]])
        weight = float(row[d])
        if np.any(np.abs(x) > lattice.R + 1e-9 * lattice.h):
            outside.append(x.tolist())
            continue
        i = int(lattice.nearest_node(x)[0])
        if not np.allclose(lattice.coords[i], x, atol=1e-9 * lattice.h):
            off_grid.append(x.tolist())
            continue
        w[i] += weight
    problems = []
    if outside:
        problems.append(f"{name}: support outside the box of radius {lattice.R} at {outside}; enlarge grid.R")
    if off_grid:
        problems.append(f"{name}: points not on the lattice: {off_grid}")
    if problems:
        raise ConfigError(problems)
    return GridMeasure(lattice.ref, w)


def parse_config(path) -> ProblemConfig:
    """Load and fully validate a YAML (or JSON) config; every problem is reported at once."""
    path = Path(path)
    try:
        raw = _load_raw(path)
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    v, problems = _typecheck(raw)
    get = lambda s, k: v.get((s, k))  # noqa: E731

    lag = None
    if not any(p.startswith("lagrangian.") for p in problems):
        try:
            c, C = get("lagrangian", "c"), get("lagrangian", "C")
            table = get("lagrangian", "table")
            lag = LagrangianSpec(
                kind=get("lagrangian", "kind"),
                p=float(get("lagrangian", "p")),
                q=float(get("lagrangian", "q")),
                a_u=float(get("lagrangian", "a_u")),
                a_x=float(get("lagrangian", "a_x")),
                a_0=float(get("lagrangian", "a_0")),
                profile=_profile(get("lagrangian", "time_profile")),
                u_bound=get("lagrangian", "u_bound"),
                table=tuple((row[:-1], row[-1]) for row in table) if table else None,
                coercivity=(float(c), float(C)) if c is not None and C is not None else None,
            )
        except ConfigError as exc:
            problems += [p if p.startswith("lagrangian") else f"lagrangian: {p}" for p in exc.problems]

    lattice = None
    if not any(p.startswith("grid.") for p in problems):
        try:
            lattice = make_lattice(get("grid", "d"), get("grid", "R"), get("grid", "h"),
                                   get("grid", "T"), get("grid", "dt"))
        except ConfigError as exc:
            problems += [f"grid: {p}" for p in exc.problems]

    measures = {}
    if lattice is not None and not any(p.startswith("measures.") for p in problems):
        for name in ("mu", "nu"):
            f = Path(get("measures", f"{name}_file"))
            f = f if f.is_absolute() else path.parent / f
            try:
                measures[name] = read_measure(f, lattice, f"measures.{name}_file")
            except OSError as exc:
                problems.append(f"measures.{name}_file: cannot read {f}: {exc}")
            except (ConfigError, ValueError) as exc:
                problems += getattr(exc, "problems", [f"measures.{name}_file: {exc}"])

    if problems or lag is None or lattice is None or len(measures) < 2:
        raise ConfigError(problems or ["invalid configuration"])
    try:
        controls = control_grid(lattice.d, get("controls", "per_axis"), float(get("controls", "max")))
        return ProblemConfig(
            lagrangian=lag,
            mu=measures["mu"],
            nu=measures["nu"],
            T=float(get("grid", "T")),
            R=float(get("grid", "R")),
            h=float(get("grid", "h")),
            dt=float(get("grid", "dt")),
            d=lattice.d,
            controls=controls,
            eps_gap=float(get("solver", "eps_gap")),
            eps_marginal=float(get("solver", "eps_marginal")),
            eps_mass=float(get("solver", "eps_mass")),
            step0=float(get("solver", "step0")),
            step_rule=get("solver", "step_rule"),
            max_iter=get("solver", "max_iter"),
            norm_every=get("solver", "norm_every"),
            mc_n=get("mc", "n"),
            mc_seed=get("mc", "seed"),
        )
    except ConfigError as exc:
        raise ConfigError(exc.problems) from None


def coord_header(d):
    return [f"x{j + 1}" for j in range(d)]


def write_potential(path, lattice: Lattice, psi) -> None:
    write_csv(path, coord_header(lattice.d) + ["psi"],
              ([*x, p] for x, p in zip(lattice.coords, np.asarray(psi))))


def read_potential(path, lattice: Lattice) -> Potential:
    header, rows = read_csv(path)
    d = lattice.d
    values = np.full(lattice.n_nodes, np.nan)
    for row in rows:
        if row:
            values[lattice.index_of(np.array([float(v) for v in row[:d]]))] = float(row[d])
    if np.isnan(values).any():
        missing = lattice.coords[np.isnan(values)].tolist()
        raise ConfigError(f"potential file {path} has no value at nodes {missing}")
    return Potential(values)


def write_field(path, lattice: Lattice, name, table) -> None:
    """Write a (K+1, N) table as ``k,t,x_1..x_d,<name>`` rows."""
    table = np.asarray(table)
    rows = ([k, lattice.times[k], *lattice.coords[i], table[k, i]]
            for k in range(table.shape[0]) for i in range(lattice.n_nodes))
    write_csv(path, ["k", "t"] + coord_header(lattice.d) + [name], rows)


def write_policy(path, lattice: Lattice, kernel, policy: Policy) -> None:
    d = lattice.d
    rows = []
    for k in range(policy.K + 1):
        for i in range(lattice.n_nodes):
            if policy.stop[k, i]:
                rows.append([k, lattice.times[k], *lattice.coords[i], "stop", *([0.0] * d)])
            else:
                rows.append([k, lattice.times[k], *lattice.coords[i], "continue",
                             *kernel.controls[policy.control[k, i]]])
    write_csv(path, ["k", "t"] + coord_header(d) + ["decision"] + [f"u{j + 1}" for j in range(d)], rows)


def read_policy(path, lattice: Lattice, kernel) -> Policy:
    header, rows = read_csv(path)
    d = lattice.d
    stop = np.ones((lattice.K + 1, lattice.n_nodes), dtype=bool)
    control = -np.ones_like(stop, dtype=int)
    for row in rows:
        if not row:
            continue
        k = int(row[0])
        if not 0 <= k <= lattice.K:
            raise ConfigError(f"policy file {path}: step {k} outside 0..{lattice.K}")
        i = lattice.index_of(np.array([float(v) for v in row[2:2 + d]]))
        decision = row[2 + d].strip().lower()
        if decision == "stop":
            continue
        if decision != "continue":
            raise ConfigError(f"policy file {path}: unknown decision {row[2 + d]!r}")
        u = np.array([float(v) for v in row[3 + d:3 + 2 * d]])
        match = np.flatnonzero(np.all(np.isclose(kernel.controls, u, atol=1e-12), axis=1))
        if match.size == 0:
            raise ConfigError(f"policy file {path}: control {u.tolist()} is not in the control grid")
        stop[k, i] = False
        control[k, i] = match[0]
    return Policy.from_arrays(lattice, stop, control)
