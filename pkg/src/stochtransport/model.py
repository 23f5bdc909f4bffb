"""Running cost family, its Legendre dual, grid measures and the problem configuration.

The running cost has the separable form

    L(t, x, u) = g(t) * (D(u) + a_x |x|^q + a_0)

where ``D(u) = a_u |u|^p`` (power law, optionally with a bounded control set) or a
tabulated drift cost. ``g`` is a positive time profile that may be constant or
strictly monotone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

ARGMAX_TIE_TOL = 1e-12


class Kind(str, Enum):
    POWER_LAW = "power_law"
    BOUNDED_CONTROL = "bounded_control"
    TABULATED = "tabulated"


class Profile(str, Enum):
    CONSTANT = "constant"
    INCREASING = "strictly_increasing"
    DECREASING = "strictly_decreasing"


_KIND_ALIASES = {"powerlaw": Kind.POWER_LAW, "boundedcontrol": Kind.BOUNDED_CONTROL}
_PROFILE_ALIASES = {
    "increasing": Profile.INCREASING,
    "strictlyincreasing": Profile.INCREASING,
    "decreasing": Profile.DECREASING,
    "strictlydecreasing": Profile.DECREASING,
}


def _parse_enum(cls, value, aliases):
    if isinstance(value, cls):
        return value
    key = str(value).strip().lower()
    try:
        return cls(key)
    except ValueError:
        compact = key.replace("_", "").replace("-", "")
        if compact in aliases:
            return aliases[compact]
        for member in cls:
            if member.value.replace("_", "") == compact:
                return member
    raise ConfigError(f"unknown {cls.__name__} {value!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class TimeProfile:
    """Positive multiplier g(t).

    Increasing: ``g0 * (1 + rate*t)``; decreasing: ``g0 / (1 + rate*t)``.
    """

    kind: Profile = Profile.CONSTANT
    g0: float = 1.0
    rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _parse_enum(Profile, self.kind, _PROFILE_ALIASES))
        if not (self.g0 > 0 and math.isfinite(self.g0)):
            raise ConfigError(f"time_profile.g0 must be positive, got {self.g0}")
        if self.kind is not Profile.CONSTANT and not self.rate > 0:
            raise ConfigError(f"time_profile {self.kind.value} needs rate > 0, got {self.rate}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is Profile.CONSTANT:
            return self.g0 * np.ones_like(t)
        if self.kind is Profile.INCREASING:
            return self.g0 * (1.0 + self.rate * t)
        return self.g0 / (1.0 + self.rate * t)

    def extremes(self, horizon):
        """(min g, max g) over [0, horizon]."""
        a, b = float(self(0.0)), float(self(horizon))
        return min(a, b), max(a, b)

    def sup_time(self, horizon):
        """Time in [0, horizon] where g attains its supremum."""
        return float(horizon) if self.kind is Profile.INCREASING else 0.0


@dataclass(frozen=True)
class LagrangianSpec:
    kind: Kind = Kind.POWER_LAW
    p: float = 2.0
    q: float = 1.0
    a_u: float = 0.5
    a_x: float = 0.0
    a_0: float = 1.0
    profile: TimeProfile = field(default_factory=TimeProfile)
    u_bound: Optional[float] = None
    # tabulated drift cost: ((u_1, ..., u_d), cost) pairs
    table: Optional[tuple] = None
    coercivity: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _parse_enum(Kind, self.kind, _KIND_ALIASES))
        problems = []
        for name in ("a_u", "a_x", "a_0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                problems.append(f"lagrangian.{name} must be a nonnegative real, got {v}")
        if not self.q >= 1:
            problems.append(f"lagrangian.q must be >= 1, got {self.q}")
        if self.kind is Kind.POWER_LAW:
            if not self.p > 1:
                problems.append(f"lagrangian.p must be > 1 for power_law, got {self.p}")
            if not self.a_u > 0:
                problems.append("lagrangian.a_u must be > 0 for power_law (unbounded controls)")
        if self.kind is Kind.BOUNDED_CONTROL:
            if self.u_bound is None or not self.u_bound >= 0:
                problems.append("lagrangian.u_bound is required and nonnegative for bounded_control")
            if not self.p >= 1:
                problems.append(f"lagrangian.p must be >= 1, got {self.p}")
        if self.kind is Kind.TABULATED:
            if not self.table:
                problems.append("lagrangian.table is required for tabulated kind")
            else:
                table = tuple((tuple(float(c) for c in np.atleast_1d(u)), float(v)) for u, v in self.table)
                if any(v < 0 or not math.isfinite(v) for _, v in table):
                    problems.append("tabulated drift costs must be finite and nonnegative")
                object.__setattr__(self, "table", table)
        if self.coercivity is not None:
            c, C = self.coercivity
            if not (0 < c <= C):
                problems.append(f"coercivity must satisfy 0 < c <= C, got {self.coercivity}")
        if problems:
            raise ConfigError(problems)

    # -- vectorised pieces ---------------------------------------------------
    def drift_cost(self, u):
        """D(u) for an array of controls of shape (..., d)."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind is Kind.TABULATED:
            keys = {k: v for k, v in self.table}
            out = np.empty(u.shape[0])
            for i, row in enumerate(u):
                key = tuple(float(c) for c in row)
                if key not in keys:
                    raise DomainError(f"control {key} is not in the tabulated control set")
                out[i] = keys[key]
            return out
        norm = np.linalg.norm(u, axis=-1)
        if self.kind is Kind.BOUNDED_CONTROL and np.any(norm > self.u_bound * (1 + 1e-12) + 1e-15):
            raise DomainError(f"control norm {norm.max()} exceeds u_bound {self.u_bound}")
        return self.a_u * norm**self.p

    def state_cost(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.a_x * np.linalg.norm(x, axis=-1) ** self.q + self.a_0

    def bar_time(self, horizon):
        """Time at which L attains sup over [0, horizon] (L-bar of the stationary problem)."""
        return self.profile.sup_time(horizon)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise DomainError("non-finite input")


def eval_lagrangian(spec: LagrangianSpec, t, x, u) -> float:
    """L(t, x, u) at a single point."""
    _check_finite(t, x, u)
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    g = float(spec.profile(t))
    return float(g * (spec.drift_cost(u[None, :])[0] + spec.state_cost(x[None, :])[0]))


def running_cost_table(spec: LagrangianSpec, times, coords, controls):
    """Array ``L[k, m, i] = L(times[k], coords[i], controls[m])``."""
    g = spec.profile(np.asarray(times, dtype=float))
    drift = spec.drift_cost(controls)
    state = spec.state_cost(coords)
    return g[:, None, None] * (drift[None, :, None] + state[None, None, :])


def hamiltonian_mode(spec: LagrangianSpec, controls=None) -> str:
    if controls is not None:
        return "grid"
    if spec.kind is Kind.TABULATED:
        return "table"
    return "closed_form"


def _grid_values(spec, t, x, z, controls):
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    g = float(spec.profile(t))
    cost = g * (spec.drift_cost(controls) + spec.state_cost(np.atleast_1d(x)[None, :])[0])
    return controls @ np.atleast_1d(z) - cost


def hamiltonian(spec: LagrangianSpec, t, x, z, controls=None) -> float:
    """H(t, x, z) = sup_u [z.u - L(t, x, u)].

    With ``controls`` given the sup runs over that finite set; otherwise the
    closed-form conjugate of the continuous control set is used (see
    :func:`hamiltonian_mode`).
    """
    _check_finite(t, x, z)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    mode = hamiltonian_mode(spec, controls)
    if mode == "grid":
        return float(np.max(_grid_values(spec, t, x, z, controls)))
    if mode == "table":
        table_u = np.array([u for u, _ in spec.table])
        return float(np.max(_grid_values(spec, t, x, z, table_u)))
    g = float(spec.profile(t))
    s = float(np.linalg.norm(z))
    rest = g * float(spec.state_cost(x[None, :])[0])
    ga = g * spec.a_u
    if spec.kind is Kind.POWER_LAW:
        r = (s / (ga * spec.p)) ** (1.0 / (spec.p - 1.0))
        return s * r - ga * r**spec.p - rest
    # bounded control: maximise s*r - ga*r^p over r in [0, u_bound]
    ub = spec.u_bound
    if ga == 0 or spec.p == 1:
        return ub * max(s - ga, 0.0) - rest
    r = min(ub, (s / (ga * spec.p)) ** (1.0 / (spec.p - 1.0)))
    return s * r - ga * r**spec.p - rest


def canonical_order(controls) -> np.ndarray:
    """Permutation sorting controls by Euclidean norm, then lexicographically."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    keys = [controls[:, j] for j in reversed(range(controls.shape[1]))]
    keys.append(np.round(np.linalg.norm(controls, axis=1), 12))
    return np.lexsort(keys)


def argmax_control(spec: LagrangianSpec, t, x, z, controls) -> np.ndarray:
    """Maximiser of z.u - L(t,x,u) over the finite set ``controls``.

    Near-ties (within 1e-12 relative) go to the smallest norm, then the
    lexicographically smallest vector.
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] == 0:
        raise DomainError("empty control set")
    values = _grid_values(spec, t, x, z, controls)
    best = values.max()
    tied = values >= best - ARGMAX_TIE_TOL * max(1.0, abs(best))
    for m in canonical_order(controls):
        if tied[m]:
            return controls[m].copy()
    raise AssertionError("unreachable")


def control_grid(d: int, per_axis: int, max_abs: float) -> np.ndarray:
    """Tensor grid of drifts, ``per_axis`` equispaced values in [-max_abs, max_abs] per axis."""
    if per_axis < 1:
        raise ConfigError(f"controls.per_axis must be >= 1, got {per_axis}")
    axis = np.array([0.0]) if per_axis == 1 else np.linspace(-max_abs, max_abs, per_axis)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def certify_coercivity(spec: LagrangianSpec, horizon, box_radius, dim, controls=None):
    """Tight (c, C) with c(|u|^p+|x|^q+1) <= L <= C(|u|^p+|x|^q+1) on the truncated domain.

    ``box_radius`` is the half-width of the cube; |x| ranges over [0, R*sqrt(d)].
    The ratio is linear-fractional in (|u|^p, |x|^q) so its extremes sit on the
    vertices of the range box.
    """
    gmin, gmax = spec.profile.extremes(horizon)
    bmax = (box_radius * math.sqrt(dim)) ** spec.q
    x_vertices = (0.0, bmax)

    def ratios(a_vals, drift_vals):
        out = []
        for a, dv in zip(a_vals, drift_vals):
            for b in x_vertices:
                out.append((dv + spec.a_x * b + spec.a_0) / (a + b + 1.0))
        return out

    if spec.kind is Kind.TABULATED:
        us = np.array([u for u, _ in spec.table])
        rs = ratios(np.linalg.norm(us, axis=1) ** spec.p, [v for _, v in spec.table])
    elif spec.kind is Kind.BOUNDED_CONTROL:
        amax = spec.u_bound**spec.p
        rs = ratios([0.0, amax], [0.0, spec.a_u * amax])
    else:
        rs = ratios([0.0], [0.0]) + [spec.a_u]
    return gmin * min(rs), gmax * max(rs)


@dataclass(frozen=True)
class GridMeasure:
    """Nonnegative weights on the spatial nodes of a lattice."""

    lattice_ref: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise ConfigError("measure weights must be a flat vector over lattice nodes")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError("measure weights must be finite and nonnegative")
        if w.sum() > 1 + 1e-12:
            raise ConfigError(f"measure total {w.sum()} exceeds 1")

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol=1e-12) -> bool:
        return abs(self.total - 1.0) <= tol


@dataclass(frozen=True)
class SpaceTimeMeasure:
    """Weights indexed by (time step k, spatial node i)."""

    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def marginal(self) -> np.ndarray:
        return self.weights.sum(axis=0)


STEP_RULES = ("sqrt", "fixed", "cutting_plane")


@dataclass
class ProblemConfig:
    lagrangian: LagrangianSpec
    mu: GridMeasure
    nu: GridMeasure
    T: float
    R: float
    h: float
    dt: float
    d: int = 1
    controls: np.ndarray = None
    eps_gap: float = 1e-6
    eps_marginal: float = 1e-6
    eps_mass: float = 1e-3
    step0: float = 1.0
    step_rule: str = "sqrt"
    max_iter: int = 10_000
    norm_every: int = 0
    mc_n: int = 10_000
    mc_seed: int = 0

    def __post_init__(self):
        if self.controls is None:
            self.controls = np.zeros((1, self.d))
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self):
        """All invariant violations, as actionable messages."""
        from .lattice import cfl_number, node_coordinates

        out = []
        if self.d not in (1, 2, 3):
            out.append(f"grid.d must be 1, 2 or 3, got {self.d}")
            return out
        for name in ("T", "R", "h", "dt"):
            if not (getattr(self, name) > 0):
                out.append(f"grid.{name} must be positive, got {getattr(self, name)}")
        if out:
            return out
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9:
            out.append(f"grid.T/grid.dt = {self.T / self.dt} is not an integer")
        if abs(self.R / self.h - round(self.R / self.h)) > 1e-9:
            out.append(f"grid.R/grid.h = {self.R / self.h} is not an integer")
        if self.controls.shape[1] != self.d:
            out.append(f"controls have dimension {self.controls.shape[1]}, grid.d is {self.d}")
        else:
            cfl, worst = cfl_number(self.d, self.h, self.dt, self.controls)
            if cfl > 1 + 1e-12:
                out.append(
                    f"CFL violated: dt*(d/h^2 + |u|_1/h) = {cfl:.6g} > 1 "
                    f"for h={self.h}, dt={self.dt}, u={worst.tolist()}; reduce grid.dt"
                )
        if self.step_rule not in STEP_RULES:
            out.append(f"solver.step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")
        if out:
            return out
        coords = node_coordinates(self.d, self.R, self.h)
        interior = np.all(np.abs(coords) < self.R - 1e-9 * self.h, axis=1)
        for name in ("mu", "nu"):
            m = getattr(self, name)
            if m.weights.shape != (coords.shape[0],):
                out.append(f"measures.{name} has {m.weights.size} weights, lattice has {coords.shape[0]} nodes")
                continue
            if not m.is_probability():
                out.append(f"measures.{name} must have total mass 1, got {m.total!r}")
            bad = np.flatnonzero((m.weights > 0) & ~interior)
            if bad.size:
                out.append(
                    f"measures.{name} has mass outside the open box of radius {self.R} "
                    f"at nodes {coords[bad].tolist()}; enlarge grid.R"
                )
        c = self.coercivity()[0]
        if not c > 0:
            out.append("running cost must be bounded below by c > 0 (set lagrangian.a_0 > 0)")
        if self.lagrangian.coercivity is not None:
            cc, CC = certify_coercivity(self.lagrangian, self.T, self.R, self.d)
            dc, dC = self.lagrangian.coercivity
            if dc > cc * (1 + 1e-12) or dC < CC * (1 - 1e-12):
                out.append(
                    f"declared coercivity (c={dc}, C={dC}) is not certified on the box; "
                    f"admissible bounds are c <= {cc:.6g}, C >= {CC:.6g}"
                )
        return out

    def coercivity(self):
        """Declared (c, C) if present, else the certified pair on the box."""
        if self.lagrangian.coercivity is not None:
            return tuple(self.lagrangian.coercivity)
        return certify_coercivity(self.lagrangian, self.T, self.R, self.d)

    @property
    def K(self) -> int:
        return int(round(self.T / self.dt))
