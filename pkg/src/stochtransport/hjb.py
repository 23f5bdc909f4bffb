"""Backward dynamic programming for the obstacle problem on the lattice.

For an end potential psi the value field is

    J[K] = psi
    J[k] = max(psi, max_u { -L(t_k, x, u) dt + E[J[k+1] | x, u] })

i.e. the finite-MDP version of ``min{J - psi, -dJ/dt - 1/2 lap J - H(t,x,grad J)} = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, StructuralError
from .lattice import Lattice, TransitionKernel
from .model import ARGMAX_TIE_TOL, LagrangianSpec, Profile, running_cost_table

TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Potential:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise StructuralError("potential must be a finite vector over lattice nodes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def shifted(self, kappa):
        return Potential(self.values + kappa, self.normalized)


def as_values(psi) -> np.ndarray:
    if isinstance(psi, Potential):
        return psi.values
    if hasattr(psi, "weights"):
        return np.asarray(psi.weights, dtype=float)
    return np.asarray(psi, dtype=float)


@dataclass(frozen=True, eq=False)
class ValueField:
    values: np.ndarray  # (K+1, N)

    @property
    def K(self):
        return self.values.shape[0] - 1


@dataclass(frozen=True, eq=False)
class Policy:
    """Stop/continue decisions. ``control[k, i]`` indexes ``kernel.controls`` (-1 on stop)."""

    stop: np.ndarray  # (K+1, N) bool
    control: np.ndarray  # (K+1, N) int
    lattice_ref: str = ""

    @property
    def K(self):
        return self.stop.shape[0] - 1

    @classmethod
    def stop_everywhere(cls, lattice: Lattice):
        shape = (lattice.K + 1, lattice.n_nodes)
        return cls(np.ones(shape, dtype=bool), -np.ones(shape, dtype=int), lattice.ref)

    @classmethod
    def from_arrays(cls, lattice: Lattice, stop, control):
        stop = np.array(stop, dtype=bool)
        control = np.array(control, dtype=int)
        stop[-1] = True
        control[stop] = -1
        if stop.shape != (lattice.K + 1, lattice.n_nodes) or control.shape != stop.shape:
            raise StructuralError("policy arrays do not match the lattice")
        return cls(stop, control, lattice.ref)


def step_costs(kernel: TransitionKernel, lagrangian: LagrangianSpec):
    """``L(t_k, x_i, u_m) * dt`` with shape (K, M, N)."""
    lat = kernel.lattice
    return running_cost_table(lagrangian, lat.times[:-1], lat.coords, kernel.controls) * lat.dt


def _best_control(q):
    """Max over axis 0 and the first (canonical-order) index within the tie tolerance."""
    best = q.max(axis=0)
    tied = q >= best - ARGMAX_TIE_TOL * np.maximum(1.0, np.abs(best))
    return best, np.argmax(tied, axis=0)


def continuation(kernel, costs_k, next_values):
    """Continuation value and chosen control for one backward step."""
    return _best_control(-costs_k + kernel.expect(next_values))


def solve_qvi(kernel: TransitionKernel, lagrangian: LagrangianSpec, psi, costs=None):
    """Value field J_psi and the optimal (stop-on-tie) policy."""
    lat = kernel.lattice
    psi = as_values(psi)
    if psi.shape != (lat.n_nodes,):
        raise StructuralError(f"potential has shape {psi.shape}, lattice has {lat.n_nodes} nodes")
    if costs is None:
        costs = step_costs(kernel, lagrangian)
    K, N = lat.K, lat.n_nodes
    J = np.empty((K + 1, N))
    stop = np.ones((K + 1, N), dtype=bool)
    control = -np.ones((K + 1, N), dtype=int)
    J[K] = psi
    for k in range(K - 1, -1, -1):
        cont, arg = continuation(kernel, costs[k], J[k + 1])
        stop[k] = psi >= cont - TIE_TOL
        control[k] = np.where(stop[k], -1, arg)
        J[k] = np.maximum(psi, cont)
    return ValueField(J), Policy(stop, control, lat.ref)


def extract_barrier(value: ValueField, psi) -> np.ndarray:
    """Boolean mask of the space-time stop set {J - psi <= tie tolerance}."""
    J = value.values if isinstance(value, ValueField) else np.asarray(value)
    mask = J - as_values(psi)[None, :] <= TIE_TOL
    mask[-1] = True
    return mask


def stationary_costs(kernel: TransitionKernel, lagrangian: LagrangianSpec):
    """``sup_t L(t, x, u) * dt`` with shape (M, N)."""
    lat = kernel.lattice
    t_bar = lagrangian.bar_time(lat.T)
    return running_cost_table(lagrangian, [t_bar], lat.coords, kernel.controls)[0] * lat.dt


def normalize_potential(kernel, lagrangian, psi, tol=1e-12, max_iter=1_000_000) -> Potential:
    """Value of the stationary stopping problem with the time-maximal cost.

    Iterates ``V <- max(psi, max_u{-Lbar dt + E V})`` from ``V = psi`` until the
    sup-norm change drops below ``tol``. The result dominates psi and is a
    discrete supersolution.
    """
    psi = as_values(psi)
    cbar = stationary_costs(kernel, lagrangian)
    V = psi.copy()
    for _ in range(max_iter):
        new = np.maximum(psi, (-cbar + kernel.expect(V)).max(axis=0))
        change = np.abs(new - V).max()
        V = new
        if change < tol:
            return Potential(V, normalized=True)
    raise NumericalError(f"normalisation did not converge in {max_iter} sweeps", residual=change)


@dataclass
class SupersolutionReport:
    residuals: np.ndarray
    tol: float

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    @property
    def violating_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.residuals > self.tol)

    @property
    def ok(self) -> bool:
        return self.violating_nodes.size == 0


def check_supersolution(kernel, lagrangian, psi, tol=1e-10) -> SupersolutionReport:
    """Residual of one stationary step, ``max_u{-Lbar dt + E psi} - psi``, per node."""
    psi = as_values(psi)
    cbar = stationary_costs(kernel, lagrangian)
    return SupersolutionReport((-cbar + kernel.expect(psi)).max(axis=0) - psi, tol)


@dataclass
class HolderReport:
    delta: float
    B: float
    E: float
    in_regime: bool
    label: str
    scan: list = field(default_factory=list)


HOLDER_E_SCAN = np.concatenate([[0.0], np.logspace(-6, 4, 41)])


def holder_diagnostic(psi, lattice: Lattice, delta: float, p=None) -> HolderReport:
    """Empirical constants in ``psi(x0) - psi(x1) <= B|x1-x0|^delta + E|x1-x0|^2``.

    For each E on a fixed log scan, B is the smallest value making the
    inequality hold over all node pairs. The reported pair minimises the bound
    at the lattice diameter, ``B D^delta + E D^2`` (ties to the smaller E).
    Diagnostic only.
    """
    psi = as_values(psi)
    x = lattice.coords
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    diff = psi[:, None] - psi[None, :]
    off = dist > 0
    dist, diff = dist[off], diff[off]
    D = dist.max() if dist.size else 0.0
    scan = []
    best = None
    for E in HOLDER_E_SCAN:
        B = max(0.0, float(((diff - E * dist**2) / dist**delta).max())) if dist.size else 0.0
        score = B * D**delta + E * D**2
        scan.append((float(E), B))
        if best is None or score < best[0] - 1e-12 * max(1.0, abs(best[0])):
            best = (score, B, float(E))
    if lattice.d == 1:
        in_regime = delta == 1
    else:
        in_regime = p is not None and delta <= 2 - p
    label = "within theorem regime" if in_regime else "outside theorem regime"
    return HolderReport(delta, best[1], best[2], in_regime, label, scan)


@dataclass
class MonotonicityReport:
    profile: Profile
    value_ok: bool
    barrier_ok: bool
    worst_value_violation: float
    rows_checked: int

    @property
    def ok(self):
        return self.value_ok and self.barrier_ok


def check_time_monotonicity(value: ValueField, barrier, profile) -> MonotonicityReport:
    """Exact monotonicity of J in k and of the barrier's time sections.

    Increasing cost in time: J[k] >= J[k+1] and the barrier is closed upward
    in k. Decreasing: both reversed on rows k < K (the forced terminal row is
    left out).
    """
    profile = profile.kind if hasattr(profile, "kind") else Profile(profile)
    J = value.values
    barrier = np.asarray(barrier, dtype=bool)
    if profile is Profile.INCREASING:
        gaps = J[1:] - J[:-1]  # must be <= 0
        later_not_stop = barrier[:-1] & ~barrier[1:]
        rows = J.shape[0] - 1
    elif profile is Profile.DECREASING:
        gaps = J[:-2] - J[1:-1]  # must be <= 0
        later_not_stop = barrier[1:-1] & ~barrier[:-2]
        rows = max(J.shape[0] - 2, 0)
    else:
        raise ValueError("monotonicity check needs a strictly monotone profile")
    worst = float(gaps.max()) if gaps.size else 0.0
    return MonotonicityReport(profile, worst <= 0.0, not later_not_stop.any(), max(worst, 0.0), rows)
