"""Forward propagation of mass under a stop/continue policy.

Produces the discrete occupation measure (mass continuing from each node with
each control) and the stopping distribution over (time step, node).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .hjb import Policy
from .lattice import TransitionKernel
from .model import GridMeasure, LagrangianSpec, SpaceTimeMeasure, running_cost_table

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    kernel: TransitionKernel
    weights: np.ndarray  # (K+1, N, M), zero on the last row
    alive: np.ndarray  # (K+1, N)
    conservation_error: float = 0.0

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class StoppingDistribution:
    rho: SpaceTimeMeasure

    @property
    def weights(self) -> np.ndarray:
        return self.rho.weights

    @property
    def marginal(self) -> np.ndarray:
        return self.rho.marginal

    @property
    def total(self) -> float:
        return self.rho.total


def _weights(mu):
    return mu.weights if isinstance(mu, GridMeasure) else np.asarray(mu, dtype=float)


def forward_propagate(kernel: TransitionKernel, policy: Policy, mu):
    lat = kernel.lattice
    if policy.lattice_ref and policy.lattice_ref != lat.ref:
        raise StructuralError(f"policy built on {policy.lattice_ref}, kernel on {lat.ref}")
    K, N, M = lat.K, lat.n_nodes, kernel.n_controls
    if policy.stop.shape != (K + 1, N):
        raise StructuralError(f"policy shape {policy.stop.shape} does not match lattice {(K + 1, N)}")
    mu = _weights(mu)
    m = np.zeros((K + 1, N))
    c = np.zeros((K + 1, N, M))
    rho = np.zeros((K + 1, N))
    m[0] = mu
    stopped = 0.0
    worst = 0.0
    nodes = np.arange(N)
    for k in range(K + 1):
        stop = policy.stop[k] | (k == K)
        rho[k] = np.where(stop, m[k], 0.0)
        stopped += rho[k].sum()
        if k == K:
            break
        go = ~stop
        c[k, nodes[go], policy.control[k, go]] = m[k, go]
        m[k + 1] = kernel.push(c[k].T)
        worst = max(worst, abs(m[k + 1].sum() + stopped - mu.sum()))
    worst = max(worst, abs(stopped - mu.sum()))
    eta = OccupationMeasure(kernel, c, m, worst)
    return eta, StoppingDistribution(SpaceTimeMeasure(rho))


def mix(pairs, weights):
    """Convex combination of (eta, rho) pairs produced on the same kernel."""
    weights = np.asarray(weights, dtype=float)
    eta0 = pairs[0][0]
    c = sum(w * e.weights for w, (e, _) in zip(weights, pairs))
    m = sum(w * e.alive for w, (e, _) in zip(weights, pairs))
    r = sum(w * s.weights for w, (_, s) in zip(weights, pairs))
    err = max(e.conservation_error for e, _ in pairs)
    return OccupationMeasure(eta0.kernel, c, m, err), StoppingDistribution(SpaceTimeMeasure(r))


def primal_cost(lagrangian: LagrangianSpec, eta: OccupationMeasure) -> float:
    """``sum_k,x,u L(t_k, x, u) dt c[k, x, u]``."""
    lat = eta.kernel.lattice
    L = running_cost_table(lagrangian, lat.times[:-1], lat.coords, eta.kernel.controls)
    return float(lat.dt * np.einsum("kmi,kim->", L, eta.weights[:-1]))


def moment_constant(kernel: TransitionKernel, c: float) -> float:
    """Explicit C with ``E|X_tau|^2 - E|X_0|^2 <= C * cost`` on this chain.

    One step from x under u changes ``E|X|^2`` by at most
    ``dt (d + h|u|_1 + 2 x.u) <= dt (d + sqrt(d)(2R + h)|u|)`` (folding at the
    boundary only lowers it), and each step pays at least ``c dt``.
    """
    lat = kernel.lattice
    umax = float(np.linalg.norm(kernel.controls, axis=1).max())
    return (lat.d + math.sqrt(lat.d) * (2 * lat.R + lat.h) * umax) / c


@dataclass
class MomentReport:
    lhs: float
    rhs: float
    constant: float
    passed: bool


def check_moment_bound(mu, rho: StoppingDistribution, cost, kernel: TransitionKernel, c) -> MomentReport:
    coords = kernel.lattice.coords
    sq = (coords**2).sum(axis=1)
    C = moment_constant(kernel, c)
    lhs = float(sq @ rho.marginal)
    base = float(sq @ _weights(mu))
    rhs = base + C * cost
    return MomentReport(lhs, rhs, C, lhs <= rhs + 1e-12 * max(1.0, abs(rhs)))


def dirichlet_energy(eta: OccupationMeasure) -> float:
    """Time-integrated discrete Dirichlet energy of the alive density (logged, not asserted)."""
    lat = eta.kernel.lattice
    f = eta.alive / lat.h**lat.d
    total = 0.0
    for s in range(1, eta.kernel.neighbors.shape[1], 2):
        nb = eta.kernel.neighbors[:, s]
        total += float((((f - f[:, nb]) / lat.h) ** 2).sum())
    energy = total * lat.dt * lat.h**lat.d
    log.debug("dirichlet energy of alive density: %.6g", energy)
    return energy
