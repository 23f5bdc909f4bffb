"""Euler-Maruyama simulation of the controlled diffusion stopped at the barrier.

Paths move with Gaussian increments ``u dt + sqrt(dt) xi``; control and barrier
membership are looked up at the nearest lattice node, so the simulated process
follows the same discrete policy as the forward propagator while testing the
continuum reading of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .hjb import Policy, ValueField, as_values
from .lattice import TransitionKernel
from .model import running_cost_table


@dataclass(frozen=True, eq=False)
class PathBatch:
    stop_step: np.ndarray  # (N,)
    stop_node: np.ndarray  # (N,)
    stop_location: np.ndarray  # (N, d)
    cost: np.ndarray  # (N,)
    checkpoints: np.ndarray  # (C,)
    martingale: np.ndarray  # (N, C): M at min(checkpoint, tau)
    checkpoint_node: np.ndarray  # (N, C): node at the checkpoint, -1 once stopped
    barrier_hits_before_stop: int
    dt: float
    h: float

    @property
    def n_paths(self) -> int:
        return self.stop_step.size

    def summary(self):
        return {
            "n_paths": self.n_paths,
            "mean_cost": float(self.cost.mean()),
            "mean_stop_step": float(self.stop_step.mean()),
            "mean_location": self.stop_location.mean(axis=0).tolist(),
        }


def default_checkpoints(K, count=5):
    return np.unique(np.rint(np.linspace(0, K, count)).astype(int))


def _simulate_shard(rng, n, kernel, stop_masks, controls, weights, J, step_cost, mu, checkpoints, dynamics):
    lat = kernel.lattice
    d, K, dt, R = lat.d, lat.K, lat.dt, lat.R
    start = rng.choice(lat.n_nodes, size=n, p=mu / mu.sum())
    comp = rng.choice(len(weights), size=n, p=weights) if len(weights) > 1 else np.zeros(n, dtype=int)
    X = lat.coords[start].copy()
    cost = np.zeros(n)
    M = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    stop_step = np.full(n, K)
    stop_node = np.zeros(n, dtype=int)
    stop_loc = np.zeros((n, d))
    mart = np.zeros((n, checkpoints.size))
    cp_node = -np.ones((n, checkpoints.size), dtype=int)
    early_hits = 0
    sqdt = math.sqrt(dt)
    for k in range(K + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        node = lat.nearest_node(X[idx])
        M[idx] = J[k, node] - cost[idx]
        stopping = stop_masks[comp[idx], k, node] | (k == K)
        cps = np.flatnonzero(checkpoints == k)
        for c in cps:
            cont_idx = idx[~stopping]
            cp_node[cont_idx, c] = node[~stopping]
            early_hits += int(stop_masks[comp[cont_idx], k, node[~stopping]].sum())
        s_idx = idx[stopping]
        stop_step[s_idx] = k
        stop_node[s_idx] = node[stopping]
        stop_loc[s_idx] = X[s_idx]
        alive[s_idx] = False
        for c in np.flatnonzero(checkpoints >= k):
            mart[idx, c] = M[idx]
        if k == K:
            break
        g_idx, g_node = idx[~stopping], node[~stopping]
        m = controls[comp[g_idx], k, g_node]
        u = kernel.controls[m]
        cost[g_idx] += step_cost[k, m, g_node]
        if dynamics == "chain":
            cum = np.cumsum(kernel.probs[m, g_node], axis=1)
            slot = (rng.random((g_idx.size, 1)) > cum).sum(axis=1)
            slot = np.minimum(slot, cum.shape[1] - 1)
            X[g_idx] = lat.coords[kernel.neighbors[g_node, slot]]
        else:
            X[g_idx] = np.clip(X[g_idx] + u * dt + sqdt * rng.standard_normal((g_idx.size, d)), -R, R)
    return stop_step, stop_node, stop_loc, cost, mart, cp_node, early_hits


def simulate(policy, value: ValueField, psi, mu, n_paths: int, seed: int, *,
             kernel: TransitionKernel, lagrangian, barrier=None, checkpoints=None, shards=1,
             dynamics="gaussian") -> PathBatch:
    """Simulate ``n_paths`` stopped paths; fully determined by ``seed`` and ``shards``.

    ``policy`` is a Policy or a sequence of ``(Policy, weight)`` pairs (the
    mixture returned by the dual solve); each path draws its component once at
    time 0, which realises the randomised stopping rule. A path stops at the
    first node its policy marks as stop, plus any node in ``barrier`` if given.
    ``M = J[k, node] - accumulated cost`` is recorded at the checkpoints.

    ``dynamics="chain"`` replaces the Gaussian step by a jump drawn from the
    transition kernel; the value field is then an exact martingale along the
    optimal policy, which makes it a check of the test machinery itself.
    """
    if dynamics not in ("gaussian", "chain"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    lat = kernel.lattice
    pairs = [(policy, 1.0)] if isinstance(policy, Policy) else list(policy)
    weights = np.array([w for _, w in pairs], dtype=float)
    weights /= weights.sum()
    stop_masks = np.stack([p.stop for p, _ in pairs])
    if barrier is not None:
        stop_masks = stop_masks | np.asarray(barrier, dtype=bool)[None]
    controls = np.stack([p.control for p, _ in pairs])
    checkpoints = default_checkpoints(lat.K) if checkpoints is None else np.asarray(checkpoints, dtype=int)
    step_cost = running_cost_table(lagrangian, lat.times[:-1], lat.coords, kernel.controls) * lat.dt
    mu = as_values(mu)
    J = value.values
    sizes = [n_paths // shards + (1 if i < n_paths % shards else 0) for i in range(shards)]
    parts = []
    for size, ss in zip(sizes, np.random.SeedSequence(seed).spawn(shards)):
        if size:
            parts.append(_simulate_shard(np.random.default_rng(ss), size, kernel, stop_masks,
                                         controls, weights, J, step_cost, mu, checkpoints, dynamics))
    cat = [np.concatenate([p[i] for p in parts]) for i in range(6)]
    return PathBatch(cat[0], cat[1], cat[2], cat[3], checkpoints, cat[4], cat[5],
                     sum(p[6] for p in parts), lat.dt, lat.h)


def discretisation_allowance(dt, h, scale=1.0):
    return scale * (math.sqrt(dt) + h)


@dataclass
class DistributionReport:
    l1: float
    bound: float
    allowance: float
    n_bins: int
    z_scores: np.ndarray
    low_power: bool

    @property
    def passed(self) -> bool:
        return self.l1 <= self.bound


def verify_distribution(batch: PathBatch, rho, n_nodes=None) -> DistributionReport:
    """Compare the empirical stopped histogram with the stopped-mass marginal."""
    target = rho.marginal if hasattr(rho, "marginal") else np.asarray(rho, dtype=float)
    if target.ndim == 2:
        target = target.sum(axis=0)
    n_nodes = target.size if n_nodes is None else n_nodes
    N = batch.n_paths
    hist = np.bincount(batch.stop_node, minlength=n_nodes) / N
    l1 = float(np.abs(hist - target).sum())
    n_bins = int(((hist > 0) | (target > 0)).sum())
    allowance = discretisation_allowance(batch.dt, batch.h)
    bound = 3.0 * (math.sqrt(n_bins / N) + allowance)
    se = np.sqrt(np.maximum(target * (1 - target), 1e-300) / N)
    z = np.where(target > 0, (hist - target) / se, np.where(hist > 0, np.inf, 0.0))
    return DistributionReport(l1, bound, allowance, n_bins, z, low_power=bound >= 2.0)


@dataclass
class CostReport:
    mean: float
    standard_error: float
    target: float
    allowance: float

    @property
    def passed(self) -> bool:
        return abs(self.mean - self.target) <= 3 * self.standard_error + self.allowance


def verify_cost(batch: PathBatch, target_cost, kernel: TransitionKernel, lagrangian) -> CostReport:
    """Mean running cost against the forward-propagated cost.

    The allowance ``(sqrt(dt) + h) * max L * T`` bounds the cost effect of the
    O(sqrt(dt) + h) mismatch between the Gaussian and lattice dynamics.
    """
    lat = kernel.lattice
    L_max = float(running_cost_table(lagrangian, lat.times, lat.coords, kernel.controls).max())
    allowance = discretisation_allowance(lat.dt, lat.h, L_max * lat.T)
    se = float(batch.cost.std(ddof=1) / math.sqrt(batch.n_paths)) if batch.n_paths > 1 else math.inf
    return CostReport(float(batch.cost.mean()), se, float(target_cost), allowance)


@dataclass
class MartingaleReport:
    pairs: list  # (s, t, mean, lo, hi)
    level: float

    @property
    def martingale_ok(self) -> bool:
        return all(lo <= 0.0 <= hi for _, _, _, lo, hi in self.pairs)

    @property
    def supermartingale_ok(self) -> bool:
        return all(lo <= 0.0 for _, _, _, lo, _ in self.pairs)


def martingale_test(batch: PathBatch, value=None, lagrangian=None, level=0.99) -> MartingaleReport:
    """Confidence intervals for E[M_{t^tau} - M_{s^tau}] over all checkpoint pairs s < t.

    M is recorded during simulation, so ``value`` and ``lagrangian`` are
    accepted for interface symmetry only.
    """
    z = norm.ppf(0.5 + level / 2)
    pairs = []
    C = batch.checkpoints.size
    N = batch.n_paths
    for a in range(C):
        for b in range(a + 1, C):
            inc = batch.martingale[:, b] - batch.martingale[:, a]
            mean = float(inc.mean())
            half = z * float(inc.std(ddof=1)) / math.sqrt(N) if N > 1 else math.inf
            pairs.append((int(batch.checkpoints[a]), int(batch.checkpoints[b]), mean, mean - half, mean + half))
    return MartingaleReport(pairs, level)
