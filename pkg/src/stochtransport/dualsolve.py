"""Outer maximisation of the dual objective over the end potential psi.

The dual function ``D(psi) = psi.nu - J_psi[0].mu`` is concave and piecewise
linear; ``nu - rho_marg(psi)`` is a supergradient, where ``rho_marg`` is the
stopped-mass marginal of the optimal policy for psi. Iterates are deterministic
policies, so a matching primal point generally needs a mixture of them: every
distinct policy visited is kept as a column, and a small master LP finds the
cheapest mixture whose stopped marginal matches nu (primal recovery).

Step rules:

* ``sqrt``  - ``psi += step0/sqrt(n) * (nu - rho_marg)``
* ``fixed`` - ``psi += step0 * (nu - rho_marg)``
* ``cutting_plane`` - psi is the dual solution of the master LP (Kelley's
  method on D, equivalently column generation on the occupation-measure LP);
  terminates finitely because D has finitely many pieces.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError
from .hjb import Policy, Potential, ValueField, as_values, normalize_potential, solve_qvi, step_costs
from .lattice import build_kernel, build_lattice
from .model import running_cost_table
from .transport import (
    OccupationMeasure,
    StoppingDistribution,
    forward_propagate,
    mix,
    primal_cost,
)

log = logging.getLogger(__name__)

MAX_PENALTY = 1e6


def dual_value(psi, value, mu, nu) -> float:
    J = value.values if isinstance(value, ValueField) else np.asarray(value)
    return float(as_values(psi) @ as_values(nu) - J[0] @ as_values(mu))


def duality_gap(cost, dual, psi, marginal_residual):
    """Return ``(gap, gap_adj)``.

    ``gap_adj = gap + |psi|_inf * residual`` is nonnegative for any primal point
    started from mu, whether or not its stopped marginal equals nu.
    """
    gap = cost - dual
    return gap, gap + float(np.abs(as_values(psi)).max()) * marginal_residual


@dataclass
class SolveReport:
    dual_value: float
    marginal_residual: float
    iterations: int
    converged: bool
    primal_cost: float
    gap: float
    gap_adj: float
    boundary_mass: float
    terminal_mass: float
    iterate_residual: float
    mixture_size: int
    step_rule: str
    boundary_flag: bool = False
    history: list = field(default_factory=list)

    def rows(self):
        return [
            ("dual_value", self.dual_value),
            ("primal_cost", self.primal_cost),
            ("gap", self.gap),
            ("gap_adj", self.gap_adj),
            ("marginal_residual", self.marginal_residual),
            ("iterate_residual", self.iterate_residual),
            ("iterations", self.iterations),
            ("converged", int(self.converged)),
            ("boundary_mass", self.boundary_mass),
            ("terminal_mass", self.terminal_mass),
            ("boundary_flag", int(self.boundary_flag)),
            ("mixture_size", self.mixture_size),
            ("step_rule", self.step_rule),
        ]


class SolveResult(NamedTuple):
    psi: Potential
    value: ValueField
    policy: Policy
    eta: OccupationMeasure
    rho: StoppingDistribution
    report: SolveReport
    # (policy, weight) pairs whose mixture yields (eta, rho); a single pair when pure
    components: tuple = ()


class _Master:
    """Restricted master LP over visited policies, with elastic marginal rows.

    ``min sum_i w_i cost_i + W |t|_1  s.t.  sum_i w_i rho_i + t = nu, sum w = 1``.
    Its row duals are a potential bounded by W in sup norm.
    """

    def __init__(self, nu, scale):
        self.nu = nu
        self.scale = scale
        self.weight = 10.0 * scale
        self.marginals = []
        self.costs = []
        self.pairs = []
        self.policies = []
        self.keys = {}

    def add(self, key, marginal, cost, pair, policy) -> bool:
        if key in self.keys:
            return False
        self.keys[key] = len(self.costs)
        self.marginals.append(marginal)
        self.costs.append(cost)
        self.pairs.append(pair)
        self.policies.append(policy)
        return True

    def solve(self):
        n, N = len(self.costs), self.nu.size
        R = np.array(self.marginals).T
        A = np.block([
            [R, np.eye(N), -np.eye(N)],
            [np.ones((1, n)), np.zeros((1, 2 * N))],
        ])
        b = np.concatenate([self.nu, [1.0]])
        c = np.concatenate([self.costs, self.weight * np.ones(2 * N)])
        res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
        if res.status != 0:
            raise NumericalError(f"master LP failed: {res.message}")
        w = np.clip(res.x[:n], 0.0, None)
        w /= w.sum()
        mixed = R @ w
        return {
            "weights": w,
            "marginal": mixed,
            "residual": float(np.abs(mixed - self.nu).sum()),
            "cost": float(np.dot(self.costs, w)),
            "bound": float(res.fun),
            "psi": res.eqlin.marginals[:N].copy(),
        }


def _gauge(psi, mu):
    return psi - psi @ mu


def boundary_mass(eta: OccupationMeasure) -> float:
    """Continuing mass sitting on rows whose kernel folds mass back at the box boundary."""
    clipped = eta.kernel.clipped.T  # (N, M)
    return float((eta.weights * clipped[None, :, :]).sum())


def ascend(config, psi0=None, *, kernel=None, callback=None) -> SolveResult:
    lag = config.lagrangian
    if kernel is None:
        kernel = build_kernel(build_lattice(config), config.controls)
    lat = kernel.lattice
    mu, nu = config.mu.weights, config.nu.weights
    costs = step_costs(kernel, lag)
    psi = np.zeros(lat.n_nodes) if psi0 is None else as_values(psi0).astype(float).copy()
    psi = _gauge(psi, mu)

    L_max = float(running_cost_table(lag, lat.times, lat.coords, kernel.controls).max())
    master = _Master(nu, scale=L_max * lat.T + 1.0)
    recovered = None
    best = None
    history = []
    initial_residual = None
    bad_streak = 0
    converged = False
    n = 0
    for n in range(1, config.max_iter + 1):
        if config.norm_every and n > 1 and (n - 1) % config.norm_every == 0:
            psi = _gauge(normalize_potential(kernel, lag, psi).values, mu)
        value, policy = solve_qvi(kernel, lag, psi, costs)
        eta, rho = forward_propagate(kernel, policy, mu)
        cost = primal_cost(lag, eta)
        dv = dual_value(psi, value, mu, nu)
        g = nu - rho.marginal
        residual = float(np.abs(g).sum())
        if best is None or dv > best[0]:
            best = (dv, psi.copy(), value, policy, (eta, rho), residual)

        key = policy.stop.tobytes() + policy.control.tobytes()
        if master.add(key, rho.marginal.copy(), cost, (eta, rho), policy) or recovered is None:
            recovered = master.solve()
        elif (recovered["residual"] > config.eps_marginal
              and np.abs(recovered["psi"]).max() >= master.weight * (1 - 1e-9)
              and master.weight < MAX_PENALTY * master.scale):
            # no new column and the potential sits on the box: the box is too small
            master.weight *= 10.0
            recovered = master.solve()

        best_dv, best_psi = best[0], best[1]
        if residual <= recovered["residual"] and cost <= recovered["cost"]:
            p_cost, p_res = cost, residual
        else:
            p_cost, p_res = recovered["cost"], recovered["residual"]
        gap, gap_adj = duality_gap(p_cost, best_dv, best_psi, p_res)
        history.append({"iteration": n, "dual_value": dv, "residual": residual,
                        "recovered_residual": p_res, "gap_adj": gap_adj})
        if callback is not None:
            callback(history[-1])
        if p_res <= config.eps_marginal and gap_adj <= config.eps_gap * max(1.0, abs(p_cost)):
            converged = True
            break

        if initial_residual is None:
            initial_residual = residual
        bad_streak = bad_streak + 1 if residual > 10 * initial_residual > 0 else 0
        if bad_streak >= 100:
            raise NumericalError("dual ascent diverged: residual above 10x its initial value "
                                 "for 100 consecutive iterations", residual=residual, history=history)

        if config.step_rule == "cutting_plane":
            psi = recovered["psi"]
        elif config.step_rule == "fixed":
            psi = psi + config.step0 * g
        else:
            psi = psi + config.step0 / math.sqrt(n) * g
        psi = _gauge(psi, mu)

    dv, psi_best, value, policy, pure_pair, pure_res = best
    use_pure = pure_res <= recovered["residual"] and pure_pair[0] is not None and \
        primal_cost(lag, pure_pair[0]) <= recovered["cost"]
    if use_pure:
        eta, rho = pure_pair
        size = 1
        components = ((policy, 1.0),)
    else:
        active = np.flatnonzero(recovered["weights"] > 0)
        eta, rho = mix([master.pairs[i] for i in active], recovered["weights"][active])
        size = active.size
        components = tuple((master.policies[i], float(recovered["weights"][i])) for i in active)
    cost = primal_cost(lag, eta)
    res = float(np.abs(rho.marginal - nu).sum())
    gap, gap_adj = duality_gap(cost, dv, psi_best, res)
    bmass = boundary_mass(eta)
    report = SolveReport(
        dual_value=dv,
        marginal_residual=res,
        iterations=n,
        converged=converged,
        primal_cost=cost,
        gap=gap,
        gap_adj=gap_adj,
        boundary_mass=bmass,
        terminal_mass=float(rho.weights[-1].sum()),
        iterate_residual=pure_res,
        mixture_size=int(size),
        step_rule=config.step_rule,
        boundary_flag=bmass > config.eps_mass,
        history=history,
    )
    if report.boundary_flag:
        log.warning("boundary occupancy %.3g exceeds eps_mass %.3g; enlarge grid.R", bmass, config.eps_mass)
    return SolveResult(Potential(psi_best), value, policy, eta, rho, report, components)
