"""Ground truth for micro instances.

``lp_solve`` solves the constrained problem exactly as a linear program over
occupation measures with explicit stop-mass variables (randomised stopping is
allowed). ``enumerate_policies`` evaluates every deterministic Markov
stop/continue policy and keeps the best value per node.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import ConfigError, InfeasibleError, NumericalError
from .hjb import as_values, step_costs
from .lattice import TransitionKernel, build_kernel, build_lattice

MAX_LP_VARIABLES = 2000
MAX_POLICIES = 10**6


@dataclass
class LinearProgram:
    """Equality-form LP ``min cost.x  s.t.  A x = b, x >= 0``.

    Variable layout: continuation mass ``c[k, i, m]`` for k < K, followed by
    stop mass ``s[k, i]`` for k <= K. Rows: flow balance per (k, node), then
    the target marginal per node.
    """

    A: sp.csr_matrix
    b: np.ndarray
    cost: np.ndarray
    K: int
    N: int
    M: int

    @property
    def n_cont(self):
        return self.K * self.N * self.M

    def split(self, x):
        c = np.zeros((self.K + 1, self.N, self.M))
        c[:-1] = x[: self.n_cont].reshape(self.K, self.N, self.M)
        return c, x[self.n_cont:].reshape(self.K + 1, self.N)

    def pack(self, c, s):
        return np.concatenate([np.asarray(c)[:-1].ravel(), np.asarray(s).ravel()])


def build_lp(kernel: TransitionKernel, lagrangian, mu, nu) -> LinearProgram:
    lat = kernel.lattice
    K, N, M = lat.K, lat.n_nodes, kernel.n_controls
    n_cont = K * N * M
    n_var = n_cont + (K + 1) * N
    if n_var > MAX_LP_VARIABLES:
        raise ConfigError(f"LP oracle refuses {n_var} variables (guard {MAX_LP_VARIABLES})")

    def cidx(k, i, m):
        return (k * N + i) * M + m

    def sidx(k, i):
        return n_cont + k * N + i

    rows, cols, vals = [], [], []
    for k in range(K + 1):
        for i in range(N):
            r = k * N + i
            rows.append(r), cols.append(sidx(k, i)), vals.append(1.0)
            if k < K:
                for m in range(M):
                    rows.append(r), cols.append(cidx(k, i, m)), vals.append(1.0)
    for k in range(K):
        for i in range(N):
            for m in range(M):
                for j, p in kernel.row(i, m).items():
                    if p != 0.0:
                        rows.append((k + 1) * N + j), cols.append(cidx(k, i, m)), vals.append(-p)
    for k in range(K + 1):
        for i in range(N):
            rows.append((K + 1) * N + i), cols.append(sidx(k, i)), vals.append(1.0)
    A = sp.csr_matrix((vals, (rows, cols)), shape=((K + 2) * N, n_var))
    b = np.zeros((K + 2) * N)
    b[:N] = as_values(mu)
    b[(K + 1) * N:] = as_values(nu)
    cost = np.zeros(n_var)
    # step_costs is (K, M, N); the LP orders continuation variables as (k, i, m)
    cost[:n_cont] = step_costs(kernel, lagrangian).transpose(0, 2, 1).ravel()
    return LinearProgram(A, b, cost, K, N, M)


@dataclass
class LPResult:
    objective: float
    dual_objective: float
    cont: np.ndarray  # (K+1, N, M)
    stop: np.ndarray  # (K+1, N)
    J: np.ndarray  # (K+1, N)
    psi: np.ndarray  # (N,)
    reduced_costs: np.ndarray
    complementarity: float
    lp: LinearProgram = field(repr=False, default=None)


def farkas_certificate(lp: LinearProgram):
    """Phase-one LP on elastic rows. Returns (y, b.y, max A^T y); b.y > 0 with A^T y <= 0 proves infeasibility."""
    n_rows = lp.A.shape[0]
    eye = sp.identity(n_rows, format="csr")
    A1 = sp.hstack([lp.A, eye, -eye], format="csr")
    c1 = np.concatenate([np.zeros(lp.A.shape[1]), np.ones(2 * n_rows)])
    res = linprog(c1, A_eq=A1, b_eq=lp.b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"phase-one LP failed: {res.message}")
    y = res.eqlin.marginals
    return y, float(lp.b @ y), float((lp.A.T @ y).max())


def solve_lp(lp: LinearProgram) -> LPResult:
    res = linprog(lp.cost, A_eq=lp.A, b_eq=lp.b, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        y, gap, worst = farkas_certificate(lp)
        raise InfeasibleError(
            f"target marginal unreachable: certificate has b.y = {gap:.3g} > 0 with max A^T y = {worst:.3g}",
            certificate={"y": y, "b_dot_y": gap, "max_AT_y": worst},
        )
    if res.status != 0:
        raise NumericalError(f"LP solver failed: {res.message}")
    x = res.x
    y = res.eqlin.marginals
    N, K = lp.N, lp.K
    c, s = lp.split(x)
    reduced = lp.cost - lp.A.T @ y
    return LPResult(
        objective=float(lp.cost @ x),
        dual_objective=float(lp.b @ y),
        cont=c,
        stop=s,
        J=-y[: (K + 1) * N].reshape(K + 1, N),
        psi=y[(K + 1) * N:].copy(),
        reduced_costs=reduced,
        complementarity=float(np.abs(x * reduced).max()),
        lp=lp,
    )


def lp_solve_instance(kernel, lagrangian, mu, nu) -> LPResult:
    return solve_lp(build_lp(kernel, lagrangian, mu, nu))


def lp_solve(config) -> LPResult:
    kernel = build_kernel(build_lattice(config), config.controls)
    return lp_solve_instance(kernel, config.lagrangian, config.mu, config.nu)


def hjb_inequality_violation(kernel, lagrangian, J, psi) -> float:
    """Largest violation of the obstacle and one-step inequalities by a pair (J, psi)."""
    costs = step_costs(kernel, lagrangian)
    psi = as_values(psi)
    worst = float((psi[None, :] - J).max())
    for k in range(kernel.lattice.K):
        worst = max(worst, float((-costs[k] + kernel.expect(J[k + 1]) - J[k][None, :]).max()))
    return worst


def enumerate_policies(kernel: TransitionKernel, lagrangian, psi) -> np.ndarray:
    """Best value over all deterministic Markov policies, for every (k, node).

    Each policy assigns to every (k < K, node) either stop or one control; its
    value is obtained by plain policy evaluation, and the table returned holds
    the elementwise maximum over all policies.
    """
    lat = kernel.lattice
    K, N, M = lat.K, lat.n_nodes, kernel.n_controls
    psi = as_values(psi)
    n_choices = K * N
    count = (M + 1) ** n_choices
    if count > MAX_POLICIES:
        raise ConfigError(f"{count} policies exceed the enumeration guard {MAX_POLICIES}")
    codes = np.arange(count)
    digits = np.empty((count, n_choices), dtype=np.int64)
    for j in range(n_choices):
        digits[:, j] = codes % (M + 1)
        codes = codes // (M + 1)
    digits = digits.reshape(count, K, N)  # 0 = stop, m+1 = control m
    P = np.stack([kernel.dense(m) for m in range(M)])
    costs = step_costs(kernel, lagrangian)
    best = np.empty((K + 1, N))
    V = np.broadcast_to(psi, (count, N)).copy()
    best[K] = psi
    for k in range(K - 1, -1, -1):
        new = np.broadcast_to(psi, (count, N)).copy()
        for m in range(M):
            cont = -costs[k, m][None, :] + V @ P[m].T
            sel = digits[:, k, :] == m + 1
            new[sel] = cont[sel]
        V = new
        best[k] = V.max(axis=0)
    return best
