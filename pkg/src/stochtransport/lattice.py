"""Space-time lattice on [0,T] x [-R,R]^d and the controlled Markov-chain kernel.

The kernel is the upwind Markov-chain approximation of ``1/2 Laplacian + u.grad``:
from an interior node x under drift u the chain jumps to ``x +/- h e_j`` with
probability ``dt * (1/(2h^2) + u_j^{+/-}/h)`` and stays put otherwise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError
from .model import canonical_order


def node_coordinates(d, R, h):
    n = int(round(R / h))
    axis = h * np.arange(-n, n + 1)
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)


def cfl_number(d, h, dt, controls):
    """Largest ``dt*(d/h^2 + |u|_1/h)`` over the controls, and the worst control."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    l1 = np.abs(controls).sum(axis=1)
    m = int(np.argmax(l1))
    return dt * (d / h**2 + l1[m] / h), controls[m]


@dataclass(frozen=True, eq=False)
class Lattice:
    d: int
    h: float
    dt: float
    n_axis: int
    K: int
    coords: np.ndarray

    @property
    def R(self) -> float:
        return self.h * (self.n_axis - 1) / 2

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.K + 1)

    @property
    def ref(self) -> str:
        return f"d={self.d};h={self.h!r};n={self.n_axis};dt={self.dt!r};K={self.K}"

    def multi_index(self):
        """Integer per-axis indices of every node, shape (N, d)."""
        return np.rint((self.coords + self.R) / self.h).astype(int)

    def flat_index(self, multi):
        multi = np.asarray(multi)
        strides = self.n_axis ** np.arange(self.d - 1, -1, -1)
        return multi @ strides

    def nearest_node(self, points):
        """Index of the lattice node nearest to each point (points clipped to the box)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.rint((points + self.R) / self.h).astype(int)
        np.clip(idx, 0, self.n_axis - 1, out=idx)
        return self.flat_index(idx)

    def interior_mask(self):
        mi = self.multi_index()
        return np.all((mi > 0) & (mi < self.n_axis - 1), axis=1)

    def index_of(self, point):
        i = int(self.nearest_node(point)[0])
        if not np.allclose(self.coords[i], point, atol=1e-9 * self.h):
            raise ConfigError(f"point {list(np.atleast_1d(point))} is not a lattice node")
        return i


def make_lattice(d, R, h, T, dt) -> Lattice:
    problems = []
    if d not in (1, 2, 3):
        problems.append(f"dimension must be 1, 2 or 3, got {d}")
    if not (R > 0 and h > 0 and T > 0 and dt > 0):
        problems.append("R, h, T, dt must all be positive")
    if problems:
        raise ConfigError(problems)
    if abs(T / dt - round(T / dt)) > 1e-9:
        problems.append(f"T/dt = {T / dt} is not an integer")
    if abs(R / h - round(R / h)) > 1e-9:
        problems.append(f"R/h = {R / h} is not an integer")
    if round(T / dt) < 1:
        problems.append("need at least one time step")
    if problems:
        raise ConfigError(problems)
    n = int(round(R / h))
    return Lattice(d=d, h=float(h), dt=float(dt), n_axis=2 * n + 1, K=int(round(T / dt)),
                   coords=node_coordinates(d, R, h))


def build_lattice(config) -> Lattice:
    return make_lattice(config.d, config.R, config.h, config.T, config.dt)


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Sparse kernel rows.

    ``probs[m, i, s]`` is the probability of moving from node ``i`` to
    ``neighbors[i, s]`` under control ``controls[m]``. Slot 0 is the node
    itself; slots ``2j+1`` / ``2j+2`` are the +/- neighbours along axis j (or the
    node itself where that neighbour lies outside the box).
    """

    lattice: Lattice
    controls: np.ndarray
    probs: np.ndarray
    neighbors: np.ndarray
    clipped: np.ndarray

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def expect(self, values):
        """``E[m, i] = sum_y P(y | i, u_m) values[y]``."""
        return np.einsum("mis,is->mi", self.probs, values[self.neighbors])

    def push(self, mass):
        """Scatter ``mass[m, i]`` forward one step; returns the mass per target node."""
        flows = mass[:, :, None] * self.probs
        return np.bincount(
            np.broadcast_to(self.neighbors, flows.shape).ravel(),
            weights=flows.ravel(),
            minlength=self.lattice.n_nodes,
        )

    def row(self, i, m):
        """Merged sparse row ``{neighbor: probability}`` for node i and control index m."""
        out = {}
        for s in range(self.neighbors.shape[1]):
            j = int(self.neighbors[i, s])
            out[j] = out.get(j, 0.0) + float(self.probs[m, i, s])
        return out

    def dense(self, m):
        P = np.zeros((self.lattice.n_nodes, self.lattice.n_nodes))
        rows = np.repeat(np.arange(self.lattice.n_nodes), self.neighbors.shape[1])
        np.add.at(P, (rows, self.neighbors.ravel()), self.probs[m].ravel())
        return P


def build_kernel(lattice: Lattice, controls) -> TransitionKernel:
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] == 0:
        raise ConfigError("control set is empty")
    if controls.shape[1] != lattice.d:
        raise StructuralError(f"controls have dimension {controls.shape[1]}, lattice has {lattice.d}")
    h, dt, d = lattice.h, lattice.dt, lattice.d
    cfl, worst = cfl_number(d, h, dt, controls)
    if cfl > 1 + 1e-12:
        raise ConfigError(
            f"CFL violated: dt*(d/h^2 + |u|_1/h) = {cfl:.6g} > 1 for h={h}, dt={dt}, u={worst.tolist()}"
        )
    controls = controls[canonical_order(controls)]
    M, N, S = controls.shape[0], lattice.n_nodes, 2 * d + 1

    mi = lattice.multi_index()
    neighbors = np.empty((N, S), dtype=int)
    neighbors[:, 0] = np.arange(N)
    folded = np.zeros((N, S), dtype=bool)
    for j in range(d):
        for s, step in ((2 * j + 1, 1), (2 * j + 2, -1)):
            nb = mi.copy()
            nb[:, j] += step
            out = (nb[:, j] < 0) | (nb[:, j] >= lattice.n_axis)
            nb[out, j] -= step
            neighbors[:, s] = lattice.flat_index(nb)
            folded[:, s] = out

    probs = np.empty((M, N, S))
    for j in range(d):
        up = dt * (0.5 / h**2 + np.maximum(controls[:, j], 0.0) / h)
        down = dt * (0.5 / h**2 + np.maximum(-controls[:, j], 0.0) / h)
        probs[:, :, 2 * j + 1] = up[:, None]
        probs[:, :, 2 * j + 2] = down[:, None]
    probs[:, :, 0] = 1.0 - probs[:, :, 1:].sum(axis=2)
    clipped = np.broadcast_to(folded.any(axis=1), (M, N)).copy()
    for arr in (controls, probs, neighbors, clipped):
        arr.setflags(write=False)
    return TransitionKernel(lattice=lattice, controls=controls, probs=probs,
                            neighbors=neighbors, clipped=clipped)


def dump_kernel(kernel: TransitionKernel, path) -> None:
    """Write the kernel as ``node,control,neighbor,probability`` lines (merged rows)."""
    with open(path, "w") as fh:
        fh.write("node,control,neighbor,probability\n")
        for m in range(kernel.n_controls):
            for i in range(kernel.lattice.n_nodes):
                for j, p in sorted(kernel.row(i, m).items()):
                    fh.write(f"{i},{m},{j},{p:.17g}\n")
