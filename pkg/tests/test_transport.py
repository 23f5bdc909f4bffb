import numpy as np
import pytest

from instances import random_policy, tiny_configs
from stochtransport.errors import StructuralError
from stochtransport.hjb import Policy
from stochtransport.lattice import build_kernel, build_lattice, make_lattice
from stochtransport.model import GridMeasure, LagrangianSpec, control_grid
from stochtransport.transport import (
    check_moment_bound,
    dirichlet_energy,
    forward_propagate,
    moment_constant,
    primal_cost,
)

QUAD = LagrangianSpec(kind="power_law", p=2, a_u=0.5, a_0=1.0)


def delta0(lat):
    w = np.zeros(lat.n_nodes)
    w[lat.index_of(np.zeros(lat.d))] = 1.0
    return GridMeasure(lat.ref, w)


def test_stop_everywhere():
    lat = make_lattice(1, 2.0, 1.0, 1.0, 0.5)
    k = build_kernel(lat, [[0.0]])
    mu = GridMeasure(lat.ref, [0.0, 0.2, 0.5, 0.3, 0.0])
    eta, rho = forward_propagate(k, Policy.stop_everywhere(lat), mu)
    assert np.array_equal(rho.weights[0], mu.weights) and rho.weights[1:].sum() == 0
    assert eta.total == 0 and primal_cost(QUAD, eta) == 0


def test_one_kernel_row():
    lat = make_lattice(1, 2.0, 1.0, 1.0, 0.5)
    k = build_kernel(lat, [[0.0]])
    stop = np.ones((3, 5), bool)
    stop[0, 2] = False
    pol = Policy.from_arrays(lat, stop, np.zeros((3, 5), int))
    eta, rho = forward_propagate(k, pol, delta0(lat))
    assert rho.weights[1].tolist() == [0.0, 0.25, 0.5, 0.25, 0.0]
    assert primal_cost(QUAD, eta) == 0.5


def test_two_step_hand_propagation():
    lat = make_lattice(1, 2.0, 1.0, 0.5, 0.25)
    k = build_kernel(lat, [[-1.0], [0.0], [1.0]])  # canonical order: 0, -1, 1
    stop = np.ones((3, 5), bool)
    control = np.zeros((3, 5), int)
    stop[0, 2], control[0, 2] = False, 2  # u = +1 from the origin
    stop[1, 3], control[1, 3] = False, 0  # u = 0 from x = 1
    eta, rho = forward_propagate(k, Policy.from_arrays(lat, stop, control), delta0(lat))
    assert rho.weights[1].tolist() == [0.0, 0.125, 0.5, 0.0, 0.0]
    assert rho.weights[2].tolist() == [0.0, 0.0, 0.046875, 0.28125, 0.046875]
    assert eta.alive[1].tolist() == [0.0, 0.125, 0.5, 0.375, 0.0]
    assert primal_cost(QUAD, eta) == 0.375 + 0.09375


def test_mass_conservation_matrix():
    rng = np.random.default_rng(0)
    for d, h, dt in [(1, 0.5, 0.05), (2, 0.5, 0.02), (3, 1.0, 0.1)]:
        lat = make_lattice(d, 4 * h, h, 10 * dt, dt)
        k = build_kernel(lat, control_grid(d, 3, 1.0))
        for _ in range(5):
            w = rng.random(lat.n_nodes) * lat.interior_mask()
            mu = GridMeasure(lat.ref, w / w.sum())
            pol = random_policy(k, rng, stop_prob=0.2)
            eta, rho = forward_propagate(k, pol, mu)
            assert eta.conservation_error <= 1e-12
            for kk in range(lat.K + 1):
                assert abs(eta.alive[kk].sum() + rho.weights[:kk].sum() - 1.0) <= 1e-12
            assert abs(rho.total - 1) <= 1e-12
            assert (eta.weights >= 0).all() and (rho.weights >= 0).all()
            # rho lives on the stop set of the policy used
            assert (rho.weights[~pol.stop] == 0).all()
            assert np.isfinite(dirichlet_energy(eta))


def test_lattice_mismatch():
    lat = make_lattice(1, 2.0, 1.0, 1.0, 0.5)
    other = make_lattice(1, 1.0, 1.0, 1.0, 0.5)
    with pytest.raises(StructuralError):
        forward_propagate(build_kernel(lat, [[0.0]]), Policy.stop_everywhere(other), delta0(lat))


def test_moment_bound_trivial_cases():
    lat = make_lattice(1, 2.0, 1.0, 1.0, 0.5)
    k = build_kernel(lat, [[0.0]])
    mu = GridMeasure(lat.ref, [0.0, 0.5, 0.0, 0.5, 0.0])
    eta, rho = forward_propagate(k, Policy.stop_everywhere(lat), mu)
    rep = check_moment_bound(mu, rho, 0.0, k, 1.0)
    assert rep.lhs == rep.rhs == 1.0 and rep.passed

    stop = np.ones((3, 5), bool)
    stop[0, 2] = False
    eta, rho = forward_propagate(k, Policy.from_arrays(lat, stop, np.zeros((3, 5), int)), delta0(lat))
    rep = check_moment_bound(delta0(lat), rho, primal_cost(QUAD, eta), k, 1.0)
    assert rep.lhs == 0.5 and rep.constant >= 1.0 and rep.passed


def test_moment_bound_holds_for_random_policies():
    rng = np.random.default_rng(1)
    for cfg in tiny_configs():
        k = build_kernel(build_lattice(cfg), cfg.controls)
        c = cfg.coercivity()[0]
        for _ in range(10):
            eta, rho = forward_propagate(k, random_policy(k, rng, 0.3), cfg.mu)
            assert check_moment_bound(cfg.mu, rho, primal_cost(cfg.lagrangian, eta), k, c).passed


def test_moment_constant_formula():
    k = build_kernel(make_lattice(2, 2.0, 1.0, 1.0, 0.1), control_grid(2, 3, 1.0))
    assert moment_constant(k, 0.5) == pytest.approx((2 + np.sqrt(2) * 5 * np.sqrt(2)) / 0.5)
