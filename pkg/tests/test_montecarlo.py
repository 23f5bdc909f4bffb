import numpy as np
import pytest

from instances import tiny_configs
from stochtransport.dualsolve import ascend
from stochtransport.hjb import Policy, ValueField, solve_qvi
from stochtransport.lattice import build_kernel, build_lattice, make_lattice
from stochtransport.model import GridMeasure, LagrangianSpec, SpaceTimeMeasure
from stochtransport.montecarlo import (
    default_checkpoints,
    martingale_test,
    simulate,
    verify_cost,
    verify_distribution,
)
from stochtransport.transport import StoppingDistribution

FREE = LagrangianSpec(kind="power_law", p=2, a_u=0.5, a_0=0.0)  # zero cost at u = 0 (diagnostic mode)
QUAD = LagrangianSpec(kind="power_law", p=2, a_u=0.5, a_0=1.0)


def setup(R=2.0, h=0.5, T=1.0, dt=0.125):
    lat = make_lattice(1, R, h, T, dt)
    k = build_kernel(lat, [[0.0]])
    w = np.zeros(lat.n_nodes)
    w[lat.interior_mask()] = 1.0
    return lat, k, GridMeasure(lat.ref, w / w.sum())


def stop_all(lat, k, mu, n, seed=3):
    pol = Policy.stop_everywhere(lat)
    J = ValueField(np.zeros((lat.K + 1, lat.n_nodes)))
    return simulate(pol, J, np.zeros(lat.n_nodes), mu, n, seed, kernel=k, lagrangian=QUAD)


def test_barrier_everything():
    lat, k, mu = setup()
    b = stop_all(lat, k, mu, 20_000)
    assert (b.stop_step == 0).all() and (b.cost == 0).all()
    assert np.array_equal(b.stop_location[:, 0], lat.coords[b.stop_node, 0])
    rho = np.zeros((lat.K + 1, lat.n_nodes))
    rho[0] = mu.weights
    rep = verify_distribution(b, StoppingDistribution(SpaceTimeMeasure(rho)))
    assert rep.passed and rep.l1 <= 3 * np.sqrt(rep.n_bins / b.n_paths)
    m = martingale_test(b)
    assert all(mean == 0.0 for _, _, mean, _, _ in m.pairs) and m.martingale_ok


def test_single_gaussian_step_replayed():
    lat, k, mu = setup()
    stop = np.ones((lat.K + 1, lat.n_nodes), bool)
    stop[0] = False
    pol = Policy.from_arrays(lat, stop, np.zeros_like(stop, dtype=int))
    J = ValueField(np.zeros((lat.K + 1, lat.n_nodes)))
    b = simulate(pol, J, np.zeros(lat.n_nodes), mu, 1, 42, kernel=k, lagrangian=FREE)
    rng = np.random.default_rng(np.random.SeedSequence(42).spawn(1)[0])
    start = rng.choice(lat.n_nodes, size=1, p=mu.weights)
    xi = rng.standard_normal((1, 1))
    expected = np.clip(lat.coords[start] + np.sqrt(lat.dt) * xi, -lat.R, lat.R)
    assert b.stop_step[0] == 1
    assert b.stop_location[0, 0] == expected[0, 0]


def test_low_power_flag():
    lat, k, mu = setup()
    b = stop_all(lat, k, mu, 10)
    rho = np.zeros((lat.K + 1, lat.n_nodes))
    rho[0] = mu.weights
    rep = verify_distribution(b, rho)
    assert rep.low_power and rep.passed


def test_constant_field_has_zero_increments():
    lat, k, mu = setup()
    pol = Policy.from_arrays(lat, np.zeros((lat.K + 1, lat.n_nodes), bool), np.zeros((lat.K + 1, lat.n_nodes), int))
    J = ValueField(np.full((lat.K + 1, lat.n_nodes), 2.0))
    b = simulate(pol, J, np.full(lat.n_nodes, 2.0), mu, 500, 1, kernel=k, lagrangian=FREE,
                 barrier=np.zeros((lat.K + 1, lat.n_nodes), bool))
    assert (b.stop_step == lat.K).all()
    assert np.all(b.martingale == 2.0)
    assert martingale_test(b).martingale_ok


def test_reproducible_and_sharded():
    cfg = tiny_configs()[7]
    k = build_kernel(build_lattice(cfg), cfg.controls)
    res = ascend(cfg)
    args = (res.components, res.value, res.psi, cfg.mu, 3000)
    kw = dict(kernel=k, lagrangian=cfg.lagrangian)
    a = simulate(*args, 9, shards=3, **kw)
    b = simulate(*args, 9, shards=3, **kw)
    assert a.summary() == b.summary()
    assert np.array_equal(a.stop_location, b.stop_location) and np.array_equal(a.cost, b.cost)
    c = simulate(*args, 10, shards=3, **kw)
    assert not np.array_equal(a.stop_location, c.stop_location)
    assert a.n_paths == 3000


def test_first_hitting_for_pure_policy():
    cfg = tiny_configs()[8]
    k = build_kernel(build_lattice(cfg), cfg.controls)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=k.lattice.n_nodes)
    value, policy = solve_qvi(k, cfg.lagrangian, psi)
    b = simulate(policy, value, psi, cfg.mu, 5000, 1, kernel=k, lagrangian=cfg.lagrangian,
                 checkpoints=np.arange(k.lattice.K + 1))
    assert b.barrier_hits_before_stop == 0
    for c, step in enumerate(b.checkpoints):
        alive = b.checkpoint_node[:, c] >= 0
        assert not policy.stop[step, b.checkpoint_node[alive, c]].any()


def test_chain_dynamics_reproduce_forward_solution():
    cfg = tiny_configs()[6]
    k = build_kernel(build_lattice(cfg), cfg.controls)
    res = ascend(cfg)
    b = simulate(res.components, res.value, res.psi, cfg.mu, 40_000, 5, kernel=k,
                 lagrangian=cfg.lagrangian, dynamics="chain")
    assert verify_distribution(b, res.rho).l1 <= 3 * np.sqrt(k.lattice.n_nodes / b.n_paths)
    cost = verify_cost(b, res.report.primal_cost, k, cfg.lagrangian)
    assert abs(cost.mean - cost.target) <= 4 * cost.standard_error
    assert martingale_test(b).supermartingale_ok


def test_default_checkpoints():
    assert default_checkpoints(40).tolist() == [0, 10, 20, 30, 40]
    assert default_checkpoints(2).tolist() == [0, 1, 2]


def test_bad_arguments():
    lat, k, mu = setup()
    with pytest.raises(ValueError):
        stop_all(lat, k, mu, 0)
    with pytest.raises(ValueError):
        simulate(Policy.stop_everywhere(lat), ValueField(np.zeros((lat.K + 1, lat.n_nodes))),
                 np.zeros(lat.n_nodes), mu, 5, 0, kernel=k, lagrangian=QUAD, dynamics="levy")
