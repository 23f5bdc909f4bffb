import numpy as np
import pytest

from stochtransport.errors import ConfigError
from stochtransport.lattice import build_kernel, cfl_number, dump_kernel, make_lattice
from stochtransport.model import control_grid


def test_counting_1d():
    lat = make_lattice(1, 2.0, 1.0, 1.0, 0.5)
    assert lat.coords[:, 0].tolist() == [-2, -1, 0, 1, 2]
    assert lat.K == 2 and lat.R == 2.0 and lat.T == 1.0


def test_counting_2d():
    lat = make_lattice(2, 1.0, 1.0, 0.25, 0.25)
    assert lat.n_nodes == 9 and lat.K == 1
    # deterministic ordering, last axis fastest
    assert lat.coords[:3].tolist() == [[-1, -1], [-1, 0], [-1, 1]]


def test_inconsistent_steps_rejected():
    with pytest.raises(ConfigError, match="R/h"):
        make_lattice(1, 2.0, 0.3, 1.0, 0.5)
    with pytest.raises(ConfigError, match="T/dt"):
        make_lattice(1, 2.0, 1.0, 1.0, 0.3)


def test_origin_is_a_node_and_index_roundtrip():
    lat = make_lattice(3, 1.0, 0.5, 0.1, 0.05)
    assert lat.n_axis % 2 == 1
    i = lat.index_of(np.zeros(3))
    assert np.all(lat.coords[i] == 0)
    assert np.array_equal(lat.flat_index(lat.multi_index()), np.arange(lat.n_nodes))
    with pytest.raises(ConfigError):
        lat.index_of([0.2, 0.0, 0.0])


def test_kernel_row_zero_drift():
    k = build_kernel(make_lattice(1, 2.0, 1.0, 1.0, 0.5), [[0.0]])
    assert k.row(2, 0) == pytest.approx({1: 0.25, 2: 0.5, 3: 0.25}, abs=0)


def test_kernel_row_unit_drift_and_moment():
    k = build_kernel(make_lattice(1, 2.0, 1.0, 1.0, 0.25), [[1.0]])
    row = k.row(2, 0)
    assert row == pytest.approx({1: 0.125, 2: 0.5, 3: 0.375}, abs=0)
    mean = sum(p * (k.lattice.coords[j, 0] - 0.0) for j, p in row.items())
    assert mean == 0.25


def test_boundary_rows_fold_and_flag():
    k = build_kernel(make_lattice(1, 1.0, 1.0, 0.5, 0.25), [[-1.0], [0.0], [1.0]])
    assert k.clipped[:, 0].all() and k.clipped[:, 2].all() and not k.clipped[:, 1].any()
    for m in range(3):
        for i in (0, 2):
            assert sum(k.row(i, m).values()) == pytest.approx(1.0, abs=1e-15)
            assert set(k.row(i, m)) <= {0, 1, 2}


@pytest.mark.parametrize("d,h,dt,umax,per_axis", [
    (1, 1.0, 0.25, 1.0, 5), (1, 0.2, 0.01, 2.0, 9), (2, 0.5, 0.05, 1.0, 3), (3, 1.0, 0.1, 1.0, 3),
])
def test_rows_stochastic_and_moments(d, h, dt, umax, per_axis):
    U = control_grid(d, per_axis, umax)
    lat = make_lattice(d, 2 * h, h, 4 * dt, dt)
    k = build_kernel(lat, U)
    assert (k.probs >= 0).all()
    assert np.abs(k.probs.sum(axis=2) - 1).max() <= 1e-14
    inside = lat.interior_mask()
    for m in range(k.n_controls):
        P = k.dense(m)
        mean = P @ lat.coords - lat.coords  # (N, d)
        # exact first moment on interior rows
        assert np.array_equal(mean[inside], np.broadcast_to(k.controls[m] * dt, mean[inside].shape)) or \
            np.abs(mean[inside] - k.controls[m] * dt).max() <= 4 * np.finfo(float).eps * max(1.0, umax * dt)
        # per-axis second moment: dt + |u_j| h dt
        for j in range(d):
            var = P @ lat.coords[:, j] ** 2 - 2 * lat.coords[:, j] * (P @ lat.coords[:, j]) + lat.coords[:, j] ** 2
            dev = np.abs(var[inside] - dt - abs(k.controls[m, j]) * h * dt)
            assert dev.max() <= 1e-12


def test_cfl_violation_names_inputs():
    lat = make_lattice(1, 2.0, 1.0, 1.0, 0.5)
    cfl, worst = cfl_number(1, 1.0, 0.5, [[0.0], [2.0]])
    assert cfl == pytest.approx(1.5) and worst[0] == 2.0
    with pytest.raises(ConfigError) as exc:
        build_kernel(lat, [[0.0], [2.0]])
    msg = str(exc.value)
    assert "CFL" in msg and "h=1" in msg and "dt=0.5" in msg and "2.0" in msg


def test_controls_stored_in_canonical_order():
    k = build_kernel(make_lattice(1, 2.0, 1.0, 1.0, 0.25), [[1.0], [-1.0], [0.0]])
    assert k.controls[:, 0].tolist() == [0.0, -1.0, 1.0]


def test_expect_and_push_are_adjoint():
    rng = np.random.default_rng(0)
    k = build_kernel(make_lattice(2, 1.0, 0.5, 0.1, 0.02), control_grid(2, 3, 1.0))
    f = rng.normal(size=k.lattice.n_nodes)
    mass = rng.random((k.n_controls, k.lattice.n_nodes))
    lhs = (k.expect(f) * mass).sum()
    rhs = k.push(mass) @ f
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_dump_kernel(tmp_path):
    k = build_kernel(make_lattice(1, 1.0, 1.0, 0.5, 0.5), [[0.0]])
    path = tmp_path / "kernel.csv"
    dump_kernel(k, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "node,control,neighbor,probability"
    rows = [line.split(",") for line in lines[1:]]
    middle = {int(r[2]): float(r[3]) for r in rows if r[0] == "1"}
    assert middle == {0: 0.25, 1: 0.5, 2: 0.25}
