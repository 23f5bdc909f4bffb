import csv
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from stochtransport import io
from stochtransport.cli import main
from stochtransport.errors import ConfigError

DEMO = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def workdir(tmp_path):
    for f in ("demo.yaml", "demo_mu.csv", "demo_nu.csv"):
        shutil.copy(DEMO / f, tmp_path / f)
    return tmp_path


def edit(workdir, **changes):
    raw = yaml.safe_load((workdir / "demo.yaml").read_text())
    for path, value in changes.items():
        section, key = path.split("__")
        if value is None:
            raw[section].pop(key, None)
        else:
            raw[section][key] = value
    (workdir / "bad.yaml").write_text(yaml.safe_dump(raw))
    return workdir / "bad.yaml"


def read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_valid_config(workdir):
    cfg = io.parse_config(workdir / "demo.yaml")
    assert cfg.K == 12 and cfg.controls[:, 0].tolist() == [-1.0, 0.0, 1.0]
    assert cfg.nu.weights.tolist() == [0, 0, 0, 0.3, 0.3, 0.4, 0, 0, 0]


def test_json_config(workdir):
    raw = yaml.safe_load((workdir / "demo.yaml").read_text())
    import json
    (workdir / "demo.json").write_text(json.dumps(raw))
    assert io.parse_config(workdir / "demo.json").K == 12


def test_cfl_error_names_bound_and_value(workdir):
    with pytest.raises(ConfigError) as exc:
        io.parse_config(edit(workdir, grid__dt=0.75, grid__T=3.0))
    msg = str(exc.value)
    assert "CFL" in msg and "dt=0.75" in msg and "1.5" in msg


def test_support_outside_box_lists_nodes(workdir):
    (workdir / "demo_nu.csv").write_text("x1,weight\n-5,0.5\n4,0.25\n0,0.25\n")
    with pytest.raises(ConfigError) as exc:
        io.parse_config(workdir / "demo.yaml")
    msg = str(exc.value)
    assert "[-5.0]" in msg and "enlarge grid.R" in msg
    (workdir / "demo_nu.csv").write_text("x1,weight\n4,0.5\n0,0.5\n")
    with pytest.raises(ConfigError, match=r"\[\[4.0\]\]"):
        io.parse_config(workdir / "demo.yaml")


def test_all_problems_reported_together(workdir):
    with pytest.raises(ConfigError) as exc:
        io.parse_config(edit(workdir, grid__h=None, solver__max_iter="many", lagrangian__kind=None))
    probs = exc.value.problems
    assert any(p.startswith("grid.h: missing") for p in probs)
    assert any(p.startswith("solver.max_iter: expected int") for p in probs)
    assert any(p.startswith("lagrangian.kind: missing") for p in probs)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        io.parse_config(tmp_path / "nope.yaml")


def test_csv_format_roundtrip(tmp_path, workdir):
    cfg = io.parse_config(workdir / "demo.yaml")
    from stochtransport.lattice import build_kernel, build_lattice
    from stochtransport.hjb import solve_qvi
    lat = build_lattice(cfg)
    k = build_kernel(lat, cfg.controls)
    psi = np.random.default_rng(0).normal(size=lat.n_nodes) / 3
    io.write_potential(tmp_path / "psi.csv", lat, psi)
    assert np.array_equal(io.read_potential(tmp_path / "psi.csv", lat).values, psi)  # 17 digits round-trip
    _, pol = solve_qvi(k, cfg.lagrangian, psi)
    io.write_policy(tmp_path / "policy.csv", lat, k, pol)
    back = io.read_policy(tmp_path / "policy.csv", lat, k)
    assert np.array_equal(back.stop, pol.stop) and np.array_equal(back.control, pol.control)
    assert read(tmp_path / "policy.csv")[0] == ["k", "t", "x1", "decision", "u1"]


def test_solve_writes_artifacts(workdir, capsys):
    out = workdir / "out"
    assert main(["solve", str(workdir / "demo.yaml"), "--out", str(out)]) == 0
    for name in ("psi", "J", "barrier", "m", "rho", "history", "report", "policy", "mixture"):
        assert (out / f"{name}.csv").exists()
    assert read(out / "J.csv")[0] == ["k", "t", "x1", "J"]
    assert read(out / "history.csv")[0][:3] == ["iteration", "dual_value", "residual"]
    report = dict(read(out / "report.csv")[1:])
    assert report["converged"] == "1" and float(report["gap_adj"]) <= 1e-6
    rho = np.array([float(r[3]) for r in read(out / "rho.csv")[1:]])
    assert rho.sum() == pytest.approx(1.0, abs=1e-12)
    assert "dual_value" in capsys.readouterr().out


def test_hjb_forward_diag_roundtrip(workdir):
    out = workdir / "out"
    cfg = str(workdir / "demo.yaml")
    assert main(["solve", cfg, "--out", str(out)]) == 0
    assert main(["hjb", cfg, "--psi", str(out / "psi.csv"), "--out", str(workdir / "h")]) == 0
    J1 = read(out / "J.csv")
    J2 = read(workdir / "h" / "J.csv")
    assert J1 == J2
    # forwarding every mixture component and averaging reproduces the solve
    comps = read(out / "mixture.csv")[1:]
    total = 0.0
    for i, w, f in comps:
        d = workdir / f"f{i}"
        assert main(["forward", cfg, "--policy", str(out / f), "--out", str(d)]) == 0
        total += float(w) * float(dict(read(d / "report.csv")[1:])["primal_cost"])
    assert total == pytest.approx(float(dict(read(out / "report.csv")[1:])["primal_cost"]), abs=1e-12)
    assert main(["diag", cfg, "--psi", str(out / "psi.csv"), "--out", str(workdir / "g")]) == 0
    diag = dict(read(workdir / "g" / "diag.csv")[1:])
    assert diag["moment_pass"] == "1"


def test_oracle_and_mc_commands(workdir):
    cfg = str(workdir / "demo.yaml")
    assert main(["oracle", cfg, "--out", str(workdir / "o")]) == 0
    rep = dict(read(workdir / "o" / "oracle.csv")[1:])
    assert float(rep["relative_difference"]) <= 1e-8
    assert main(["mc", cfg, "--n", "2000", "--seed", "3", "--out", str(workdir / "m"), "--traces", "5"]) == 0
    summary = dict(read(workdir / "m" / "mc_summary.csv")[1:])
    assert summary["n_paths"] == "2000" and summary["seed"] == "3"
    assert len(read(workdir / "m" / "mc_traces.csv")) == 6


def test_exit_codes(workdir, capsys):
    assert main(["solve", str(edit(workdir, grid__dt=0.75)), "--out", str(workdir / "x")]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["solve", str(edit(workdir, solver__max_iter=1, solver__step_rule="sqrt")),
                 "--out", str(workdir / "y")]) == 2
    # a target the chain cannot reach within the horizon
    (workdir / "demo_nu.csv").write_text("x1,weight\n-3,0.5\n3,0.5\n")
    assert main(["oracle", str(edit(workdir, grid__T=0.5)), "--out", str(workdir / "z")]) == 3
    assert "infeasible" in capsys.readouterr().err
