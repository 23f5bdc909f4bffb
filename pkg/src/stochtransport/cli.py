"""Command line: ``stochtransport {solve,hjb,forward,oracle,mc,diag} <config> ...``.

Exit codes: 0 success, 1 configuration error, 2 numerical non-convergence,
3 infeasibility certificate.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .dualsolve import ascend, dual_value
from .errors import ConfigError, InfeasibleError, NumericalError, TransportError
from .hjb import check_supersolution, extract_barrier, holder_diagnostic, solve_qvi
from .lattice import build_kernel, build_lattice
from .montecarlo import martingale_test, simulate, verify_cost, verify_distribution
from .oracle import lp_solve_instance
from .transport import check_moment_bound, forward_propagate, primal_cost

log = logging.getLogger("stochtransport")


def _setup(args):
    config = io.parse_config(args.config)
    kernel = build_kernel(build_lattice(config), config.controls)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return config, kernel, out


def _write_report(path, rows):
    io.write_csv(path, ["key", "value"], rows)
    for k, v in rows:
        print(f"{k}: {io.fmt(v)}")


def _write_solution(out, kernel, result):
    lat = kernel.lattice
    io.write_potential(out / "psi.csv", lat, result.psi.values)
    io.write_field(out / "J.csv", lat, "J", result.value.values)
    io.write_field(out / "barrier.csv", lat, "stop", extract_barrier(result.value, result.psi).astype(int))
    io.write_policy(out / "policy.csv", lat, kernel, result.policy)
    # the primal solution may mix several policies (randomised stopping)
    io.write_csv(out / "mixture.csv", ["component", "weight", "file"],
                 ([i, w, f"policy_{i}.csv"] for i, (_, w) in enumerate(result.components)))
    for i, (pol, _) in enumerate(result.components):
        io.write_policy(out / f"policy_{i}.csv", lat, kernel, pol)
    io.write_field(out / "m.csv", lat, "mass", result.eta.alive)
    io.write_field(out / "rho.csv", lat, "mass", result.rho.weights)
    hist = result.report.history
    io.write_csv(out / "history.csv", ["iteration", "dual_value", "residual", "recovered_residual", "gap_adj"],
                 ([h["iteration"], h["dual_value"], h["residual"], h["recovered_residual"], h["gap_adj"]]
                  for h in hist))
    _write_report(out / "report.csv", result.report.rows())


def cmd_solve(args):
    config, kernel, out = _setup(args)
    result = ascend(config, kernel=kernel)
    _write_solution(out, kernel, result)
    if not result.report.converged:
        raise NumericalError(f"dual ascent did not converge in {config.max_iter} iterations "
                             f"(residual {result.report.marginal_residual:.3g}, gap_adj {result.report.gap_adj:.3g})",
                             residual=result.report.marginal_residual)


def cmd_hjb(args):
    config, kernel, out = _setup(args)
    lat = kernel.lattice
    psi = io.read_potential(args.psi, lat)
    value, policy = solve_qvi(kernel, config.lagrangian, psi)
    io.write_field(out / "J.csv", lat, "J", value.values)
    io.write_field(out / "barrier.csv", lat, "stop", extract_barrier(value, psi).astype(int))
    io.write_policy(out / "policy.csv", lat, kernel, policy)
    _write_report(out / "report.csv", [("dual_value", dual_value(psi, value, config.mu, config.nu))])


def cmd_forward(args):
    config, kernel, out = _setup(args)
    lat = kernel.lattice
    policy = io.read_policy(args.policy, lat, kernel)
    eta, rho = forward_propagate(kernel, policy, config.mu)
    io.write_field(out / "m.csv", lat, "mass", eta.alive)
    io.write_field(out / "rho.csv", lat, "mass", rho.weights)
    _write_report(out / "report.csv", [
        ("primal_cost", primal_cost(config.lagrangian, eta)),
        ("marginal_residual", float(np.abs(rho.marginal - config.nu.weights).sum())),
        ("stopped_mass", rho.total),
        ("conservation_error", eta.conservation_error),
    ])


def cmd_oracle(args):
    config, kernel, out = _setup(args)
    lp = lp_solve_instance(kernel, config.lagrangian, config.mu, config.nu)
    result = ascend(config, kernel=kernel)
    io.write_potential(out / "oracle_psi.csv", kernel.lattice, lp.psi)
    rel = abs(result.report.dual_value - lp.objective) / max(1.0, abs(lp.objective))
    _write_report(out / "oracle.csv", [
        ("lp_primal", lp.objective),
        ("lp_dual", lp.dual_objective),
        ("lp_complementarity", lp.complementarity),
        ("solve_dual_value", result.report.dual_value),
        ("solve_primal_cost", result.report.primal_cost),
        ("solve_marginal_residual", result.report.marginal_residual),
        ("relative_difference", rel),
        ("solve_converged", int(result.report.converged)),
    ])


def cmd_mc(args):
    config, kernel, out = _setup(args)
    n = args.n if args.n is not None else config.mc_n
    seed = args.seed if args.seed is not None else config.mc_seed
    result = ascend(config, kernel=kernel)
    if not result.report.converged:
        log.warning("dual ascent not converged; simulating the best iterate anyway")
    rho = result.rho
    target_cost = result.report.primal_cost
    batch = simulate(result.components, result.value, result.psi, config.mu, n, seed,
                     kernel=kernel, lagrangian=config.lagrangian, shards=args.shards)
    dist = verify_distribution(batch, rho)
    cost = verify_cost(batch, target_cost, kernel, config.lagrangian)
    mart = martingale_test(batch, result.value, config.lagrangian)
    io.write_csv(out / "mc_martingale.csv", ["s", "t", "mean", "lo", "hi"], mart.pairs)
    if args.traces:
        m = min(args.traces, batch.n_paths)
        d = kernel.lattice.d
        io.write_csv(out / "mc_traces.csv",
                     ["path", "stop_step"] + io.coord_header(d) + ["cost"],
                     ([p, batch.stop_step[p], *batch.stop_location[p], batch.cost[p]] for p in range(m)))
    _write_report(out / "mc_summary.csv", [
        ("n_paths", batch.n_paths),
        ("seed", seed),
        ("mean_cost", cost.mean),
        ("cost_standard_error", cost.standard_error),
        ("target_cost", cost.target),
        ("cost_allowance", cost.allowance),
        ("cost_pass", int(cost.passed)),
        ("l1_distance", dist.l1),
        ("l1_bound", dist.bound),
        ("distribution_allowance", dist.allowance),
        ("distribution_pass", int(dist.passed)),
        ("low_power", int(dist.low_power)),
        ("martingale_pass", int(mart.martingale_ok)),
        ("supermartingale_pass", int(mart.supermartingale_ok)),
        ("barrier_hits_before_stop", batch.barrier_hits_before_stop),
    ])


def cmd_diag(args):
    config, kernel, out = _setup(args)
    lat = kernel.lattice
    psi = io.read_potential(args.psi, lat)
    sup = check_supersolution(kernel, config.lagrangian, psi)
    io.write_csv(out / "supersolution.csv", io.coord_header(lat.d) + ["residual"],
                 ([*x, r] for x, r in zip(lat.coords, sup.residuals)))
    p = config.lagrangian.p if config.lagrangian.kind.value == "power_law" else None
    hold = holder_diagnostic(psi, lat, args.delta, p)
    value, policy = solve_qvi(kernel, config.lagrangian, psi)
    eta, rho = forward_propagate(kernel, policy, config.mu)
    c = config.coercivity()[0]
    mom = check_moment_bound(config.mu, rho, primal_cost(config.lagrangian, eta), kernel, c)
    _write_report(out / "diag.csv", [
        ("supersolution_max_residual", sup.max_residual),
        ("supersolution_violations", int(sup.violating_nodes.size)),
        ("holder_delta", hold.delta),
        ("holder_B", hold.B),
        ("holder_E", hold.E),
        ("holder_regime", hold.label),
        ("moment_lhs", mom.lhs),
        ("moment_rhs", mom.rhs),
        ("moment_constant", mom.constant),
        ("moment_pass", int(mom.passed)),
    ])


def build_parser():
    ap = argparse.ArgumentParser(prog="stochtransport", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("config")
        p.add_argument("--out", default="results", help="output directory (default: results)")
        p.set_defaults(func=func)
        return p

    add("solve", cmd_solve, "dual ascent with full CSV output")
    add("hjb", cmd_hjb, "single backward solve").add_argument("--psi", required=True)
    add("forward", cmd_forward, "single forward solve").add_argument("--policy", required=True)
    add("oracle", cmd_oracle, "LP oracle compared with the dual ascent")
    mc = add("mc", cmd_mc, "Monte-Carlo verification")
    mc.add_argument("--n", type=int)
    mc.add_argument("--seed", type=int)
    mc.add_argument("--shards", type=int, default=1)
    mc.add_argument("--traces", type=int, default=0, help="dump the first N path records")
    diag = add("diag", cmd_diag, "supersolution, Holder and moment diagnostics")
    diag.add_argument("--psi", required=True)
    diag.add_argument("--delta", type=float, default=1.0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 1
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
