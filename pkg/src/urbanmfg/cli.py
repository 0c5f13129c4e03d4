"""Command line interface: ``urbanmfg {run,ot-solve,validate,branches}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .costs import commuting_cost_matrix
from .dynamics import branch_step, mean_position
from .network import NetworkError, discretize
from .ot import exact_ot_lp, normalize_potentials, sinkhorn
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _config_with_overrides(args):
    config = load_scenario(args.scenario)
    changes = {}
    for flag, key in (("dx", "dx"), ("dt", "dt"), ("tol", "tol"), ("max_iter", "max_iter"),
                      ("relaxation", "relaxation"), ("sigma", "sigma"), ("cost", "cost")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    return config.replace(**changes) if changes else config


def cmd_run(args) -> int:
    from .io import write_snapshots
    from .solver import run_fixed_point

    config = _config_with_overrides(args)

    def report(rec):
        print(f"iteration {rec.iteration:3d}  change {rec.metric:.3e}  "
              f"mass error {rec.mass_error:.1e}  min density {rec.min_density:.3e}", flush=True)

    start = time.perf_counter()
    solution = run_fixed_point(config, threads=args.threads, check_monotonicity=args.monotonicity,
                               callback=report)
    elapsed = time.perf_counter() - start
    csv_path, meta_path = write_snapshots(solution, args.out, stride=args.stride or config.n_steps)
    state = "converged" if solution.converged else "NOT converged"
    print(f"{state} after {solution.iterations} iterations in {elapsed:.1f} s")
    print(f"wrote {csv_path} and {meta_path}")
    return EXIT_OK if solution.converged else EXIT_NOT_CONVERGED


def cmd_validate(args) -> int:
    config = _config_with_overrides(args)
    grid = discretize(config.network, config.dx)
    print(f"{config.name}: {len(config.network.vertices)} vertices, {len(config.network.edges)} edges, "
          f"{grid.size} grid nodes, {config.n_steps} time steps; OK")
    return EXIT_OK


def cmd_branches(args) -> int:
    config = load_scenario(args.scenario)
    if args.dt is not None:
        config = config.replace(dt=args.dt)
    grid = discretize(config.network, config.dx if args.dx is None else args.dx)
    if not 0 <= args.node < grid.size:
        raise ScenarioError(f"--node must lie in [0, {grid.size})")
    source = (int(grid.node_edge[args.node]), float(grid.node_arclength[args.node]))
    bs = branch_step(config.network, source, args.u, args.pop, config.dt)
    print(f"source edge {source[0]} arclength {source[1]:.6g}, u = {args.u}, population {args.pop}, "
          f"dt = {config.dt}")
    for p, (edge, y) in bs:
        print(f"  p = {p:.6f}  edge {edge:3d}  arclength {y:.6f}")
    print(f"total probability {bs.total_probability:.15g}, reflections {bs.reflections}")
    print(f"mean position {mean_position(config.network, bs).tolist()}")
    return EXIT_OK


def cmd_ot_solve(args) -> int:
    doc = json.loads(Path(args.input).read_text())
    a = np.asarray(doc["m1"], dtype=float)
    b = np.asarray(doc["m2"], dtype=float)
    if "distance" in doc:
        dist = np.asarray(doc["distance"], dtype=float)
    elif "points" in doc:
        pts = np.asarray(doc["points"], dtype=float)
        dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    else:
        raise ScenarioError("input needs either 'distance' or 'points'")
    total = a.sum()
    a, b = a / total, b / b.sum()
    cost = commuting_cost_matrix(dist, args.cost)
    if args.exact:
        sol = exact_ot_lp(a, b, cost)
    else:
        sol = sinkhorn(a, b, cost, args.sigma, tol=args.tol, max_iter=args.max_iter)
    theta1, theta2 = normalize_potentials(sol.theta1, sol.theta2)
    print(f"cost {sol.cost:.10g}")
    print(f"iterations {sol.iterations}  marginal error {sol.marginal_error:.3e}  converged {sol.converged}")
    print(f"plan: {np.count_nonzero(sol.plan > 1e-12)} entries above 1e-12, max {sol.plan.max():.6g}")
    print("theta1 " + " ".join(f"{x:.8g}" for x in theta1))
    print("theta2 " + " ".join(f"{x:.8g}" for x in theta2))
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbanmfg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file or preset name")
        p.add_argument("--dx", type=float)
        p.add_argument("--dt", type=float)

    run = sub.add_parser("run", help="solve the equilibrium and write snapshots")
    scenario_flags(run)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--tol", type=float)
    run.add_argument("--max-iter", dest="max_iter", type=int)
    run.add_argument("--lambda", dest="relaxation", type=float)
    run.add_argument("--sigma", type=float)
    run.add_argument("--cost", choices=["lin", "sqr", "quad"])
    run.add_argument("--stride", type=int, help="time-slice stride (default: initial and final only)")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--monotonicity", action="store_true", help="record the monotonicity diagnostic")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario and its step sizes")
    scenario_flags(val)
    val.set_defaults(func=cmd_validate)

    br = sub.add_parser("branches", help="print the one-step branch set of a grid node")
    scenario_flags(br)
    br.add_argument("--node", type=int, required=True)
    br.add_argument("--u", type=float, default=0.0)
    br.add_argument("--pop", type=int, choices=[1, 2], default=1)
    br.set_defaults(func=cmd_branches)

    ot = sub.add_parser("ot-solve", help="solve one transport problem from a JSON file")
    ot.add_argument("input", help="JSON with m1, m2 and 'distance' (matrix) or 'points'")
    ot.add_argument("--cost", choices=["lin", "sqr", "quad"], default="lin")
    ot.add_argument("--sigma", type=float, default=0.5)
    ot.add_argument("--tol", type=float, default=1e-8)
    ot.add_argument("--max-iter", dest="max_iter", type=int, default=10_000)
    ot.add_argument("--exact", action="store_true", help="solve the linear program instead")
    ot.set_defaults(func=cmd_ot_solve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ScenarioError, NetworkError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
