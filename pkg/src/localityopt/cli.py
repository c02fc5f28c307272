"""Command-line entry point: ``localityopt <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .analysis import locality_report
from .benchmarks import (ExperimentConfig, gen_dispatch, gen_rendezvous, gen_state_estimation,
                         run_experiment, write_baseline_csv, write_errors_csv, write_flooding_csv,
                         write_locality_csv, write_long, write_profile_csv)
from .errors import LocalityError
from .graphs import diameter, problem_graphs
from .problem import read_problem, solve_equality_constrained, write_problem
from .protocol import message_bound_check, run_flooding, run_projected_subgradient
from .truncation import truncation_error_profile


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args):
    p = read_problem(args.problem)
    graphs = problem_graphs(p, not args.no_block_edges)
    return p, graphs


def _labels(p, args):
    family = args.family or p.meta.get("family", "custom")
    seed = args.seed if args.seed is not None else int(p.meta.get("seed", 0))
    return family, seed


def cmd_generate(args):
    if args.family == "dispatch":
        inst = gen_dispatch(args.n, args.m, args.alpha, args.beta, args.seed)
    elif args.family == "rendezvous":
        inst = gen_rendezvous(args.n, args.seed)
    else:
        inst = gen_state_estimation(args.width, args.height, args.sigma_theta, args.sigma_p, args.seed)
    write_problem(inst.problem, args.out)
    print(f"wrote {args.out}: {inst.problem.n} variables, {inst.problem.m} constraints, "
          f"{inst.graphs.nagents} agents")
    return 0


def cmd_locality(args):
    p = read_problem(args.problem)
    report = locality_report(p)
    sys.stdout.write(report.to_text(args.eps))
    if args.out:
        write_locality_csv(args.out, report, args.eps)
    return 0


def cmd_truncate(args):
    p, graphs = _load(args)
    report = locality_report(p)
    x_star = solve_equality_constrained(p).x
    kmax = diameter(graphs.g_agent) if args.kmax is None else args.kmax
    profile = truncation_error_profile(p, graphs, range(args.kmin, kmax + 1), x_star, report)
    family, seed = _labels(p, args)
    write_errors_csv(args.out, family, seed, profile)
    if args.profile:
        write_profile_csv(args.profile, family, seed, profile)
    for row in profile.rows:
        print(f"k={row.k} max_error={row.max_error:.6e} mean_error={row.mean_error:.6e} "
              f"bound={row.bound:.6e}")
    for (agent, k), msg in sorted(profile.failures.items()):
        print(f"failed agent={agent} k={k}: {msg}", file=sys.stderr)
    return 0


def cmd_simulate(args):
    p, graphs = _load(args)
    result = run_flooding(p, graphs, args.rounds)
    write_flooding_csv(args.out, result.stats)
    check = message_bound_check(result, p, graphs)
    x_star = solve_equality_constrained(p).x
    err = np.nanmax(np.abs(result.x_hat - x_star))
    print(f"rounds={args.rounds} max_error={err:.6e} message_bound={'ok' if check.ok else 'violated'}")
    for i, msg in sorted(result.trace.errors.items()):
        print(f"failed agent={i}: {msg}", file=sys.stderr)
    return 0 if check.ok else 1


def cmd_baseline(args):
    p, graphs = _load(args)
    x_star = solve_equality_constrained(p).x
    traces = [run_projected_subgradient(p, graphs, args.iters, g, x_star, args.x0) for g in args.gamma0]
    write_baseline_csv(args.out, traces)
    for tr in traces:
        print(f"gamma0={tr.gamma0!r} final_max_error={tr.max_error[-1]:.6e}")
    return 0


def cmd_report(args):
    write_long(args.inputs, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_experiment(args):
    cfg = ExperimentConfig(
        family=args.family, output=args.output, seed=args.seed, n=args.n, m=args.m,
        alpha=args.alpha, beta=args.beta, width=args.width, height=args.height,
        sigma_theta=args.sigma_theta, sigma_p=args.sigma_p, kmin=args.kmin, kmax=args.kmax,
        eps=args.eps, flood_rounds=args.rounds, gamma0=args.gamma0, baseline_iters=args.iters)
    for name, path in run_experiment(cfg).items():
        print(f"{name}: {path}")
    return 0


def _instance_flags(sp):
    sp.add_argument("--n", type=int, default=10, help="grid rows (dispatch) or agent count (rendezvous)")
    sp.add_argument("--m", type=int, default=10, help="grid columns (dispatch)")
    sp.add_argument("--alpha", type=float, default=10.0, help="generation cost coefficient")
    sp.add_argument("--beta", type=float, default=1.0, help="transmission cost coefficient")
    sp.add_argument("--width", type=int, default=5, help="bus grid width (state estimation)")
    sp.add_argument("--height", type=int, default=5, help="bus grid height (state estimation)")
    sp.add_argument("--sigma-theta", type=float, default=0.01, help="angle measurement noise")
    sp.add_argument("--sigma-p", type=float, default=0.01, help="flow measurement noise")
    sp.add_argument("--seed", type=int, default=0, help="random seed")


def _problem_flags(sp):
    sp.add_argument("--problem", required=True, help="problem file written by 'generate'")
    sp.add_argument("--no-block-edges", action="store_true",
                    help="do not couple variables that share an objective block")


def build_parser():
    parser = argparse.ArgumentParser(prog="localityopt",
                                     description="Locality analysis of linearly constrained convex problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", help="write a benchmark problem file")
    sp.add_argument("family", choices=["dispatch", "rendezvous", "state_estimation"])
    _instance_flags(sp)
    sp.add_argument("--out", required=True, help="output problem file")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("locality", help="print kappa, lambda, C and sufficient rounds")
    sp.add_argument("--problem", required=True, help="problem file")
    sp.add_argument("--eps", type=_floats, default=(1e-3, 1e-6), help="comma-separated accuracies")
    sp.add_argument("--out", help="also write the locality CSV here")
    sp.set_defaults(func=cmd_locality)

    sp = sub.add_parser("truncate", help="truncation error profile over k")
    _problem_flags(sp)
    sp.add_argument("--kmin", type=int, default=0, help="smallest neighborhood radius")
    sp.add_argument("--kmax", type=int, default=None, help="largest radius (default: agent-graph diameter)")
    sp.add_argument("--out", required=True, help="per-agent error CSV")
    sp.add_argument("--profile", help="per-k summary CSV")
    sp.add_argument("--family", help="family label for the CSV (default: from problem file)")
    sp.add_argument("--seed", type=int, default=None, help="seed label for the CSV")
    sp.set_defaults(func=cmd_truncate)

    sp = sub.add_parser("simulate", help="simulate K flooding rounds")
    _problem_flags(sp)
    sp.add_argument("--rounds", type=int, default=1, help="number of flooding rounds K")
    sp.add_argument("--out", required=True, help="message trace CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("baseline", help="run the projected subgradient baseline")
    _problem_flags(sp)
    sp.add_argument("--iters", type=int, default=2000, help="iterations")
    sp.add_argument("--gamma0", type=_floats, default=(0.01, 1.0), help="comma-separated initial steps")
    sp.add_argument("--x0", type=float, default=0.0, help="initial value of every copy")
    sp.add_argument("--out", required=True, help="baseline CSV")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("report", help="merge CSVs into one long-format table")
    sp.add_argument("inputs", nargs="+", help="CSV files produced by the other subcommands")
    sp.add_argument("--out", required=True, help="merged CSV")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("experiment", help="generate, analyze, truncate and simulate in one go")
    sp.add_argument("family", choices=["dispatch", "rendezvous", "state_estimation"])
    _instance_flags(sp)
    sp.add_argument("--kmin", type=int, default=0)
    sp.add_argument("--kmax", type=int, default=None)
    sp.add_argument("--eps", type=_floats, default=(1e-3, 1e-6))
    sp.add_argument("--rounds", type=int, default=1, help="flooding rounds for the message trace")
    sp.add_argument("--gamma0", type=_floats, default=(), help="run the baseline for these steps")
    sp.add_argument("--iters", type=int, default=2000, help="baseline iterations")
    sp.add_argument("--output", required=True, help="output directory")
    sp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LocalityError, ValueError, OSError) as exc:
        print(f"localityopt {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
