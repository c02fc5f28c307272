"""Seeded instance generators and the end-to-end experiment pipeline."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import pdist, squareform

from .analysis import locality_report
from .graphs import diameter, problem_graphs
from .problem import (ConstrainedProblem, QuadraticBlock, SeparableObjective, quadratic,
                      solve_equality_constrained, write_problem)
from .protocol import run_flooding, run_projected_subgradient
from .truncation import truncation_error_profile

FAMILIES = ("dispatch", "rendezvous", "state_estimation")


@dataclass(eq=False)
class Instance:
    family: str
    problem: ConstrainedProblem
    graphs: object
    params: dict
    extra: dict = field(default_factory=dict)


def gen_dispatch(n, m, alpha, beta=1.0, seed=0, couple_objective_blocks=True):
    """Economic dispatch on an ``n x m`` grid of generators.

    One load sits at the center of every grid cell and is served by the
    four generators at the cell corners, so there are ``(n-1)(m-1)`` loads.
    Variable ``x[g, l]`` is the power generator ``g`` sends to load ``l``.
    Generator ``g`` pays ``alpha/2 (sum_l x[g, l])**2 + beta/2 sum_l x[g, l]**2``.
    """
    if n < 2 or m < 2:
        raise ValueError("grid needs at least 2 x 2 generators")
    if alpha < 0 or beta <= 0:
        raise ValueError("need alpha >= 0 and beta > 0")
    rng = np.random.default_rng(seed)
    loads = [(r, c) for r in range(n - 1) for c in range(m - 1)]
    demand = rng.uniform(0.5, 1.5, size=len(loads))
    served = {}
    var_load = []
    for j, (r, c) in enumerate(loads):
        for g in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
            served.setdefault(g, []).append(len(var_load))
            var_load.append(j)
    nvar = len(var_load)
    A = sp.csr_matrix((np.ones(nvar), (var_load, np.arange(nvar))), shape=(len(loads), nvar))
    blocks = []
    for g in sorted(served):
        idx = served[g]
        k = len(idx)
        blocks.append((idx, QuadraticBlock(beta * np.eye(k) + alpha * np.ones((k, k)), np.zeros(k))))
    params = dict(n=n, m=m, alpha=alpha, beta=beta, seed=seed)
    p = ConstrainedProblem(SeparableObjective(nvar, blocks), A, demand,
                           meta=dict(family="dispatch", **params))
    return Instance("dispatch", p, problem_graphs(p, couple_objective_blocks), params,
                    dict(generators=sorted(served), loads=loads))


def gen_rendezvous(n, seed=0, couple_objective_blocks=True):
    """Agents at uniform points in the unit square agree on a meeting point.

    Each agent owns a local copy ``(xhat_i, yhat_i)`` and pays the squared
    distance to its own position; copies are tied together along the edges
    of the Euclidean minimum spanning tree.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, 2))
    tree = minimum_spanning_tree(squareform(pdist(pts))).tocoo()
    edges = sorted((min(i, j), max(i, j)) for i, j in zip(tree.row.tolist(), tree.col.tolist()))
    rows, cols, vals = [], [], []
    for e, (i, j) in enumerate(edges):
        for coord in (0, 1):
            r = 2 * e + coord
            rows += [r, r]
            cols += [2 * i + coord, 2 * j + coord]
            vals += [1.0, -1.0]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * len(edges), 2 * n))
    blocks = [([2 * i, 2 * i + 1], QuadraticBlock(2 * np.eye(2), -2 * pts[i], float(pts[i] @ pts[i])))
              for i in range(n)]
    params = dict(n=n, seed=seed)
    p = ConstrainedProblem(SeparableObjective(2 * n, blocks), A, np.zeros(A.shape[0]),
                           meta=dict(family="rendezvous", **params))
    return Instance("rendezvous", p, problem_graphs(p, couple_objective_blocks), params,
                    dict(points=pts, edges=edges))


def gen_state_estimation(width, height, sigma_theta=0.01, sigma_p=0.01, seed=0,
                         noise=True, couple_objective_blocks=True):
    """DC state estimation on a ``width x height`` grid network.

    Variables are ordered flows first, then angles. Each line ``(i, j)``
    contributes a row ``P_ij + b_ij (theta_i - theta_j) = 0``. The objective
    is the negative log posterior ``sum ((v - v_meas) / sigma)**2``.
    """
    if width < 2 or height < 2:
        raise ValueError("grid needs at least 2 x 2 buses")
    if sigma_theta <= 0 or sigma_p <= 0:
        raise ValueError("noise levels must be positive")
    rng = np.random.default_rng(seed)
    nbus = width * height
    bus = lambda r, c: r * width + c  # noqa: E731
    lines = []
    for r in range(height):
        for c in range(width):
            if c + 1 < width:
                lines.append((bus(r, c), bus(r, c + 1)))
            if r + 1 < height:
                lines.append((bus(r, c), bus(r + 1, c)))
    nline = len(lines)
    susceptance = rng.uniform(1.0, 2.0, size=nline)
    theta = rng.uniform(-0.1, 0.1, size=nbus)
    flow = np.array([-susceptance[e] * (theta[i] - theta[j]) for e, (i, j) in enumerate(lines)])
    theta_meas = theta + (rng.normal(0.0, sigma_theta, nbus) if noise else 0.0)
    flow_meas = flow + (rng.normal(0.0, sigma_p, nline) if noise else 0.0)
    rows, cols, vals = [], [], []
    for e, (i, j) in enumerate(lines):
        rows += [e, e, e]
        cols += [e, nline + i, nline + j]
        vals += [1.0, susceptance[e], -susceptance[e]]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nline, nline + nbus))
    meas = np.concatenate([flow_meas, theta_meas])
    sig = np.concatenate([np.full(nline, sigma_p), np.full(nbus, sigma_theta)])
    blocks = [([v], quadratic(2 / sig[v]**2, -2 * meas[v] / sig[v]**2, meas[v]**2 / sig[v]**2))
              for v in range(nline + nbus)]
    params = dict(width=width, height=height, sigma_theta=sigma_theta, sigma_p=sigma_p,
                  seed=seed, noise=noise)
    p = ConstrainedProblem(SeparableObjective(nline + nbus, blocks), A, np.zeros(nline),
                           meta=dict(family="state_estimation", **params))
    return Instance("state_estimation", p, problem_graphs(p, couple_objective_blocks), params,
                    dict(truth=np.concatenate([flow, theta]), lines=lines))


# -- experiment pipeline -------------------------------------------------------

@dataclass
class ExperimentConfig:
    family: str
    output: str
    seed: int = 0
    n: int = 10
    m: int = 10
    alpha: float = 10.0
    beta: float = 1.0
    width: int = 5
    height: int = 5
    sigma_theta: float = 0.01
    sigma_p: float = 0.01
    kmin: int = 0
    kmax: int | None = None
    eps: tuple = (1e-3, 1e-6)
    flood_rounds: int = 1
    gamma0: tuple = ()
    baseline_iters: int = 2000
    subgradient_x0: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if min(self.n, self.m, self.width, self.height) <= 0:
            raise ValueError("dimensions must be positive")


def make_instance(cfg):
    if cfg.family == "dispatch":
        return gen_dispatch(cfg.n, cfg.m, cfg.alpha, cfg.beta, cfg.seed)
    if cfg.family == "rendezvous":
        return gen_rendezvous(cfg.n, cfg.seed)
    return gen_state_estimation(cfg.width, cfg.height, cfg.sigma_theta, cfg.sigma_p, cfg.seed)


def _num(v):
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_locality_csv(path, report, eps_list):
    write_csv(path, ["kappa", "lambda", "C", "eps", "K"],
              [[_num(report.kappa), _num(report.lam), _num(report.C), _num(e), report.k_sufficient(e)]
               for e in eps_list])


def write_errors_csv(path, family, seed, profile):
    write_csv(path, ["family", "seed", "k", "agent", "abs_error", "bound"],
              [[family, seed, r.k, r.agent, _num(r.abs_error), _num(r.bound)] for r in profile.records])


def write_profile_csv(path, family, seed, profile):
    write_csv(path, ["family", "seed", "k", "max_error", "mean_error", "bound"],
              [[family, seed, r.k, _num(r.max_error), _num(r.mean_error), _num(r.bound)]
               for r in profile.rows])


def write_flooding_csv(path, stats):
    write_csv(path, ["round", "edge_src", "edge_dst", "payload_units"], sorted(stats.records))


def write_baseline_csv(path, traces):
    rows = []
    for tr in traces:
        rows += [[it + 1, _num(e), _num(tr.gamma0)] for it, e in enumerate(tr.max_error)]
    write_csv(path, ["iter", "max_error", "gamma0"], rows)


def run_experiment(cfg):
    """Generate, analyze and truncate one instance; write CSV outputs.

    Returns a dict of the written paths. Outputs are deterministic for a
    given configuration.
    """
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    inst = make_instance(cfg)
    p, graphs = inst.problem, inst.graphs
    report = locality_report(p)
    x_star = solve_equality_constrained(p).x
    kmax = diameter(graphs.g_agent) if cfg.kmax is None else cfg.kmax
    profile = truncation_error_profile(p, graphs, range(cfg.kmin, kmax + 1), x_star, report)
    flood = run_flooding(p, graphs, cfg.flood_rounds)

    paths = dict(problem=out / "problem.txt", locality=out / "locality.csv",
                 errors=out / "errors.csv", profile=out / "profile.csv",
                 flooding=out / "flooding.csv", config=out / "config.json")
    write_problem(p, paths["problem"])
    write_locality_csv(paths["locality"], report, cfg.eps)
    write_errors_csv(paths["errors"], cfg.family, cfg.seed, profile)
    write_profile_csv(paths["profile"], cfg.family, cfg.seed, profile)
    write_flooding_csv(paths["flooding"], flood.stats)
    if cfg.gamma0:
        traces = [run_projected_subgradient(p, graphs, cfg.baseline_iters, g, x_star, cfg.subgradient_x0)
                  for g in cfg.gamma0]
        paths["baseline"] = out / "baseline.csv"
        write_baseline_csv(paths["baseline"], traces)
    record = asdict(cfg)
    record["eps"] = list(cfg.eps)
    record["gamma0"] = list(cfg.gamma0)
    record["load_distribution"] = "uniform(0.5, 1.5)" if cfg.family == "dispatch" else None
    record["failures"] = {f"{a},{k}": msg for (a, k), msg in sorted(profile.failures.items())}
    paths["config"].write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def merge_long(paths):
    """Merge experiment CSVs into rows ``(source, family, seed, series, x, y)``."""
    rows = []
    for path in paths:
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = reader.fieldnames or []
            for rec in reader:
                fam, seed = rec.get("family", ""), rec.get("seed", "")
                if {"k", "max_error", "mean_error", "bound"} <= set(cols):
                    for series in ("max_error", "mean_error", "bound"):
                        rows.append([path.name, fam, seed, series, rec["k"], rec[series]])
                elif {"k", "agent", "abs_error", "bound"} <= set(cols):
                    rows.append([path.name, fam, seed, f"agent{rec['agent']}", rec["k"], rec["abs_error"]])
                elif {"iter", "max_error", "gamma0"} <= set(cols):
                    rows.append([path.name, fam, seed, f"gamma0={rec['gamma0']}", rec["iter"],
                                 rec["max_error"]])
                elif {"round", "edge_src", "edge_dst", "payload_units"} <= set(cols):
                    rows.append([path.name, fam, seed, f"edge{rec['edge_src']}-{rec['edge_dst']}",
                                 rec["round"], rec["payload_units"]])
                elif {"eps", "K"} <= set(cols):
                    rows.append([path.name, fam, seed, "K", rec["eps"], rec["K"]])
                else:
                    raise ValueError(f"{path}: unrecognized CSV schema {cols}")
    return rows


def write_long(paths, out):
    write_csv(out, ["source", "family", "seed", "series", "x", "y"], merge_long(paths))
