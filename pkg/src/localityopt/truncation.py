"""k-hop local sub-problems, their extension to full vectors, and error profiles."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SingularSystemError
from .graphs import agent_neighborhood, agents_to_variables, bfs_distances, constraints_within
from .problem import SeparableObjective, solve_kkt

THREADS_ENV = "LOCALITYOPT_THREADS"


def thread_count():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map, threaded up to ``$LOCALITYOPT_THREADS`` workers."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class LocalSubProblem:
    S: np.ndarray
    C_S: np.ndarray
    sub_A: sp.csr_matrix
    sub_b: np.ndarray
    sub_objective: SeparableObjective


@dataclass(frozen=True, eq=False)
class ExtendedSolution:
    x_hat: np.ndarray
    S: np.ndarray
    C_S: np.ndarray
    b_hat: np.ndarray


def induce_subproblem(p, S):
    """Restrict ``p`` to the block closure of ``S`` and the constraints inside it."""
    S = p.objective.closure(S)
    if S.size == 0:
        raise ValueError("sub-problem needs at least one variable")
    C_S = constraints_within(p.A, S)
    sub_A = p.A[C_S][:, S].tocsr()
    return LocalSubProblem(S, C_S, sub_A, p.b[C_S].copy(), p.objective.restrict(S))


def _independent_rows(A, tol=1e-10):
    """Indices of a maximal linearly independent subset of rows (pivoted QR)."""
    dense = A.toarray().T
    _, R, piv = sla.qr(dense, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.count_nonzero(diag > tol * diag.max())) if diag.size else 0
    return np.sort(piv[:rank])


def solve_local(sub, tol=None):
    """Optimal point of the sub-problem, indexed like ``sub.S``."""
    try:
        return solve_kkt(sub.sub_objective, sub.sub_A, sub.sub_b, tol).x
    except SingularSystemError:
        keep = _independent_rows(sub.sub_A)
        return solve_kkt(sub.sub_objective, sub.sub_A[keep], sub.sub_b[keep], tol).x


def extend_solution(p, sub, x_S):
    """Fill the complement of ``sub.S`` with unconstrained block minimizers."""
    x_hat = p.objective.unconstrained_minimizer()
    x_hat[sub.S] = x_S
    return ExtendedSolution(x_hat, sub.S, sub.C_S, p.A @ x_hat)


def local_solution_on(p, agent, S):
    """Agent ``agent``'s components of the sub-problem induced by ``S``."""
    sub = induce_subproblem(p, S)
    x_S = solve_local(sub)
    pos = np.searchsorted(sub.S, p.objective.block_indices(agent))
    return x_S[pos]


def khop_local_solution(p, graphs, agent, k):
    """Estimate of agent ``agent``'s block from its ``k``-hop sub-problem.

    ``k = 0`` uses the agent's own block and the constraints that involve
    only that block.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    return local_solution_on(p, agent, agent_neighborhood(graphs, agent, k))


@dataclass(frozen=True)
class ErrorRecord:
    k: int
    agent: int
    abs_error: float
    bound: float


@dataclass(frozen=True)
class ProfileRow:
    k: int
    max_error: float
    mean_error: float
    bound: float


@dataclass
class ErrorProfile:
    records: list
    rows: list
    failures: dict


def truncation_error_profile(p, graphs, ks, x_star, report):
    """Per-agent and per-``k`` truncation errors against ``x_star``.

    ``abs_error`` is the largest absolute deviation over the agent's block.
    The bound column is ``report.C * report.lam ** k``. Agents whose local
    solve fails are listed in ``failures`` and skipped.
    """
    ks = list(ks)
    failures = {}

    def run(agent):
        out = []
        dist = bfs_distances(graphs.g_agent, [agent])
        ecc = int(dist.max())
        idx = p.objective.block_indices(agent)
        full = None
        for k in ks:
            if k >= ecc and full is not None:
                est = full
            else:
                S = agents_to_variables(graphs, np.flatnonzero((dist >= 0) & (dist <= k)))
                try:
                    est = local_solution_on(p, agent, S)
                except Exception as exc:  # per-agent failures are reported, not fatal
                    failures[(agent, k)] = repr(exc)
                    continue
                if k >= ecc:
                    full = est
            out.append(ErrorRecord(k, agent, float(np.abs(est - x_star[idx]).max()),
                                   report.bound(k)))
        return out

    records = [r for chunk in parallel_map(run, range(graphs.nagents)) for r in chunk]
    records.sort(key=lambda r: (r.k, r.agent))
    rows = []
    for k in ks:
        errs = np.array([r.abs_error for r in records if r.k == k])
        if errs.size:
            rows.append(ProfileRow(k, float(errs.max()), float(errs.mean()), report.bound(k)))
    return ErrorProfile(records, rows, failures)
