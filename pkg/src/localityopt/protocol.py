"""Round-synchronous simulation of the flooding protocol and a consensus baseline.

Message sizes are counted in abstract units: ``B`` per objective block
(the number of scalars describing it) plus one unit per matrix or vector
scalar carried.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graphs import bfs_distances, pattern
from .truncation import local_solution_on, parallel_map


def block_units(fn):
    """Scalars describing a block: its Hessian plus its linear term."""
    return fn.size * fn.size + fn.size


@dataclass
class AgentState:
    id: int
    neighbors: tuple
    known_agents: set
    known_rows: set
    known_b: set
    round: int = 0


@dataclass
class MessageStats:
    """Per-round, per-directed-edge payloads: ``(round, src, dst, units)``."""

    records: list = field(default_factory=list)

    def add(self, rnd, src, dst, units):
        self.records.append((rnd, src, dst, units))

    def by_round(self, rnd):
        return [r for r in self.records if r[0] == rnd]

    def max_payload(self, rnd):
        return max((r[3] for r in self.by_round(rnd)), default=0)


@dataclass
class SimTrace:
    states: list
    knowledge: list  # knowledge[k][i] = agents known to i after round k
    errors: dict


@dataclass
class FloodingResult:
    estimates: dict
    x_hat: np.ndarray
    stats: MessageStats
    trace: SimTrace


class _Ledger:
    """Static per-agent facts derived from the problem data."""

    def __init__(self, p, graphs, function_units=None):
        PA = pattern(p.A)
        owner = graphs.owner
        self.rows = []
        self.init_units = []
        self.units = []
        colnnz = np.diff(PA.tocsc().indptr)
        rownnz = np.diff(PA.indptr)
        PAc = PA.tocsc()
        for a, idx in enumerate(graphs.agents):
            rows = np.unique(np.concatenate([PAc.indices[PAc.indptr[j]:PAc.indptr[j + 1]] for j in idx]))
            self.rows.append(frozenset(int(r) for r in rows))
            fn = p.objective.blocks[int(owner[idx[0]])][1]
            B = block_units(fn) if function_units is None else function_units
            self.init_units.append(int(colnnz[idx].sum()))
            self.units.append(B + int(rownnz[rows].sum()) + len(rows))
        self.B = max(block_units(fn) for _, fn in p.objective.blocks) if function_units is None \
            else function_units
        # widest constraint (in variables) and most constraints held by one agent
        self.max_S = int(rownnz.max()) if rownnz.size else 0
        self.max_C = max((len(r) for r in self.rows), default=0)


def run_flooding(p, graphs, K, function_units=None):
    """Simulate an initialization round and ``K`` flooding rounds, then solve locally.

    Every send in round ``k`` is computed from the state after round
    ``k - 1``. After the last round each agent solves the sub-problem on the
    variables of the agents it knows about, through the same code path as
    :func:`localityopt.truncation.khop_local_solution`.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    ledger = _Ledger(p, graphs, function_units)
    adj = graphs.g_agent
    nbrs = [tuple(int(j) for j in adj.indices[adj.indptr[i]:adj.indptr[i + 1]])
            for i in range(graphs.nagents)]
    stats = MessageStats()
    states = []
    for i in range(graphs.nagents):
        states.append(AgentState(i, nbrs[i], {i}, set(ledger.rows[i]), set(ledger.rows[i])))
        for j in nbrs[i]:
            stats.add(0, i, j, ledger.init_units[i])
    knowledge = [[frozenset(s.known_agents) for s in states]]

    for k in range(1, K + 1):
        snapshot = [frozenset(s.known_agents) for s in states]
        for i, s in enumerate(states):
            payload = sum(ledger.units[l] for l in snapshot[i])
            for j in s.neighbors:
                stats.add(k, i, j, payload)
        for i, s in enumerate(states):
            for j in s.neighbors:
                s.known_agents |= snapshot[j]
            for l in s.known_agents:
                s.known_rows |= ledger.rows[l]
            s.known_b = set(s.known_rows)
            s.round = k
        knowledge.append([frozenset(s.known_agents) for s in states])

    errors = {}

    def solve(i):
        S = np.sort(np.concatenate([graphs.agents[a] for a in states[i].known_agents]))
        try:
            return local_solution_on(p, i, S)
        except Exception as exc:
            errors[i] = repr(exc)
            return None

    results = parallel_map(solve, range(graphs.nagents))
    estimates = {i: est for i, est in enumerate(results) if est is not None}
    x_hat = np.full(p.n, np.nan)
    for i, est in estimates.items():
        x_hat[graphs.agents[i]] = est
    return FloodingResult(estimates, x_hat, stats, SimTrace(states, knowledge, errors))


@dataclass
class BoundReport:
    ok: bool
    violations: list
    B: int
    max_S: int
    max_C: int


def message_bound_check(result, p, graphs, function_units=None):
    """Compare every payload of ``result`` with ``(B + 4 maxS maxC) |N(i, k-1)|``."""
    ledger = _Ledger(p, graphs, function_units)
    per_item = ledger.B + 4 * ledger.max_S * ledger.max_C
    violations = []
    for rnd, src, dst, units in result.stats.records:
        if rnd == 0:
            limit = per_item
        else:
            limit = per_item * len(result.trace.knowledge[rnd - 1][src])
        if units > limit:
            violations.append((rnd, src, dst, units, limit))
    return BoundReport(not violations, violations, ledger.B, ledger.max_S, ledger.max_C)


def lazy_metropolis(graphs):
    """Lazy Metropolis weights on the agent graph.

    ``W[i, j] = 1 / (2 max(deg i, deg j))`` on edges and the diagonal takes
    the remaining mass, which keeps ``W`` symmetric and doubly stochastic.
    """
    adj = graphs.g_agent
    n = adj.shape[0]
    if n > 1 and np.any(bfs_distances(adj, [0]) < 0):
        raise ValueError("agent graph is disconnected")
    deg = np.diff(adj.indptr)
    W = np.zeros((n, n))
    coo = adj.tocoo()
    W[coo.row, coo.col] = 1.0 / (2.0 * np.maximum(deg[coo.row], deg[coo.col]))
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return W


def project_affine(y, A, b):
    """Orthogonal projection of ``y`` onto ``{x : A x = b}`` (``A`` full row rank)."""
    A = sp.csr_matrix(A)
    if A.shape[0] == 0:
        return np.array(y, dtype=float)
    r = A @ y - b
    G = (A @ A.T).toarray()
    return y - A.T @ np.linalg.solve(G, r)


@dataclass
class SubgradientTrace:
    gamma0: float
    max_error: np.ndarray
    x_local: np.ndarray


class _Projector:
    def __init__(self, A, b):
        A = sp.csr_matrix(A)
        self.cols = np.unique(A.indices)
        self.A = A[:, self.cols].toarray()
        self.b = np.asarray(b, dtype=float)
        self.G = np.linalg.inv(self.A @ self.A.T) if self.A.shape[0] else None

    def __call__(self, y):
        if self.G is None:
            return y
        yc = y[self.cols]
        y[self.cols] = yc - self.A.T @ (self.G @ (self.A @ yc - self.b))
        return y


def run_projected_subgradient(p, graphs, iters, gamma0, x_star, x0=0.0):
    """Distributed projected subgradient with lazy Metropolis consensus.

    Every agent keeps a copy of the full decision vector, mixes it with its
    neighbors' copies, steps along the gradient of its own block with step
    ``gamma0 / k**0.55`` and projects onto the affine set of the constraints
    it participates in. Returns the max-over-agents error of the extracted
    local estimates after each iteration.
    """
    W = lazy_metropolis(graphs)
    nag = graphs.nagents
    X = np.full((nag, p.n), float(x0))
    PA = pattern(p.A).tocsc()
    projectors = []
    for idx in graphs.agents:
        rows = np.unique(np.concatenate([PA.indices[PA.indptr[j]:PA.indptr[j + 1]] for j in idx]))
        projectors.append(_Projector(p.A[rows], p.b[rows]))
    owner = graphs.owner
    blocks = [p.objective.blocks[int(owner[idx[0]])] for idx in graphs.agents]
    max_err = np.empty(iters)
    for k in range(1, iters + 1):
        step = gamma0 / k**0.55
        Y = W @ X
        for i, (idx, fn) in enumerate(blocks):
            Y[i, idx] -= step * fn.grad(X[i, idx])
            projectors[i](Y[i])
        X = Y
        max_err[k - 1] = max(np.abs(X[i, idx] - x_star[idx]).max() for i, idx in enumerate(graphs.agents))
    x_local = np.empty(p.n)
    for i, idx in enumerate(graphs.agents):
        x_local[idx] = X[i, idx]
    return SubgradientTrace(float(gamma0), max_err, x_local)
