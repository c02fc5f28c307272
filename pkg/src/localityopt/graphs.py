"""Coupling graphs read off the sparsity of the constraint matrix.

All products here are structural: they run on 0/1 patterns, so an entry
is present whenever the combinatorics allow it, regardless of numerical
cancellation.

When ``couple_objective_blocks`` is set, variables that share an objective
block are treated as coupled. The inverse Hessian is then block diagonal
rather than diagonal, and the constraint graph and the primal-dual graph
follow the pattern of ``A P A'`` and ``P A'`` (``P`` the block pattern)
instead of ``A A'`` and ``A'``. With singleton blocks both modes coincide.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

UNREACHABLE = math.inf


def pattern(M):
    """0/1 integer CSR matrix with the stored support of ``M``."""
    M = sp.csr_matrix(M, copy=True)
    M.eliminate_zeros()
    P = sp.csr_matrix((np.ones(M.nnz, dtype=np.int64), M.indices, M.indptr), shape=M.shape)
    P.sum_duplicates()
    P.data[:] = 1
    return P


def _adjacency(P):
    """Symmetric 0/1 CSR without self loops."""
    P = pattern(P)
    P = pattern(P + P.T)
    P.setdiag(0)
    P.eliminate_zeros()
    P.sort_indices()
    return P


def block_pattern(n, owner):
    """``P[i, j] = 1`` iff variables ``i`` and ``j`` share an objective block."""
    owner = np.asarray(owner)
    B = sp.csr_matrix((np.ones(n, dtype=np.int64), (owner, np.arange(n))),
                      shape=(int(owner.max()) + 1, n))
    return pattern(B.T @ B)


@dataclass(frozen=True, eq=False)
class CouplingGraphs:
    """Adjacency structure of one constrained problem.

    ``g_opt`` is stored as an ``n x m`` biadjacency matrix (variables by
    constraints). ``g_agent`` is the quotient of ``g_dec`` by the objective
    blocks: agents are adjacent when their variables share a constraint.
    """

    g_dec: sp.csr_matrix
    g_con: sp.csr_matrix
    g_opt: sp.csr_matrix
    g_agent: sp.csr_matrix
    owner: np.ndarray
    agents: tuple
    couple_objective_blocks: bool

    @property
    def n(self):
        return self.g_dec.shape[0]

    @property
    def m(self):
        return self.g_con.shape[0]

    @property
    def nagents(self):
        return len(self.agents)

    def graph(self, which):
        if which == "opt":
            n, m = self.g_opt.shape
            return sp.bmat([[None, self.g_opt], [self.g_opt.T, None]], format="csr")
        try:
            return {"dec": self.g_dec, "con": self.g_con, "agent": self.g_agent}[which]
        except KeyError:
            raise ValueError(f"unknown graph {which!r}") from None


def build_graphs(A, blocks=None, couple_objective_blocks=True):
    """Build ``CouplingGraphs`` from ``A`` and an optional block partition.

    ``blocks`` is a list of index arrays partitioning the columns of ``A``;
    ``None`` means one variable per block.
    """
    PA = pattern(A)
    m, n = PA.shape
    if PA.nnz == 0:
        raise ValueError("constraint matrix has no nonzeros")
    if blocks is None:
        blocks = [np.array([j]) for j in range(n)]
    owner = np.full(n, -1, dtype=np.int64)
    for b, idx in enumerate(blocks):
        owner[np.asarray(idx, dtype=np.int64)] = b
    if np.any(owner < 0):
        raise ValueError("blocks do not cover every variable")
    agents = tuple(np.sort(np.asarray(idx, dtype=np.int64)) for idx in blocks)

    if couple_objective_blocks:
        P = block_pattern(n, owner)
        opt = pattern(P @ PA.T)
        g_dec = _adjacency(PA.T @ PA + P)
    else:
        opt = pattern(PA.T)
        g_dec = _adjacency(PA.T @ PA)
    g_con = _adjacency(PA @ opt)
    opt.sort_indices()

    # agent i touches constraint c iff one of its variables appears in c
    membership = sp.csr_matrix((np.ones(n, dtype=np.int64), (owner, np.arange(n))),
                               shape=(len(agents), n))
    touch = pattern(membership @ PA.T)
    g_agent = _adjacency(touch @ touch.T)
    return CouplingGraphs(g_dec, g_con, opt, g_agent, owner, agents, bool(couple_objective_blocks))


def problem_graphs(p, couple_objective_blocks=True):
    """``build_graphs`` with one agent per objective block of ``p``."""
    return build_graphs(p.A, [idx for idx, _ in p.objective.blocks], couple_objective_blocks)


def neighbors_of(adj, vertices):
    """Concatenated CSR neighbor lists of ``vertices`` (with repeats)."""
    starts, ends = adj.indptr[vertices], adj.indptr[vertices + 1]
    lengths = ends - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=adj.indices.dtype)
    offsets = np.repeat(starts - np.cumsum(lengths) + lengths, lengths)
    return adj.indices[offsets + np.arange(total)]


def bfs_distances(adj, seeds, max_depth=None):
    """Hop distance from the seed set to every vertex; ``-1`` if not reached."""
    if not (sp.issparse(adj) and adj.format == "csr"):
        adj = sp.csr_matrix(adj)
    dist = np.full(adj.shape[0], -1, dtype=np.int64)
    frontier = np.unique(np.asarray(seeds, dtype=np.int64))
    dist[frontier] = 0
    depth = 0
    while frontier.size and (max_depth is None or depth < max_depth):
        depth += 1
        nbrs = np.unique(neighbors_of(adj, frontier))
        frontier = nbrs[dist[nbrs] < 0]
        dist[frontier] = depth
    return dist


def khop(graphs, which, seed, k):
    """Sorted vertex array ``{j : d(seed, j) <= k}`` in the chosen graph.

    For ``which="opt"`` vertices are numbered primal first (``0..n-1``) then
    dual (``n..n+m-1``).
    """
    if k < 0:
        raise ValueError("radius must be non-negative")
    seed = np.atleast_1d(np.asarray(seed, dtype=np.int64))
    dist = bfs_distances(graphs.graph(which), seed, max_depth=k)
    return np.flatnonzero(dist >= 0)


def agent_neighborhood(graphs, agent, k):
    """Variables owned by agents within ``k`` hops of ``agent``."""
    return agents_to_variables(graphs, khop(graphs, "agent", [agent], k))


def agents_to_variables(graphs, ids):
    return np.sort(np.concatenate([graphs.agents[a] for a in ids]))


def diameter(adj):
    """Largest finite eccentricity (the diameter of each component, maxed)."""
    best = 0
    for v in range(adj.shape[0]):
        best = max(best, int(bfs_distances(adj, [v]).max()))
    return best


def eccentricity(adj, v):
    return int(bfs_distances(adj, [v]).max())


def constraints_within(A, S):
    """Rows of ``A`` whose support lies inside the variable set ``S``."""
    A = sp.csr_matrix(A)
    outside = np.ones(A.shape[1], dtype=bool)
    outside[np.asarray(S, dtype=np.int64)] = False
    row_of = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    bad = outside[A.indices] & (A.data != 0)
    return np.flatnonzero(np.bincount(row_of, weights=bad, minlength=A.shape[0]) == 0)


def primal_dual_distances(graphs, duals):
    """Distance from every variable to the dual set ``duals``.

    ``d(i, J) = min{k >= 1 : i in N1_opt(Ncon_{k-1}(J))}``, i.e. one plus the
    constraint-graph distance from ``J`` to the nearest constraint adjacent
    to ``i`` in ``g_opt``. Unreachable variables get ``inf``.
    """
    out = np.full(graphs.n, UNREACHABLE)
    duals = np.atleast_1d(np.asarray(duals, dtype=np.int64))
    if duals.size == 0:
        return out
    dcon = bfs_distances(graphs.g_con, duals).astype(float)
    dcon[dcon < 0] = UNREACHABLE
    opt = graphs.g_opt
    for i in range(graphs.n):
        cs = opt.indices[opt.indptr[i]:opt.indptr[i + 1]]
        if cs.size:
            out[i] = 1.0 + dcon[cs].min()
    return out


def primal_dual_distance(graphs, i, c):
    d = primal_dual_distances(graphs, [c])[i]
    return d if math.isinf(d) else int(d)


def set_distance(graphs, S, duals):
    """``min d(i, j)`` over ``i in S`` and ``j in duals``."""
    S = np.atleast_1d(np.asarray(S, dtype=np.int64))
    if S.size == 0:
        return UNREACHABLE
    d = primal_dual_distances(graphs, duals)[S].min()
    return d if math.isinf(d) else int(d)


def dump_graphs(graphs):
    """Edge-list text: ``graph <name>`` headers followed by ``e i j`` lines."""
    out = io.StringIO()
    for name in ("dec", "con", "agent"):
        out.write(f"graph {name}\n")
        upper = sp.triu(graphs.graph(name), k=1).tocoo()
        for k in np.lexsort((upper.col, upper.row)):
            out.write(f"e {upper.row[k]} {upper.col[k]}\n")
    out.write("graph opt\n")
    coo = graphs.g_opt.tocoo()
    for k in np.lexsort((coo.col, coo.row)):
        out.write(f"e {coo.row[k]} {coo.col[k]}\n")
    return out.getvalue()
