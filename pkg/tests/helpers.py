"""Random instances and dense oracles shared by the test modules."""

import numpy as np
import scipy.sparse as sp

from localityopt.problem import (ConstrainedProblem, CustomBlock, QuadraticBlock,
                                 SeparableObjective, quadratic)


def random_spd(rng, k, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    ev = np.geomspace(1.0, cond, k) if k > 1 else np.array([rng.uniform(1.0, cond)])
    return (Q * ev) @ Q.T


def random_blocks(rng, n, max_block=3):
    """Random partition of range(n) into quadratic blocks (shuffled indices)."""
    perm = rng.permutation(n)
    blocks, start = [], 0
    while start < n:
        k = int(min(rng.integers(1, max_block + 1), n - start))
        idx = perm[start:start + k]
        H = random_spd(rng, k, cond=rng.uniform(1.0, 5.0)) * rng.uniform(0.5, 2.0)
        blocks.append((idx.tolist(), QuadraticBlock(H, rng.standard_normal(k))))
        start += k
    return blocks


def random_sparse_rows(rng, m, n, per_row=3):
    """Sparse ``m x n`` matrix; row i always touches column i so it has full row rank a.s."""
    rows, cols, vals = [], [], []
    for i in range(m):
        extra = rng.choice(n, size=min(per_row - 1, n), replace=False)
        cs = np.unique(np.concatenate([[i], extra]))
        rows += [i] * cs.size
        cols += cs.tolist()
        vals += (rng.uniform(0.5, 1.5, cs.size) * rng.choice([-1, 1], cs.size)).tolist()
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


def random_problem(rng, n, m, max_block=3, per_row=3):
    A = random_sparse_rows(rng, m, n, per_row)
    obj = SeparableObjective(n, random_blocks(rng, n, max_block))
    return ConstrainedProblem(obj, A, rng.standard_normal(m))


def scalar_problem(A, b, a=None, c=None):
    """One scalar quadratic block ``a/2 x^2 + c x`` per variable."""
    A = sp.csr_matrix(A) if sp.issparse(A) else sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
    n = A.shape[1]
    a = np.ones(n) * 2.0 if a is None else np.asarray(a, dtype=float)
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    obj = SeparableObjective(n, [([i], quadratic(a[i], c[i])) for i in range(n)])
    return ConstrainedProblem(obj, A, np.asarray(b, dtype=float))


def path_problem(nagents, seed=0):
    """Scalar agents on a path: rows ``x_i + x_{i+1} = b_i``."""
    rng = np.random.default_rng(seed)
    A = np.zeros((nagents - 1, nagents))
    for i in range(nagents - 1):
        A[i, i] = A[i, i + 1] = 1.0
    return scalar_problem(A, rng.uniform(0.5, 1.5, nagents - 1), a=rng.uniform(1, 3, nagents))


def star_problem(leaves=3):
    """Center variable 0 shares one row with each leaf."""
    A = np.zeros((leaves, leaves + 1))
    for j in range(leaves):
        A[j, 0] = 1.0
        A[j, j + 1] = 1.0
    return scalar_problem(A, np.arange(1.0, leaves + 1))


def softplus_block(w=1.0):
    """Scalar ``x^2/2 + w log(1 + e^x)``: mu = 1, L = 1 + w/4."""
    return CustomBlock(
        1,
        lambda x: 0.5 * x[0] ** 2 + w * np.logaddexp(0.0, x[0]),
        lambda x: np.array([x[0] + w / (1 + np.exp(-x[0]))]),
        lambda x: np.array([[1 + w * np.exp(-np.logaddexp(0.0, x[0]) - np.logaddexp(0.0, -x[0]))]]),
        mu=1.0, lsmooth=1.0 + w / 4)


def dense_kkt(p, b=None):
    """Dense KKT solve of a quadratic problem: returns (x, nu)."""
    H = p.objective.hessian().toarray()
    g0 = p.objective.gradient(np.zeros(p.n))
    A = p.A.toarray()
    b = p.b if b is None else b
    n, m = A.shape[1], A.shape[0]
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    z = np.linalg.solve(K, np.concatenate([-g0, b]))
    return z[:n], z[n:]


def floyd_warshall(adj):
    dense = np.asarray(adj.toarray() if sp.issparse(adj) else adj) != 0
    n = dense.shape[0]
    D = np.where(dense, 1.0, np.inf)
    np.fill_diagonal(D, 0.0)
    for k in range(n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return D
