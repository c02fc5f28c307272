"""Separable strongly convex objectives under sparse linear equality constraints.

The solvers here are the exact oracle the rest of the package measures
truncated solutions against: quadratic problems take a single sparse KKT
factorization, anything else goes through damped Newton on the KKT system.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DimensionMismatch, SingularSystemError

TOL_QUADRATIC = 1e-10
TOL_NEWTON = 1e-8
NEWTON_MAX_ITER = 60
# Relative pivot magnitude below which AA^T (or the KKT matrix) is treated as singular.
RANK_PIVOT_TOL = 1e-14
KKT_PIVOT_TOL = 1e-13
DENSE_LIMIT = 2000


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class QuadraticBlock:
    """``0.5 * x' Q x + c' x + const`` on a block of variables."""

    is_quadratic = True

    def __init__(self, hess, lin, const=0.0):
        hess = np.atleast_2d(np.asarray(hess, dtype=float))
        lin = np.atleast_1d(np.asarray(lin, dtype=float))
        if hess.shape != (lin.size, lin.size):
            raise DimensionMismatch(
                f"block Hessian {hess.shape} does not match linear term of size {lin.size}")
        if not np.allclose(hess, hess.T, rtol=0, atol=1e-12 * (1 + np.abs(hess).max())):
            raise ValueError("block Hessian must be symmetric")
        eig = np.linalg.eigvalsh(hess)
        if eig[0] <= 0:
            raise ValueError(f"block Hessian is not positive definite (min eigenvalue {eig[0]:g})")
        self.hess = _readonly(hess)
        self.lin = _readonly(lin)
        self.const = float(const)
        self.mu = float(eig[0])
        self.lsmooth = float(eig[-1])

    @property
    def size(self):
        return self.lin.size

    def value(self, x):
        return float(0.5 * x @ self.hess @ x + self.lin @ x + self.const)

    def grad(self, x):
        return self.hess @ x + self.lin

    def hessian(self, x=None):
        return self.hess

    def minimizer(self, tol=None):
        return sla.cho_solve(sla.cho_factor(self.hess), -self.lin)

    def __repr__(self):
        return f"QuadraticBlock(size={self.size}, mu={self.mu:g}, L={self.lsmooth:g})"


def quadratic(a, c=0.0, const=0.0):
    """Scalar block ``0.5 * a * x**2 + c * x + const``."""
    return QuadraticBlock([[a]], [c], const)


class CustomBlock:
    """Block defined by user callbacks.

    ``mu`` and ``lsmooth`` are declared by the caller; use
    :func:`check_curvature` to spot-check them on sample points.
    """

    is_quadratic = False

    def __init__(self, size: int, value: Callable, grad: Callable, hess: Callable,
                 mu: float, lsmooth: float):
        if not 0 < mu <= lsmooth:
            raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={lsmooth}")
        self._size = int(size)
        self._value = value
        self._grad = grad
        self._hess = hess
        self.mu = float(mu)
        self.lsmooth = float(lsmooth)

    @property
    def size(self):
        return self._size

    def value(self, x):
        return float(self._value(x))

    def grad(self, x):
        return np.atleast_1d(np.asarray(self._grad(x), dtype=float))

    def hessian(self, x):
        return np.atleast_2d(np.asarray(self._hess(x), dtype=float))

    def minimizer(self, tol=TOL_NEWTON, max_iter=NEWTON_MAX_ITER):
        x = np.zeros(self.size)
        for _ in range(max_iter):
            g = self.grad(x)
            if np.abs(g).max() <= tol:
                return x
            step = np.linalg.solve(self.hessian(x), -g)
            t, f0, slope = 1.0, self.value(x), g @ step
            while self.value(x + t * step) > f0 + 0.25 * t * slope and t > 1e-12:
                t *= 0.5
            x = x + t * step
        if np.abs(self.grad(x)).max() <= tol:
            return x
        raise ConvergenceError("Newton on a custom block did not converge")


def _sorted_block(idx, fn):
    """Same block with its variables listed in increasing index order."""
    perm = np.argsort(idx, kind="stable")
    if fn.is_quadratic:
        return idx[perm], QuadraticBlock(fn.hess[np.ix_(perm, perm)], fn.lin[perm], fn.const)
    inv = np.argsort(perm)
    return idx[perm], CustomBlock(
        fn.size,
        lambda x: fn.value(x[inv]),
        lambda x: fn.grad(x[inv])[perm],
        lambda x: fn.hessian(x[inv])[np.ix_(perm, perm)],
        fn.mu, fn.lsmooth)


def check_curvature(block, points, slack=1e-9):
    """True if every Hessian eigenvalue at ``points`` lies in [mu, L]."""
    for x in points:
        eig = np.linalg.eigvalsh(block.hessian(np.atleast_1d(x)))
        if eig[0] < block.mu * (1 - slack) or eig[-1] > block.lsmooth * (1 + slack):
            return False
    return True


class SeparableObjective:
    """Sum of block functions over a partition of ``range(n)``."""

    def __init__(self, n: int, blocks: Sequence[tuple[Sequence[int], object]]):
        self.n = int(n)
        self.blocks = []
        owner = np.full(self.n, -1, dtype=np.int64)
        for b, (idx, fn) in enumerate(blocks):
            idx = np.asarray(idx, dtype=np.int64).ravel()
            if idx.size != fn.size:
                raise DimensionMismatch(f"block {b}: {idx.size} indices for a size-{fn.size} function")
            if idx.size == 0 or idx.min() < 0 or idx.max() >= self.n:
                raise ValueError(f"block {b} has indices outside [0, {self.n})")
            if np.any(owner[idx] >= 0) or np.unique(idx).size != idx.size:
                raise ValueError(f"block {b} overlaps another block")
            owner[idx] = b
            if np.any(np.diff(idx) < 0):
                idx, fn = _sorted_block(idx, fn)
            idx.setflags(write=False)
            self.blocks.append((idx, fn))
        if np.any(owner < 0):
            raise ValueError("blocks do not cover every variable")
        owner.setflags(write=False)
        self.owner = owner
        self.is_quadratic = all(fn.is_quadratic for _, fn in self.blocks)
        self.mu = min(fn.mu for _, fn in self.blocks)
        self.lsmooth = max(fn.lsmooth for _, fn in self.blocks)
        self._quad = None
        self._quad_inv = None
        if self.is_quadratic:
            self._quad = (self._assemble(lambda fn: fn.hess), self._linear())
            self._quad_inv = self._assemble(lambda fn: np.linalg.inv(fn.hess))

    @property
    def nblocks(self):
        return len(self.blocks)

    def block_indices(self, b):
        return self.blocks[b][0]

    def _linear(self):
        c = np.zeros(self.n)
        for idx, fn in self.blocks:
            c[idx] = fn.lin
        return c

    def _assemble(self, mat_of):
        rows, cols, vals = [], [], []
        for idx, fn in self.blocks:
            m = mat_of(fn)
            rows.append(np.repeat(idx, idx.size))
            cols.append(np.tile(idx, idx.size))
            vals.append(np.asarray(m).ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n))

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatch(f"expected a vector of length {self.n}, got shape {x.shape}")
        return x

    def value(self, x):
        x = self._check(x)
        return sum(fn.value(x[idx]) for idx, fn in self.blocks)

    def gradient(self, x):
        x = self._check(x)
        if self._quad is not None:
            H, c = self._quad
            return H @ x + c
        g = np.empty(self.n)
        for idx, fn in self.blocks:
            g[idx] = fn.grad(x[idx])
        return g

    def hessian(self, x=None):
        """Block-diagonal Hessian as CSR; ``x`` may be omitted for quadratics."""
        if self._quad is not None:
            return self._quad[0]
        x = self._check(x)
        return self._assemble_at(x, inverse=False)

    def inverse_hessian(self, x=None):
        if self._quad_inv is not None:
            return self._quad_inv
        x = self._check(x)
        return self._assemble_at(x, inverse=True)

    def _assemble_at(self, x, inverse):
        rows, cols, vals = [], [], []
        for idx, fn in self.blocks:
            h = fn.hessian(x[idx])
            if inverse:
                h = np.linalg.inv(h)
            rows.append(np.repeat(idx, idx.size))
            cols.append(np.tile(idx, idx.size))
            vals.append(h.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n))

    def unconstrained_minimizer(self, tol=TOL_NEWTON):
        x = np.empty(self.n)
        for idx, fn in self.blocks:
            x[idx] = fn.minimizer() if fn.is_quadratic else fn.minimizer(tol)
        return x

    def closure(self, indices):
        """Smallest union of whole blocks containing ``indices`` (sorted)."""
        ids = np.unique(self.owner[np.asarray(indices, dtype=np.int64)])
        if ids.size == 0:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate([self.blocks[b][0] for b in ids]))

    def restrict(self, indices):
        """Restriction to ``indices`` (a union of whole blocks), reindexed locally."""
        indices = np.asarray(indices, dtype=np.int64)
        local = np.full(self.n, -1, dtype=np.int64)
        local[indices] = np.arange(indices.size)
        ids = np.unique(self.owner[indices])
        blocks = []
        for b in ids:
            idx, fn = self.blocks[b]
            if np.any(local[idx] < 0):
                raise ValueError(f"index set splits objective block {b}")
            blocks.append((local[idx], fn))
        if self._quad is None:
            return SeparableObjective(indices.size, blocks)
        # reuse the assembled matrices instead of rebuilding them block by block
        sub = object.__new__(SeparableObjective)
        sub.n = indices.size
        sub.blocks = blocks
        sub.owner = np.empty(sub.n, dtype=np.int64)
        for b, (idx, _) in enumerate(blocks):
            sub.owner[idx] = b
        sub.owner.setflags(write=False)
        sub.is_quadratic = True
        sub.mu = min(fn.mu for _, fn in blocks)
        sub.lsmooth = max(fn.lsmooth for _, fn in blocks)
        H, c = self._quad
        sub._quad = (H[indices][:, indices], c[indices])
        sub._quad_inv = self._quad_inv[indices][:, indices]
        return sub


def _canonical_matrix(A):
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _dense_defect(M):
    """Row-rank defect from a dense rank computation, or ``None`` if too large."""
    if M.shape[0] > DENSE_LIMIT:
        return None
    return M.shape[0] - int(np.linalg.matrix_rank(M.toarray()))


def check_full_row_rank(A):
    """Raise :class:`SingularSystemError` unless ``A`` has full row rank.

    Uses the pivots of a sparse LU factorization of ``A A'``.
    """
    m = A.shape[0]
    if m == 0:
        return
    if m > A.shape[1]:
        raise SingularSystemError(f"{m} constraints on {A.shape[1]} variables", m - A.shape[1])
    G = (A @ A.T).tocsc()
    try:
        lu = spla.splu(G, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SingularSystemError(f"constraint matrix is rank deficient ({exc})", _dense_defect(A)) from exc
    piv = np.abs(lu.U.diagonal())
    small = int(np.count_nonzero(piv <= RANK_PIVOT_TOL * piv.max()))
    if small:
        raise SingularSystemError(f"constraint matrix is rank deficient by {small}", small)


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    """``min f(x)  s.t.  A x = b`` with separable strongly convex ``f``."""

    objective: SeparableObjective
    A: sp.csr_matrix
    b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __init__(self, objective, A, b, check=True, meta=None):
        A = _canonical_matrix(A)
        b = _readonly(np.atleast_1d(b))
        if A.shape[1] != objective.n:
            raise DimensionMismatch(f"A has {A.shape[1]} columns, objective has {objective.n} variables")
        if b.shape != (A.shape[0],):
            raise DimensionMismatch(f"b has length {b.size}, A has {A.shape[0]} rows")
        if check:
            check_full_row_rank(A)
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "meta", dict(meta or {}))

    @property
    def n(self):
        return self.objective.n

    @property
    def m(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    nu: np.ndarray
    kkt_residual: float
    iterations: int = 1


def eval_objective(p, x):
    return p.objective.value(x)


def gradient(p, x):
    return p.objective.gradient(x)


def hessian(p, x=None):
    return p.objective.hessian(x)


def kkt_residual(objective, A, b, x, nu):
    dual = objective.gradient(x) + A.T @ nu
    primal = A @ x - b
    return max(np.abs(dual).max(initial=0.0), np.abs(primal).max(initial=0.0))


def _kkt_matrix(H, A):
    n, m = H.shape[0], A.shape[0]
    H, A = H.tocoo(), A.tocoo()
    rows = np.concatenate([H.row, A.row + n, A.col])
    cols = np.concatenate([H.col, A.col, A.row + n])
    vals = np.concatenate([H.data, A.data, A.data])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n + m, n + m))


def _factor_kkt(K):
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SingularSystemError(f"KKT system is singular ({exc})", _dense_defect(K)) from exc
    piv = np.abs(lu.U.diagonal())
    small = int(np.count_nonzero(piv <= KKT_PIVOT_TOL * piv.max()))
    if small:
        raise SingularSystemError(f"KKT system is rank deficient by {small}", small)
    return lu


def solve_kkt(objective, A, b, tol=None, x0=None):
    """Solve ``min objective  s.t.  A x = b`` without validating ``A``.

    The residual tolerance is scaled by ``1 + max(|b|, |grad f(0)|)``.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n, m = objective.n, A.shape[0]
    if objective.is_quadratic:
        tol = TOL_QUADRATIC if tol is None else tol
        H, c = objective._quad
        scale = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(c).max(initial=0.0))
        if m == 0:
            x = objective.unconstrained_minimizer()
            return Solution(x, np.zeros(0), kkt_residual(objective, A, b, x, np.zeros(0)))
        K = _kkt_matrix(H, A)
        lu = _factor_kkt(K)
        rhs = np.concatenate([-c, b])
        z = lu.solve(rhs)
        for _ in range(3):
            res = rhs - K @ z
            if np.abs(res).max() <= 0.01 * tol * scale:
                break
            z = z + lu.solve(res)
        x, nu = z[:n], z[n:]
        r = kkt_residual(objective, A, b, x, nu)
        if not r <= tol * scale:
            raise ConvergenceError(f"KKT residual {r:.3e} above tolerance {tol * scale:.3e}")
        return Solution(x, nu, r)
    return _newton_kkt(objective, A, b, TOL_NEWTON if tol is None else tol, x0)


def _newton_kkt(objective, A, b, tol, x0):
    n, m = objective.n, A.shape[0]
    x = objective.unconstrained_minimizer() if x0 is None else np.array(x0, dtype=float)
    nu = np.zeros(m)

    def resid(x, nu):
        return np.concatenate([objective.gradient(x) + A.T @ nu, A @ x - b])

    r = resid(x, nu)
    for it in range(1, NEWTON_MAX_ITER + 1):
        if np.abs(r).max() <= tol:
            return Solution(x, nu, float(np.abs(r).max()), it - 1)
        lu = _factor_kkt(_kkt_matrix(objective.hessian(x), A))
        step = lu.solve(-r)
        dx, dnu = step[:n], step[n:]
        t, norm0 = 1.0, np.linalg.norm(r)
        while True:
            r_new = resid(x + t * dx, nu + t * dnu)
            if np.linalg.norm(r_new) <= (1 - 0.01 * t) * norm0 or t < 1e-10:
                break
            t *= 0.5
        x, nu, r = x + t * dx, nu + t * dnu, r_new
    if np.abs(r).max() <= tol:
        return Solution(x, nu, float(np.abs(r).max()), NEWTON_MAX_ITER)
    raise ConvergenceError(f"Newton-KKT stalled at residual {np.abs(r).max():.3e}")


def solve_equality_constrained(p, tol=None, x0=None):
    return solve_kkt(p.objective, p.A, p.b, tol, x0)


def solve_unconstrained(p, tol=TOL_NEWTON):
    objective = p.objective if isinstance(p, ConstrainedProblem) else p
    return objective.unconstrained_minimizer(tol)


def singular_values_extreme(A):
    """``(sigma_min, sigma_max)`` of ``A``; dense SVD below 2000 rows, else Lanczos on ``A A'``."""
    A = sp.csr_matrix(A)
    if A.nnz == 0:
        raise ValueError("matrix has no nonzeros")
    if A.shape[0] < DENSE_LIMIT:
        s = np.linalg.svd(A.toarray(), compute_uv=False)
        return float(s[-1]), float(s[0])
    G = (A @ A.T).tocsc()
    lmax = spla.eigsh(G, k=1, which="LA", return_eigenvectors=False, tol=1e-10)[0]
    lmin = spla.eigsh(G, k=1, sigma=0.0, which="LM", return_eigenvectors=False, tol=1e-10)[0]
    return float(np.sqrt(max(lmin, 0.0))), float(np.sqrt(lmax))


# -- plain-text problem files -------------------------------------------------

def _fmt(v):
    return repr(float(v))


def dumps_problem(p):
    out = io.StringIO()
    for key in sorted(p.meta):
        out.write(f"# {key}={p.meta[key]}\n")
    out.write(f"{p.n} {p.m}\n")
    for idx, fn in sorted(p.objective.blocks, key=lambda blk: int(blk[0].min())):
        if not fn.is_quadratic:
            raise ValueError("custom blocks cannot be written to a problem file")
        line = "block {} quad {} {}".format(
            ",".join(str(int(i)) for i in idx),
            ",".join(_fmt(v) for v in fn.hess.ravel()),
            ",".join(_fmt(v) for v in fn.lin))
        if fn.const != 0.0:
            line += " " + _fmt(fn.const)
        out.write(line + "\n")
    A = p.A.tocoo()
    order = np.lexsort((A.col, A.row))
    for k in order:
        out.write(f"A {A.row[k]} {A.col[k]} {_fmt(A.data[k])}\n")
    for i, v in enumerate(p.b):
        out.write(f"b {i} {_fmt(v)}\n")
    return out.getvalue()


def loads_problem(text, check=True):
    meta = {}
    header = None
    blocks, rows, cols, vals = [], [], [], []
    bvals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        tok = line.split()
        try:
            if header is None:
                header = (int(tok[0]), int(tok[1]))
            elif tok[0] == "block":
                if tok[2] != "quad":
                    raise ValueError(f"unsupported block kind {tok[2]!r}")
                idx = [int(t) for t in tok[1].split(",")]
                q = np.array([float(t) for t in tok[3].split(",")]).reshape(len(idx), len(idx))
                c = [float(t) for t in tok[4].split(",")]
                const = float(tok[5]) if len(tok) > 5 else 0.0
                blocks.append((idx, QuadraticBlock(q, c, const)))
            elif tok[0] == "A":
                rows.append(int(tok[1]))
                cols.append(int(tok[2]))
                vals.append(float(tok[3]))
            elif tok[0] == "b":
                bvals[int(tok[1])] = float(tok[2])
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if header is None:
        raise ValueError("missing 'N M' header")
    n, m = header
    b = np.zeros(m)
    for i, v in bvals.items():
        b[i] = v
    A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n))
    return ConstrainedProblem(SeparableObjective(n, blocks), A, b, check=check, meta=meta)


def write_problem(p, path):
    Path(path).write_text(dumps_problem(p))


def read_problem(path, check=True):
    return loads_problem(Path(path).read_text(), check=check)
