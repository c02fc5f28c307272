"""Locality rate, error constants and the conjugate-residuals machinery."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CRBreakdown, NoLocalityGuarantee
from .graphs import bfs_distances, primal_dual_distances
from .problem import DENSE_LIMIT, singular_values_extreme, solve_unconstrained

CR_BREAKDOWN_TOL = 1e-14


def _x_or_none(p, x):
    if x is None and not p.objective.is_quadratic:
        raise ValueError("a point x is required for non-quadratic objectives")
    return x


def schur_matrix(p, x=None):
    """Sparse ``A Sigma A'`` with ``Sigma`` the inverse Hessian at ``x``."""
    Sigma = p.objective.inverse_hessian(_x_or_none(p, x))
    return (p.A @ Sigma @ p.A.T).tocsr()


def schur_apply(p, x, v):
    Sigma = p.objective.inverse_hessian(_x_or_none(p, x))
    return p.A @ (Sigma @ (p.A.T @ np.asarray(v, dtype=float)))


def extreme_eigenvalues(M):
    """``(lambda_min, lambda_max)`` of a symmetric positive definite matrix."""
    if M.shape[0] < DENSE_LIMIT:
        dense = M.toarray() if sp.issparse(M) else np.asarray(M)
        e = np.linalg.eigvalsh(dense)
        return float(e[0]), float(e[-1])
    M = sp.csc_matrix(M)
    lmax = spla.eigsh(M, k=1, which="LA", return_eigenvectors=False, tol=1e-8)[0]
    lmin = spla.eigsh(M, k=1, sigma=0.0, which="LM", return_eigenvectors=False, tol=1e-8)[0]
    return float(lmin), float(lmax)


def schur_condition_number(p, x=None):
    lmin, lmax = extreme_eigenvalues(schur_matrix(p, x))
    return lmax / lmin


def rate_from_kappa(kappa):
    if kappa < 1:
        # round-off can push a perfectly conditioned system just below one
        if kappa < 1 - 1e-9:
            raise ValueError(f"condition number must be >= 1, got {kappa}")
        kappa = 1.0
    s = math.sqrt(kappa)
    return (s - 1) / (s + 1)


def locality_rate(kappas):
    """Largest ``(sqrt(k) - 1) / (sqrt(k) + 1)`` over the given condition numbers.

    For quadratic objectives pass the single condition number. For general
    objectives pass condition numbers at a sample of points; the result is a
    lower estimate of the supremum over all points.
    """
    if np.isscalar(kappas):
        return rate_from_kappa(float(kappas))
    kappas = list(kappas)
    if not kappas:
        raise ValueError("empty probe set")
    return max(rate_from_kappa(float(k)) for k in kappas)


def bound_constant(p, svals=None):
    """``(1 + sqrt(L/mu)) * 2 sigma_max / sigma_min**2 * ||b - A x_uc||``."""
    smin, smax = singular_values_extreme(p.A) if svals is None else svals
    x_uc = solve_unconstrained(p)
    ratio = math.sqrt(p.objective.lsmooth / p.objective.mu)
    return (1 + ratio) * 2 * smax / smin**2 * float(np.linalg.norm(p.b - p.A @ x_uc))


def sufficient_rounds(C, lam, eps):
    """Smallest integer ``K >= (1 / (1 - lam)) * ln(C / eps)``, clamped at zero."""
    if not 0 <= lam < 1:
        raise NoLocalityGuarantee(f"locality rate {lam} is not in [0, 1): no locality guarantee")
    if eps <= 0:
        raise ValueError("target accuracy must be positive")
    if C <= eps:
        return 0
    return max(0, math.ceil(math.log(C / eps) / (1 - lam)))


@dataclass(frozen=True)
class LocalityReport:
    kappa: float
    lam: float
    C: float
    sigma_min: float
    sigma_max: float
    sampled: bool = False

    def k_sufficient(self, eps):
        return sufficient_rounds(self.C, self.lam, eps)

    def bound(self, k):
        return self.C * self.lam**k

    def to_text(self, eps_list=()):
        out = io.StringIO()
        out.write(f"kappa={self.kappa!r}\n")
        out.write(f"lambda={self.lam!r}\n")
        out.write(f"C={self.C!r}\n")
        if self.sampled:
            out.write("estimate=sampled\n")
        for eps in eps_list:
            out.write(f"K({eps!r})={self.k_sufficient(eps)}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            key, sep, value = line.partition("=")
            if sep:
                vals[key.strip()] = value.strip()
        return cls(float(vals["kappa"]), float(vals["lambda"]), float(vals["C"]),
                   math.nan, math.nan, vals.get("estimate") == "sampled")


def locality_report(p, probes=None):
    """Condition number, locality rate and error-bound constant for ``p``.

    Quadratic objectives have a constant Hessian, so one condition number
    suffices. Otherwise ``probes`` (points ``x``) must be given and the
    report is marked as a sampled estimate.
    """
    if p.objective.is_quadratic:
        kappa = schur_condition_number(p)
        sampled = False
    else:
        if not probes:
            raise ValueError("non-quadratic objective: supply probe points")
        kappa = max(schur_condition_number(p, x) for x in probes)
        sampled = True
    svals = singular_values_extreme(p.A)
    return LocalityReport(kappa, rate_from_kappa(kappa), bound_constant(p, svals),
                          svals[0], svals[1], sampled)


# -- conjugate residuals -------------------------------------------------------

@dataclass
class CRTrace:
    iterates: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    supports: list = field(default_factory=list)
    converged: bool = False

    @property
    def solution(self):
        return self.iterates[-1]

    @property
    def iterations(self):
        return len(self.iterates) - 1


def conjugate_residuals(apply_M: Callable, rhs, k_max=None, tol=1e-10, keep_iterates=True):
    """Solve ``M delta = rhs`` for SPD ``M`` by conjugate residuals.

    Starts from ``delta = 0`` so the k-th iterate lies in the Krylov space
    ``span{rhs, M rhs, ..., M^(k-1) rhs}``. Stops when ``||r_k|| <= tol *
    ||rhs||`` or after ``k_max`` iterations. The trace holds iterate 0 (the
    zero vector) through the last one; with ``keep_iterates=False`` only the
    last iterate is kept, residual norms are always kept.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.size
    k_max = 2 * n + 10 if k_max is None else k_max
    x = np.zeros(n)
    r = b.copy()
    trace = CRTrace()

    def record(x, rnorm):
        if not keep_iterates and trace.iterates:
            trace.iterates.pop()
            trace.supports.pop()
        trace.iterates.append(x.copy())
        trace.supports.append(np.flatnonzero(x))
        trace.residual_norms.append(rnorm)

    bnorm = float(np.linalg.norm(b))
    record(x, bnorm)
    if bnorm == 0.0:
        trace.converged = True
        return trace
    Ar = apply_M(r)
    p, Ap = r.copy(), Ar.copy()
    rAr = float(r @ Ar)
    for k in range(1, k_max + 1):
        ApAp = float(Ap @ Ap)
        if rAr <= CR_BREAKDOWN_TOL * np.linalg.norm(r) * np.linalg.norm(Ar) or ApAp == 0.0:
            raise CRBreakdown(f"conjugate residuals broke down at iteration {k}", k)
        alpha = rAr / ApAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        record(x, rnorm)
        if rnorm <= tol * bnorm:
            trace.converged = True
            return trace
        Ar = apply_M(r)
        rAr_new = float(r @ Ar)
        beta = rAr_new / rAr
        rAr = rAr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
    return trace


def sensitivity_apply(p, x, delta, tol=1e-10):
    """``Sigma A' (A Sigma A')^{-1} delta``, the derivative of ``x*(b)`` along ``delta``."""
    delta = np.asarray(delta, dtype=float)
    if not np.any(delta):
        return np.zeros(p.n)
    Sigma = p.objective.inverse_hessian(_x_or_none(p, x))
    M = (p.A @ Sigma @ p.A.T).tocsr()
    trace = conjugate_residuals(M.dot, delta, tol=tol, keep_iterates=False)
    return Sigma @ (p.A.T @ trace.solution)


def matrix_power_support(graphs, k):
    """Pairs ``(i, j)`` of constraints at ``g_con`` distance at most ``k``."""
    if k < 0:
        raise ValueError("power must be non-negative")
    pairs = set()
    for i in range(graphs.m):
        dist = bfs_distances(graphs.g_con, [i], max_depth=k)
        pairs.update((i, int(j)) for j in np.flatnonzero(dist >= 0))
    return pairs


def structural_krylov_support(graphs, seeds, k):
    """Constraints reachable from ``seeds`` within ``k - 1`` hops (empty for ``k = 0``)."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(bfs_distances(graphs.g_con, seeds, max_depth=k - 1) >= 0)


def decay_bound(p, graphs, S, delta, lam, sigma_min=None):
    """``(2 ||delta|| / sigma_min(A)) * lam ** d(S, supp(delta))``."""
    delta = np.asarray(delta, dtype=float)
    supp = np.flatnonzero(delta)
    if supp.size == 0:
        return 0.0
    if sigma_min is None:
        sigma_min = singular_values_extreme(p.A)[0]
    d = primal_dual_distances(graphs, supp)[np.asarray(S, dtype=np.int64)].min()
    scale = 2 * float(np.linalg.norm(delta)) / sigma_min
    if math.isinf(d):
        return 0.0
    return scale * lam ** int(d)
