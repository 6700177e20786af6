"""Krylov subspace solvers over the operator/multivector contract.

All solvers only touch ``A.apply``, ``M.apply`` and multivector reductions, so
they run unchanged on assembled matrices, matrix-free closures and any rank
count.  Convergence is judged on the recurrence residual; once a solver claims
convergence the true residual ``||b - A x|| / ||b||`` is recomputed and a
value above ten times the tolerance is reported as false convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from .comm import CommContext
from .core import MultiVector
from .operators import as_multivector, as_operator, as_preconditioner, check_scalar

__all__ = [
    "SolveReport",
    "KrylovBreakdown",
    "OrthoResult",
    "ORTHO_KINDS",
    "orthonormalize",
    "solve_cg",
    "solve_gmres",
    "solve_bicgstab",
    "solve_pseudo_block_cg",
    "solve_fixed_point",
    "KrylovSolver",
]

ORTHO_KINDS = ("icgs", "dgks", "imgs")
DGKS_KAPPA = 1.0 / math.sqrt(2.0)
FALSE_CONVERGENCE_FACTOR = 10.0


@dataclass
class SolveReport:
    converged: bool = False
    iterations: int = 0
    residual: float = float("nan")
    history: list = field(default_factory=list)
    status: str = "max_iterations"
    explicit_residual: float | None = None
    cycle_starts: list = field(default_factory=list)
    column_iterations: list = field(default_factory=list)
    column_converged: list = field(default_factory=list)
    column_history: list = field(default_factory=list)

    def __str__(self) -> str:
        return (f"SolveReport(status={self.status}, iterations={self.iterations}, "
                f"residual={self.residual:.3e})")


class KrylovBreakdown(ArithmeticError):
    """Recurrence broke down; ``report`` holds the state at the failing step."""

    def __init__(self, message: str, report: SolveReport, iteration: int) -> None:
        super().__init__(message)
        self.report = report
        self.iteration = iteration


# ---------------------------------------------------------------------------
# orthogonalization
# ---------------------------------------------------------------------------
class OrthoResult(NamedTuple):
    coefficients: np.ndarray
    norm: float
    vector: np.ndarray
    dependent: bool


def _reduce(comm: CommContext | None, values) -> np.ndarray:
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    return values if comm is None or comm.size == 1 else comm.all_reduce(values, "sum")


def orthonormalize(V: np.ndarray, w: np.ndarray, kind: str = "icgs",
                   comm: CommContext | None = None) -> OrthoResult:
    """Project ``w`` against the orthonormal columns of ``V`` and normalize.

    ``V`` and ``w`` are this rank's rows; inner products are summed over
    ``comm``.  ICGS always runs two classical passes, DGKS runs the second
    pass only when the first shrank the norm below ``1/sqrt(2)`` of its
    previous value, IMGS runs two modified Gram-Schmidt sweeps.
    """
    kind = kind.lower()
    if kind not in ORTHO_KINDS:
        raise ValueError(f"unknown orthogonalization {kind!r}; expected one of {ORTHO_KINDS}")
    w = np.array(w, dtype=np.float64).reshape(-1)
    V = np.asarray(V, dtype=np.float64).reshape(w.shape[0], -1)
    j = V.shape[1]
    h = np.zeros(j)
    norm0 = math.sqrt(_reduce(comm, w @ w)[0])
    if j:
        if kind == "imgs":
            for _ in range(2):
                for i in range(j):
                    c = _reduce(comm, V[:, i] @ w)[0]
                    w -= c * V[:, i]
                    h[i] += c
        else:
            c = _reduce(comm, V.T @ w)
            w -= V @ c
            h += c
            second = True
            if kind == "dgks":
                after = math.sqrt(_reduce(comm, w @ w)[0])
                second = after < DGKS_KAPPA * norm0
            if second:
                c = _reduce(comm, V.T @ w)
                w -= V @ c
                h += c
    beta = math.sqrt(_reduce(comm, w @ w)[0])
    dependent = beta <= 1e-14 * norm0 or beta == 0.0
    q = w if dependent else w / beta
    return OrthoResult(h, beta, q, dependent)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------
def _setup(A, M, b, x0, ncols_ok=False):
    A = as_operator(A)
    bv, was_array = as_multivector(b, A.range_map, "b")
    M = as_preconditioner(M, A.domain_map)
    if x0 is None:
        x = MultiVector(A.domain_map, bv.num_vectors)
    else:
        x = as_multivector(x0, A.domain_map, "x0")[0].copy()
    if not ncols_ok and bv.num_vectors != 1:
        raise ValueError("this solver takes a single right-hand side; use solve_pseudo_block_cg")
    return A, M, bv, x, was_array


def _result(x: MultiVector, was_array: bool):
    if not was_array:
        return x
    g = x.to_global()
    return g[:, 0] if g.shape[1] == 1 else g


def _residual(A, b: MultiVector, x: MultiVector) -> MultiVector:
    r = A.apply(x)
    r.scale(-1.0).update(1.0, b)
    return r


def _finish(report: SolveReport, A, b, x, bnorm, rtol):
    """Explicit residual check at declared convergence."""
    true_res = float(_residual(A, b, x).norm2()[0]) / bnorm
    report.explicit_residual = true_res
    if report.converged and true_res > FALSE_CONVERGENCE_FACTOR * rtol:
        report.converged = False
        report.status = "false_convergence"
    report.residual = true_res if report.converged or report.status == "false_convergence" \
        else report.history[-1]
    return report


# ---------------------------------------------------------------------------
# CG and pseudo-block CG
# ---------------------------------------------------------------------------
def _cg_core(A, M, B: MultiVector, X: MultiVector, rtol: float, maxit: int) -> SolveReport:
    k = B.num_vectors
    bnorm = B.norm2()
    report = SolveReport()
    report.column_iterations = [0] * k
    report.column_converged = [False] * k
    safe_b = np.where(bnorm > 0, bnorm, 1.0)
    zero_rhs = bnorm == 0
    if np.any(zero_rhs):
        X.local[:, zero_rhs] = 0.0
    R = _residual(A, B, X)
    res = R.norm2() / safe_b
    res[zero_rhs] = 0.0
    report.column_history = [[float(v)] for v in res]
    active = res > rtol
    for j in range(k):
        report.column_converged[j] = not active[j]
    status = ["converged" if not a else "max_iterations" for a in active]
    Z = M.apply(R)
    P = Z.copy()
    rz = R.dot(Z)
    it = 0
    while it < maxit and np.any(active):
        it += 1
        Q = A.apply(P)
        pq = P.dot(Q)
        bad = active & ~(pq > 0)
        if np.any(bad):
            for j in np.flatnonzero(bad):
                status[j] = "breakdown"
                report.column_iterations[j] = it
            active = active & ~bad
            if not np.any(active):
                break
        alpha = np.where(active, rz / np.where(active, pq, 1.0), 0.0)
        X.update(alpha, P)
        R.update(-alpha, Q)
        res = R.norm2() / safe_b
        for j in np.flatnonzero(active):
            report.column_history[j].append(float(res[j]))
            report.column_iterations[j] = it
        done = active & (res <= rtol)
        for j in np.flatnonzero(done):
            status[j] = "converged"
            report.column_converged[j] = True
        active = active & ~done
        if not np.any(active):
            break
        Z = M.apply(R)
        rz_new = R.dot(Z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        # frozen columns keep their search direction; they are never used again
        P.local[:, active] = Z.local[:, active] + beta[active] * P.local[:, active]
        rz = np.where(active, rz_new, rz)
    report.iterations = max(report.column_iterations) if k else 0
    report.history = report.column_history[0] if k == 1 else [
        max(h[min(i, len(h) - 1)] for h in report.column_history)
        for i in range(report.iterations + 1)]
    report.converged = all(report.column_converged)
    report.status = ("converged" if report.converged else
                     "breakdown" if "breakdown" in status else "max_iterations")
    # explicit residual per column
    true = _residual(A, B, X).norm2() / safe_b
    true[zero_rhs] = 0.0
    for j in range(k):
        if report.column_converged[j] and true[j] > FALSE_CONVERGENCE_FACTOR * rtol:
            report.column_converged[j] = False
            status[j] = "false_convergence"
    if report.converged and not all(report.column_converged):
        report.converged = False
        report.status = "false_convergence"
    report.explicit_residual = float(true.max()) if k else 0.0
    report.residual = report.explicit_residual
    report._column_status = status  # type: ignore[attr-defined]
    return report


def solve_cg(A, M, b, x0=None, rtol: float = 1e-8, maxit: int = 1000):
    """Preconditioned conjugate gradients for symmetric positive definite ``A``.

    Returns ``(x, report)``.  Raises :class:`KrylovBreakdown` when
    ``p^T A p <= 0`` (indefinite operator).
    """
    A, M, bv, x, was_array = _setup(A, M, b, x0)
    report = _cg_core(A, M, bv, x, rtol, maxit)
    if report.status == "breakdown":
        raise KrylovBreakdown(
            f"CG breakdown at iteration {report.iterations}: p^T A p <= 0 "
            "(operator not positive definite)", report, report.iterations)
    return _result(x, was_array), report


def solve_pseudo_block_cg(A, M, B, rtol: float = 1e-8, maxit: int = 1000, X0=None):
    """CG on ``k`` right-hand sides in lockstep with aggregated operator applies.

    A column that converges (or breaks down) is frozen; the report lists
    per-column iteration counts and convergence flags.
    """
    A, M, bv, x, was_array = _setup(A, M, B, X0, ncols_ok=True)
    report = _cg_core(A, M, bv, x, rtol, maxit)
    return _result(x, was_array), report


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------
def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = math.hypot(a, b)
    return a / r, b / r


def solve_gmres(A, M, b, x0=None, rtol: float = 1e-8, maxit: int = 1000, restart: int = 30,
                flexible: bool = False, ortho: str = "icgs"):
    """Right-preconditioned restarted GMRES(m); FGMRES when ``flexible``.

    The flexible variant stores the preconditioned basis so ``M`` may change
    between applications (for instance an inner iterative solve).
    """
    check_scalar(restart, "restart", int, min_val=1)
    A, M, bv, x, was_array = _setup(A, M, b, x0)
    comm = bv.comm
    bnorm = float(bv.norm2()[0])
    report = SolveReport()
    if bnorm == 0.0:
        x.put_scalar(0.0)
        report.converged, report.status, report.residual = True, "converged", 0.0
        report.history = [0.0]
        report.explicit_residual = 0.0
        return _result(x, was_array), report
    r = _residual(A, bv, x)
    beta = float(r.norm2()[0])
    report.history = [beta / bnorm]
    if beta / bnorm <= rtol:
        report.converged, report.status = True, "converged"
        return _result(x, was_array), _finish(report, A, bv, x, bnorm, rtol)
    n = x.map.num_local
    total = 0
    norm_est = 0.0
    while total < maxit:
        m = restart
        report.cycle_starts.append(total)
        V = np.zeros((n, m + 1))
        Z = np.zeros((n, m)) if flexible else None
        V[:, 0] = r.local[:, 0] / beta
        H = np.zeros((m + 1, m))
        g = np.zeros(m + 1)
        g[0] = beta
        cs, sn = np.zeros(m), np.zeros(m)
        j_used = 0
        happy = False
        for j in range(m):
            vj = MultiVector(x.map, local=V[:, j:j + 1].copy())
            zj = M.apply(vj)
            if flexible:
                Z[:, j] = zj.local[:, 0]
            w = A.apply(zj).local[:, 0]
            res = orthonormalize(V[:, : j + 1], w, ortho, comm)
            H[: j + 1, j] = res.coefficients
            H[j + 1, j] = res.norm
            norm_est = max(norm_est, math.sqrt(float(res.coefficients @ res.coefficients) + res.norm ** 2))
            happy = res.dependent or res.norm < 1e-14 * norm_est
            if not happy:
                V[:, j + 1] = res.vector
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_used = j + 1
            rel = abs(g[j + 1]) / bnorm
            if happy:
                rel = 0.0
            report.history.append(rel)
            if rel <= rtol or happy or total >= maxit:
                break
        k = j_used
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:k] @ y[i + 1:k]) / H[i, i]
        if flexible:
            x.local[:, 0] += Z[:, :k] @ y
        else:
            upd = MultiVector(x.map, local=(V[:, :k] @ y).reshape(-1, 1))
            x.update(1.0, M.apply(upd))
        r = _residual(A, bv, x)
        beta = float(r.norm2()[0])
        if report.history[-1] <= rtol:
            report.converged, report.status = True, "converged"
            break
        if beta / bnorm <= rtol:
            report.converged, report.status = True, "converged"
            break
    report.iterations = total
    return _result(x, was_array), _finish(report, A, bv, x, bnorm, rtol)


# ---------------------------------------------------------------------------
# BiCGStab
# ---------------------------------------------------------------------------
BREAKDOWN_EPS = 1e-30


def solve_bicgstab(A, M, b, x0=None, rtol: float = 1e-8, maxit: int = 1000):
    """Right-preconditioned BiCGStab; breakdown when ``|rho|`` or ``|omega|``
    falls below 1e-30."""
    A, M, bv, x, was_array = _setup(A, M, b, x0)
    bnorm = float(bv.norm2()[0])
    report = SolveReport()
    if bnorm == 0.0:
        x.put_scalar(0.0)
        report.converged, report.status, report.residual = True, "converged", 0.0
        report.history, report.explicit_residual = [0.0], 0.0
        return _result(x, was_array), report
    r = _residual(A, bv, x)
    rhat = r.copy()
    report.history = [float(r.norm2()[0]) / bnorm]
    if report.history[0] <= rtol:
        report.converged, report.status = True, "converged"
        return _result(x, was_array), _finish(report, A, bv, x, bnorm, rtol)
    rho = alpha = omega = 1.0
    v = r.zeros_like()
    p = r.zeros_like()
    it = 0
    while it < maxit:
        it += 1
        rho_new = float(rhat.dot(r)[0])
        if abs(rho_new) < BREAKDOWN_EPS:
            report.iterations = it - 1
            raise KrylovBreakdown(f"BiCGStab breakdown (rho) at iteration {it}", report, it)
        if it == 1:
            p = r.copy()
        else:
            beta = (rho_new / rho) * (alpha / omega)
            p.update(-omega, v)
            p.scale(beta).update(1.0, r)
        phat = M.apply(p)
        v = A.apply(phat)
        rv = float(rhat.dot(v)[0])
        if abs(rv) < BREAKDOWN_EPS:
            report.iterations = it - 1
            raise KrylovBreakdown(f"BiCGStab breakdown (rhat.v) at iteration {it}", report, it)
        alpha = rho_new / rv
        s = r.copy().update(-alpha, v)
        snorm = float(s.norm2()[0]) / bnorm
        if snorm <= rtol:
            x.update(alpha, phat)
            r = s
            report.history.append(snorm)
            report.converged, report.status = True, "converged"
            break
        shat = M.apply(s)
        t = A.apply(shat)
        tt = float(t.dot(t)[0])
        omega = float(t.dot(s)[0]) / tt if tt > 0 else 0.0
        if abs(omega) < BREAKDOWN_EPS:
            report.iterations = it
            raise KrylovBreakdown(f"BiCGStab breakdown (omega) at iteration {it}", report, it)
        x.update(alpha, phat).update(omega, shat)
        r = s.update(-omega, t)
        rel = float(r.norm2()[0]) / bnorm
        report.history.append(rel)
        rho = rho_new
        if rel <= rtol:
            report.converged, report.status = True, "converged"
            break
    report.iterations = it
    return _result(x, was_array), _finish(report, A, bv, x, bnorm, rtol)


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------
DIVERGENCE_FACTOR = 1e6


def solve_fixed_point(A, M, b, x0=None, rtol: float = 1e-8, maxit: int = 1000):
    """Preconditioned Richardson iteration ``x <- x + M (b - A x)``."""
    A, M, bv, x, was_array = _setup(A, M, b, x0)
    bnorm = float(bv.norm2()[0])
    report = SolveReport()
    if bnorm == 0.0:
        x.put_scalar(0.0)
        report.converged, report.status, report.residual = True, "converged", 0.0
        report.history, report.explicit_residual = [0.0], 0.0
        return _result(x, was_array), report
    r = _residual(A, bv, x)
    res0 = float(r.norm2()[0]) / bnorm
    report.history = [res0]
    it = 0
    if res0 <= rtol:
        report.converged, report.status = True, "converged"
    while it < maxit and not report.converged:
        it += 1
        x.update(1.0, M.apply(r))
        r = _residual(A, bv, x)
        rel = float(r.norm2()[0]) / bnorm
        report.history.append(rel)
        if not np.isfinite(rel) or rel > DIVERGENCE_FACTOR * res0:
            report.status = "diverged"
            break
        if rel <= rtol:
            report.converged, report.status = True, "converged"
    report.iterations = it
    report.residual = report.history[-1]
    report.explicit_residual = report.history[-1]
    return _result(x, was_array), report


# ---------------------------------------------------------------------------
# estimator front end
# ---------------------------------------------------------------------------
_SOLVERS = ("cg", "gmres", "bicgstab", "pseudo_block_cg", "fixed_point")


class KrylovSolver(BaseEstimator):
    """Estimator-style wrapper: ``fit(A, M)`` binds the operator, ``solve(b)``
    runs the configured method and returns ``(x, report)``.

    Parameters
    ----------
    method : {'cg', 'gmres', 'bicgstab', 'pseudo_block_cg', 'fixed_point'}
    rtol : float
    max_iterations : int
    restart : int
        GMRES cycle length.
    orthogonalization : {'icgs', 'dgks', 'imgs'}
    flexible : bool
        Use flexible GMRES.
    """

    def __init__(self, method: str = "gmres", rtol: float = 1e-8, max_iterations: int = 1000,
                 restart: int = 30, orthogonalization: str = "icgs", flexible: bool = False):
        self.method = method
        self.rtol = rtol
        self.max_iterations = max_iterations
        self.restart = restart
        self.orthogonalization = orthogonalization
        self.flexible = flexible

    def fit(self, A: Any, M: Any = None) -> "KrylovSolver":
        if self.method not in _SOLVERS:
            raise ValueError(f"unknown solver type {self.method!r}; expected one of {_SOLVERS}")
        check_scalar(self.rtol, "rtol", min_val=0.0)
        check_scalar(self.max_iterations, "max_iterations", int, min_val=0)
        if self.orthogonalization.lower() not in ORTHO_KINDS:
            raise ValueError(f"unknown orthogonalization {self.orthogonalization!r}")
        self.operator_ = as_operator(A)
        self.preconditioner_ = M
        return self

    def solve(self, b, x0=None):
        A, M = self.operator_, self.preconditioner_
        kw = dict(rtol=self.rtol, maxit=self.max_iterations)
        if self.method == "cg":
            return solve_cg(A, M, b, x0, **kw)
        if self.method == "gmres":
            return solve_gmres(A, M, b, x0, restart=self.restart, flexible=self.flexible,
                               ortho=self.orthogonalization, **kw)
        if self.method == "bicgstab":
            return solve_bicgstab(A, M, b, x0, **kw)
        if self.method == "pseudo_block_cg":
            return solve_pseudo_block_cg(A, M, b, X0=x0, **kw)
        return solve_fixed_point(A, M, b, x0, **kw)
