"""Relaxation, polynomial, incomplete-factorization and Schwarz preconditioners.

Every preconditioner follows the estimator pattern: constructor arguments are
plain hyperparameters, ``fit(A)`` does the rank-collective setup and
``apply(r)`` returns ``z = M r`` for a zero initial guess.  Gauss-Seidel is
exact within a rank and Jacobi-coupled across ranks: ghost values are frozen
at the start of each directional sweep.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular
from sklearn.base import BaseEstimator

from .core import CsrMatrix, ImportPlan, Map, MultiVector, csr_from_triples, do_export, do_import
from .operators import LinearOperator, as_operator, check_scalar

__all__ = [
    "ZeroDiagonalError",
    "ZeroPivotError",
    "Relaxation",
    "relax_apply",
    "estimate_lambda_max",
    "Chebyshev",
    "chebyshev_apply",
    "IluFactors",
    "ilu_symbolic",
    "ilu_factor",
    "ilu_solve",
    "ILU",
    "DirectSolver",
    "AdditiveSchwarz",
    "schwarz_apply",
    "overlap_map",
    "BlockOperator2x2",
    "block_precond_2x2",
    "BlockPreconditioner2x2",
    "split_2x2",
]

RELAXATION_KINDS = ("jacobi", "gauss_seidel_forward", "gauss_seidel_backward",
                    "gauss_seidel_symmetric")


class ZeroDiagonalError(ZeroDivisionError):
    def __init__(self, row: int) -> None:
        super().__init__(f"zero diagonal entry in row {row}")
        self.row = row


class ZeroPivotError(ZeroDivisionError):
    def __init__(self, row: int, value: float = 0.0) -> None:
        super().__init__(f"zero or tiny pivot {value:.3e} in row {row}")
        self.row = row


def _check_diagonal(A: CsrMatrix) -> np.ndarray:
    d = A.diagonal_values()
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise ZeroDiagonalError(int(A.row_map.gids[zero[0]]))
    return d


# ---------------------------------------------------------------------------
# point relaxation
# ---------------------------------------------------------------------------
class Relaxation(BaseEstimator, LinearOperator):
    """Jacobi or (hybrid) Gauss-Seidel / SOR sweeps.

    Parameters
    ----------
    kind : str
        One of ``jacobi``, ``gauss_seidel_forward``, ``gauss_seidel_backward``,
        ``gauss_seidel_symmetric``.
    sweeps : int
    damping : float
        Jacobi damping or SOR relaxation factor.
    """

    def __init__(self, kind: str = "gauss_seidel_symmetric", sweeps: int = 1,
                 damping: float = 1.0):
        self.kind = kind
        self.sweeps = sweeps
        self.damping = damping

    def fit(self, A) -> "Relaxation":
        if self.kind not in RELAXATION_KINDS:
            raise ValueError(f"unknown relaxation kind {self.kind!r}")
        check_scalar(self.sweeps, "sweeps", int, min_val=1)
        check_scalar(self.damping, "damping", min_val=0.0, include_boundaries="neither")
        A = as_operator(A)
        self.A_ = A
        self.domain_map = self.range_map = A.row_map
        self.diag_ = _check_diagonal(A)
        w = self.damping
        if self.kind != "jacobi":
            B = A.owned_block()
            D = sp.diags(self.diag_)
            self.ghost_ = A.ghost_block()
            self.lower_ = (sp.tril(B, -1) + D / w).tocsr()
            self.upper_ = (sp.triu(B, 1) + D / w).tocsr()
            self.strict_lower_ = sp.tril(B, -1).tocsr()
            self.strict_upper_ = sp.triu(B, 1).tocsr()
            self.dscale_ = (1.0 / w - 1.0) * self.diag_
        return self

    def _ghost_rhs(self, b: np.ndarray, x: MultiVector) -> np.ndarray:
        A = self.A_
        if self.ghost_.shape[1] == 0:
            return b
        xc = A.import_columns(x)
        return b - self.ghost_ @ xc[A.num_owned_cols:]

    def _sweep(self, b: MultiVector, x: MultiVector, direction: str) -> None:
        rhs = self._ghost_rhs(b.local, x)
        xl = x.local
        if direction == "forward":
            t = rhs - self.strict_upper_ @ xl + self.dscale_[:, None] * xl
            x.local[...] = _tri_solve(self.lower_, t, lower=True)
        else:
            t = rhs - self.strict_lower_ @ xl + self.dscale_[:, None] * xl
            x.local[...] = _tri_solve(self.upper_, t, lower=False)

    def smooth(self, b: MultiVector, x: MultiVector) -> MultiVector:
        """Run the configured sweeps on ``A x = b`` in place."""
        A = self.A_
        for _ in range(self.sweeps):
            if self.kind == "jacobi":
                r = A.apply(x)
                r.scale(-1.0).update(1.0, b)
                x.local += self.damping * r.local / self.diag_[:, None]
            elif self.kind == "gauss_seidel_forward":
                self._sweep(b, x, "forward")
            elif self.kind == "gauss_seidel_backward":
                self._sweep(b, x, "backward")
            else:
                self._sweep(b, x, "forward")
                self._sweep(b, x, "backward")
        return x

    def apply(self, r: MultiVector) -> MultiVector:
        return self.smooth(r, r.zeros_like())


def _tri_solve(T: sp.csr_matrix, rhs: np.ndarray, lower: bool) -> np.ndarray:
    if T.shape[0] == 0:
        return rhs.copy()
    out = spsolve_triangular(T, rhs, lower=lower)
    return np.asarray(out).reshape(rhs.shape)


def relax_apply(A, b: MultiVector, x: MultiVector, kind: str = "jacobi", sweeps: int = 1,
                damping: float = 1.0) -> MultiVector:
    """Functional form of :class:`Relaxation`; updates ``x`` in place."""
    return Relaxation(kind, sweeps, damping).fit(A).smooth(b, x)


# ---------------------------------------------------------------------------
# Chebyshev
# ---------------------------------------------------------------------------
def estimate_lambda_max(A, iters: int = 10, boost: float = 1.1, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``D^-1 A``, times ``boost``.

    The start vector is drawn from a seeded generator over global indices,
    so the estimate does not depend on the rank count.
    """
    check_scalar(iters, "iters", int, min_val=1)
    A = as_operator(A)
    d = _check_diagonal(A)
    rng = np.random.default_rng(seed)
    start = rng.uniform(-1.0, 1.0, A.row_map.num_global)
    x = MultiVector.from_global(A.row_map, start)
    lam = 0.0
    for _ in range(iters):
        nrm = float(x.norm2()[0])
        if nrm == 0.0:
            break
        x.scale(1.0 / nrm)
        Ax = A.apply(x)
        xAx = float(x.dot(Ax)[0])
        xDx = A.comm.all_reduce_scalar(float(np.sum(d * x.local[:, 0] ** 2)))
        lam = xAx / xDx if xDx != 0 else 0.0
        x = MultiVector(A.row_map, local=Ax.local / d[:, None])
    return boost * lam


class Chebyshev(BaseEstimator, LinearOperator):
    """Degree-``d`` Chebyshev smoother on ``D^-1 A`` over ``[lmax/ratio, lmax]``.

    ``lambda_max=None`` estimates it with :func:`estimate_lambda_max`.
    """

    def __init__(self, degree: int = 2, lambda_max: float | None = None,
                 eigen_ratio: float = 30.0, boost: float = 1.1, power_iterations: int = 10):
        self.degree = degree
        self.lambda_max = lambda_max
        self.eigen_ratio = eigen_ratio
        self.boost = boost
        self.power_iterations = power_iterations

    def fit(self, A) -> "Chebyshev":
        check_scalar(self.degree, "degree", int, min_val=1)
        A = as_operator(A)
        self.A_ = A
        self.domain_map = self.range_map = A.row_map
        self.diag_ = _check_diagonal(A)
        lmax = self.lambda_max
        if lmax is None:
            lmax = estimate_lambda_max(A, self.power_iterations, self.boost)
        if not (lmax > 0) or not (self.eigen_ratio > 1):
            raise ValueError(f"invalid Chebyshev interval: lambda_max={lmax}, "
                             f"ratio={self.eigen_ratio}")
        self.lambda_max_ = float(lmax)
        self.lambda_min_ = self.lambda_max_ / self.eigen_ratio
        return self

    def smooth(self, b: MultiVector, x: MultiVector) -> MultiVector:
        A, dinv = self.A_, 1.0 / self.diag_[:, None]
        lmax, lmin = self.lambda_max_, self.lambda_min_
        theta = 0.5 * (lmax + lmin)
        delta = 0.5 * (lmax - lmin)
        sigma = theta / delta
        rho = 1.0 / sigma
        r = A.apply(x).scale(-1.0).update(1.0, b)
        d = r.local * dinv / theta
        x.local += d
        for _ in range(1, self.degree):
            r = A.apply(x).scale(-1.0).update(1.0, b)
            rho_new = 1.0 / (2.0 * sigma - rho)
            d = rho_new * rho * d + (2.0 * rho_new / delta) * r.local * dinv
            x.local += d
            rho = rho_new
        return x

    def apply(self, r: MultiVector) -> MultiVector:
        return self.smooth(r, r.zeros_like())


def chebyshev_apply(A, b: MultiVector, x: MultiVector, degree: int, lambda_max: float,
                    eigen_ratio: float = 30.0) -> MultiVector:
    return Chebyshev(degree, lambda_max, eigen_ratio).fit(A).smooth(b, x)


# ---------------------------------------------------------------------------
# ILU(k)
# ---------------------------------------------------------------------------
@dataclass
class IluFactors:
    """Unit-lower ``L`` and upper ``U`` (CSR) with the level of every stored entry."""

    fill_level: int
    L: sp.csr_matrix
    U: sp.csr_matrix
    levels: sp.csr_matrix


def ilu_symbolic(A: sp.csr_matrix, k: int) -> list[dict[int, int]]:
    """Level-of-fill pattern: a fill entry reached through pivot ``m`` gets
    level ``lev(i,m) + lev(m,j) + 1`` (minimum over paths) and is kept when
    that is at most ``k``."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    rows: list[dict[int, int]] = []
    upper: list[list[tuple[int, int]]] = []
    for i in range(n):
        lev = {int(j): 0 for j in A.indices[A.indptr[i]:A.indptr[i + 1]]}
        lev.setdefault(i, 0)
        heap = [j for j in lev if j < i]
        heapq.heapify(heap)
        seen = set(heap)
        while heap:
            m = heapq.heappop(heap)
            lim = lev[m]
            for j, lmj in upper[m]:
                new = lim + lmj + 1
                if new > k:
                    continue
                old = lev.get(j)
                if old is None:
                    lev[j] = new
                    if j < i and j not in seen:
                        heapq.heappush(heap, j)
                        seen.add(j)
                elif new < old:
                    lev[j] = new
        rows.append(lev)
        upper.append(sorted((j, l) for j, l in lev.items() if j > i))
    return rows


def ilu_factor(A, k: int = 0) -> IluFactors:
    """ILU(k) of a local square block: symbolic levels, then IKJ elimination
    restricted to that pattern.  Raises :class:`ZeroPivotError` for pivots
    below ``1e-14 * ||A||_F``."""
    check_scalar(k, "k", int, min_val=0)
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("ILU needs a square block")
    tiny = 1e-14 * sla.norm(A.data) if A.nnz else 0.0
    pattern = ilu_symbolic(A, k)
    Lr, Lc, Lv, Ur, Uc, Uv, Vr, Vc, Vl = ([] for _ in range(9))
    u_rows: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(n):
        lev = pattern[i]
        cols = sorted(lev)
        pos = {j: t for t, j in enumerate(cols)}
        w = np.zeros(len(cols))
        s, e = A.indptr[i], A.indptr[i + 1]
        for j, v in zip(A.indices[s:e], A.data[s:e]):
            w[pos[int(j)]] += v
        for t, m in enumerate(cols):
            if m >= i:
                break
            ucols, uvals = u_rows[m]
            w[t] /= uvals[0]
            f = w[t]
            if f != 0.0:
                for j, u in zip(ucols[1:], uvals[1:]):
                    p = pos.get(int(j))
                    if p is not None:
                        w[p] -= f * u
        piv = w[pos[i]]
        if abs(piv) <= tiny or piv == 0.0:
            raise ZeroPivotError(i, piv)
        ucols = np.array([j for j in cols if j >= i], dtype=np.int64)
        uvals = np.array([w[pos[j]] for j in ucols])
        u_rows.append((ucols, uvals))
        for j in cols:
            (Lr if j < i else Ur).append(i)
            (Lc if j < i else Uc).append(j)
            (Lv if j < i else Uv).append(w[pos[j]])
            Vr.append(i)
            Vc.append(j)
            Vl.append(lev[j])
    L = csr_from_triples(Lr + list(range(n)), Lc + list(range(n)), Lv + [1.0] * n, (n, n))
    U = csr_from_triples(Ur, Uc, Uv, (n, n))
    levels = csr_from_triples(Vr, Vc, Vl, (n, n))
    return IluFactors(k, L, U, levels)


def ilu_solve(factors: IluFactors, r: np.ndarray) -> np.ndarray:
    """Forward substitution with ``L`` then backward with ``U``."""
    y = spsolve_triangular(factors.L, r, lower=True, unit_diagonal=True)
    return spsolve_triangular(factors.U, y, lower=False)


class ILU(BaseEstimator, LinearOperator):
    """ILU(k) of each rank's diagonal block (block Jacobi across ranks)."""

    def __init__(self, fill_level: int = 0):
        self.fill_level = fill_level

    def fit(self, A) -> "ILU":
        A = as_operator(A)
        self.domain_map = self.range_map = A.row_map
        self.factors_ = ilu_factor(A.owned_block(), self.fill_level)
        return self

    def apply(self, r: MultiVector) -> MultiVector:
        z = ilu_solve(self.factors_, r.local) if r.local.shape[0] else r.local.copy()
        return MultiVector(r.map, local=np.asarray(z).reshape(r.local.shape))


# ---------------------------------------------------------------------------
# exact solves
# ---------------------------------------------------------------------------
class _LocalDirect:
    """Exact factorization of a local sparse block."""

    def __init__(self, A: sp.spmatrix) -> None:
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        if self.n == 0:
            self.lu = None
            return
        try:
            self.lu = splu(A)
        except RuntimeError as exc:
            raise ZeroPivotError(-1) from exc
        if not np.all(np.isfinite(self.lu.U.diagonal())) or np.any(self.lu.U.diagonal() == 0):
            raise ZeroPivotError(-1)

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return r.copy()
        return self.lu.solve(np.asarray(r, dtype=np.float64))


class DirectSolver(BaseEstimator, LinearOperator):
    """Replicated dense LU of the whole operator: ``apply`` returns ``A^-1 r``.

    Intended for coarse problems and small test systems.
    """

    def fit(self, A) -> "DirectSolver":
        A = as_operator(A)
        self.A_ = A
        self.domain_map = self.range_map = A.row_map
        dense = A.to_global().toarray()
        self.lu_ = sla.lu_factor(dense, check_finite=True) if dense.size else None
        return self

    def apply(self, r: MultiVector) -> MultiVector:
        g = r.to_global()
        z = sla.lu_solve(self.lu_, g) if self.lu_ is not None else g
        return MultiVector(r.map, local=z[r.map.gids])


# ---------------------------------------------------------------------------
# one-level overlapping Schwarz
# ---------------------------------------------------------------------------
def _symmetric_pattern(A: CsrMatrix) -> CsrMatrix:
    from .core import add, transpose

    At = transpose(A)
    P = add(A, At, 1.0, 1.0)
    P.local.data[:] = 1.0
    return P


def overlap_map(A: CsrMatrix, overlap: int, pattern: CsrMatrix | None = None) -> Map:
    """Owned rows plus every row within ``overlap`` edges of them in the
    symmetrized graph of ``A``.  Owned indices come first, added ones follow
    in ascending order."""
    check_scalar(overlap, "overlap", int, min_val=0)
    owned = A.row_map.gids
    if overlap == 0:
        return Map(A.comm, A.row_map.num_global, owned)
    if pattern is None:
        pattern = _symmetric_pattern(A)
    current = Map(A.comm, A.row_map.num_global, owned)
    for _ in range(overlap):
        plan = ImportPlan(pattern.row_map, current)
        rows = pattern.import_rows(plan)
        reach = np.unique(rows.indices).astype(np.int64)
        extra = np.setdiff1d(reach, owned)
        current = Map(A.comm, A.row_map.num_global, np.concatenate([owned, extra]))
    return current


class AdditiveSchwarz(BaseEstimator, LinearOperator):
    """One-level overlapping Schwarz with one subdomain per rank.

    Parameters
    ----------
    overlap : int
        Graph-distance overlap ``delta``.
    subdomain_solver : {'dense_lu', 'ilu'}
        ``dense_lu`` is an exact factorization of the overlapped block.
    fill_level : int
        ILU level when ``subdomain_solver='ilu'``.
    combine_mode : {'additive', 'restricted_additive'}
    """

    def __init__(self, overlap: int = 1, subdomain_solver: str = "dense_lu", fill_level: int = 0,
                 combine_mode: str = "additive"):
        self.overlap = overlap
        self.subdomain_solver = subdomain_solver
        self.fill_level = fill_level
        self.combine_mode = combine_mode

    def fit(self, A) -> "AdditiveSchwarz":
        if self.combine_mode not in ("additive", "restricted_additive"):
            raise ValueError(f"unknown combine mode {self.combine_mode!r}")
        if self.subdomain_solver not in ("dense_lu", "ilu"):
            raise ValueError(f"unknown subdomain solver {self.subdomain_solver!r}")
        A = as_operator(A)
        self.A_ = A
        self.domain_map = self.range_map = A.row_map
        omap = overlap_map(A, self.overlap)
        self.overlap_map_ = omap
        self.plan_ = ImportPlan(A.row_map, omap)
        rows = A.import_rows(self.plan_).tocoo()
        lc = omap.lid(rows.col)
        keep = lc >= 0
        local = csr_from_triples(rows.row[keep], lc[keep], rows.data[keep],
                                 (omap.num_local, omap.num_local))
        self.local_matrix_ = local
        try:
            if self.subdomain_solver == "dense_lu":
                self.solver_ = _LocalDirect(local)
            else:
                f = ilu_factor(local, self.fill_level)
                self.solver_ = f
        except ZeroDivisionError as exc:
            raise ZeroPivotError(getattr(exc, "row", -1)) from RuntimeError(
                f"subdomain solver failed on rank {A.comm.rank}: {exc}")
        return self

    def _local_solve(self, r: np.ndarray) -> np.ndarray:
        if isinstance(self.solver_, IluFactors):
            if r.shape[0] == 0:
                return r.copy()
            return np.asarray(ilu_solve(self.solver_, r)).reshape(r.shape)
        return np.asarray(self.solver_.solve(r)).reshape(r.shape)

    def apply(self, r: MultiVector) -> MultiVector:
        ro = do_import(r, self.plan_)
        zo = MultiVector(self.overlap_map_, local=self._local_solve(ro.local))
        if self.combine_mode == "additive":
            return do_export(zo, self.plan_, "add")
        n = r.map.num_local
        return MultiVector(r.map, local=zo.local[:n].copy())


def schwarz_apply(A, r: MultiVector, overlap: int = 1, subdomain_solver: str = "dense_lu",
                  combine_mode: str = "additive", fill_level: int = 0) -> MultiVector:
    return AdditiveSchwarz(overlap, subdomain_solver, fill_level, combine_mode).fit(A).apply(r)


# ---------------------------------------------------------------------------
# 2x2 block preconditioners
# ---------------------------------------------------------------------------
@dataclass
class BlockOperator2x2:
    """Sub-blocks of ``[[A00, A01], [A10, A11]]`` plus approximate inverses of
    the diagonal blocks (and optionally of the Schur complement)."""

    A00: object
    A01: object
    A10: object
    A11: object
    inv00: object = None
    inv11: object = None
    schur_inv: object = None


BLOCK_KINDS = ("block_jacobi", "block_gauss_seidel", "block_lu")


def block_precond_2x2(op: BlockOperator2x2, kind: str, r0: MultiVector, r1: MultiVector
                      ) -> tuple[MultiVector, MultiVector]:
    if kind not in BLOCK_KINDS:
        raise ValueError(f"unknown block preconditioner {kind!r}")
    if op.inv00 is None or op.inv11 is None:
        raise ValueError("block preconditioner needs inverse approximations of both diagonal blocks")
    if kind == "block_jacobi":
        return op.inv00.apply(r0), op.inv11.apply(r1)
    if kind == "block_gauss_seidel":
        z0 = op.inv00.apply(r0)
        t = r1.copy().update(-1.0, op.A10.apply(z0))
        return z0, op.inv11.apply(t)
    if op.schur_inv is None:
        raise ValueError("block_lu needs a Schur-complement inverse approximation")
    y0 = op.inv00.apply(r0)
    y1 = op.schur_inv.apply(r1.copy().update(-1.0, op.A10.apply(y0)))
    z0 = y0.update(-1.0, op.inv00.apply(op.A01.apply(y1)))
    return z0, y1


def split_2x2(A: CsrMatrix, n0: int):
    """Split a square matrix at global row/column ``n0`` (collective).

    Returns ``(blocks, map0, map1)`` with ``blocks = (A00, A01, A10, A11)``.
    """
    comm = A.comm
    N = A.row_map.num_global
    g = A.row_map.gids
    map0 = Map(comm, n0, g[g < n0])
    map1 = Map(comm, N - n0, g[g >= n0] - n0)
    R = A.local_rows_global().tocoo()
    rg = g[R.row]
    blocks = []
    for rsel, rmap, roff in ((rg < n0, map0, 0), (rg >= n0, map1, n0)):
        for csel, cmap, coff in ((R.col < n0, map0, 0), (R.col >= n0, map1, n0)):
            s = rsel & csel
            rows = rmap.lid(rg[s] - roff)
            local = csr_from_triples(rows, R.col[s] - coff, R.data[s],
                                     (rmap.num_local, cmap.num_global))
            blocks.append(CsrMatrix.from_local_rows(rmap, local, cmap))
    return tuple(blocks), map0, map1


class BlockPreconditioner2x2(BaseEstimator, LinearOperator):
    """Monolithic wrapper: split ``A`` at ``split`` and apply a block method.

    ``inner`` is an unfitted preconditioner cloned for each diagonal block
    (exact dense LU when ``None``).  For ``block_lu`` the Schur complement
    defaults to ``A11 - A10 diag(A00)^-1 A01`` approximated by ``inner``;
    pass a fitted operator as ``schur`` to override it.
    """

    def __init__(self, split: int = 0, kind: str = "block_gauss_seidel", inner=None,
                 schur=None):
        self.split = split
        self.kind = kind
        self.inner = inner
        self.schur = schur

    def fit(self, A) -> "BlockPreconditioner2x2":
        from sklearn.base import clone

        A = as_operator(A)
        self.domain_map = self.range_map = A.row_map
        (A00, A01, A10, A11), self.map0_, self.map1_ = split_2x2(A, self.split)
        inner = self.inner if self.inner is not None else DirectSolver()
        inv00 = clone(inner).fit(A00)
        inv11 = clone(inner).fit(A11)
        schur = None
        if self.kind == "block_lu":
            if self.schur is None:
                # S ~ A11 - A10 diag(A00)^-1 A01
                from .core import add, scale_rows, spgemm

                d0 = _check_diagonal(A00)
                S = add(A11, spgemm(A10, scale_rows(A01, 1.0 / d0)), 1.0, -1.0)
                schur = clone(inner).fit(S)
            else:
                schur = self.schur
        self.op_ = BlockOperator2x2(A00, A01, A10, A11, inv00, inv11, schur)
        g = A.row_map.gids
        self.sel0_ = np.flatnonzero(g < self.split)
        self.sel1_ = np.flatnonzero(g >= self.split)
        return self

    def apply(self, r: MultiVector) -> MultiVector:
        r0 = MultiVector(self.map0_, local=r.local[self.sel0_])
        r1 = MultiVector(self.map1_, local=r.local[self.sel1_])
        z0, z1 = block_precond_2x2(self.op_, self.kind, r0, r1)
        z = r.zeros_like()
        z.local[self.sel0_] = z0.local
        z.local[self.sel1_] = z1.local
        return z
