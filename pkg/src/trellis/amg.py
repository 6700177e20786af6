"""Smoothed-aggregation algebraic multigrid.

Setup repeats aggregate -> tentative prolongator -> prolongator smoothing ->
Galerkin product until the operator is small; the coarsest operator is
factorized densely and replicated.  Aggregation is rank-local, so no
aggregate straddles two ranks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from .core import (CsrMatrix, Map, MultiVector, add, csr_from_triples, scale_rows, spgemm,
                   spmv, transpose)
from .operators import LinearOperator, as_operator, check_scalar
from .smoothers import Chebyshev, DirectSolver, Relaxation, _check_diagonal, estimate_lambda_max

__all__ = [
    "Aggregates",
    "Level",
    "Hierarchy",
    "aggregate",
    "tentative_prolongator",
    "smooth_prolongator",
    "setup_hierarchy",
    "vcycle_apply",
    "SmoothedAggregationAMG",
    "CoarseningStallWarning",
]


class CoarseningStallWarning(RuntimeWarning):
    pass


@dataclass
class Aggregates:
    """Rank-local aggregation result.

    Attributes
    ----------
    labels : ndarray
        Local aggregate index of every owned row.
    roots : ndarray
        Local row index of each aggregate's root.
    offset : int
        Global id of this rank's first aggregate.
    num_global : int
        Total aggregate count over all ranks.
    """

    labels: np.ndarray
    roots: np.ndarray
    offset: int = 0
    num_global: int = 0

    @property
    def num_local(self) -> int:
        return int(self.roots.size)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_local)

    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1]) if self.num_local else []


def _filtered_graph(B: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    """Off-diagonal strong connections of the square owned block ``B``."""
    C = B.tocoo()
    d = np.abs(B.diagonal())
    keep = C.row != C.col
    if theta > 0:
        keep &= np.abs(C.data) > theta * np.sqrt(d[C.row] * d[C.col])
    n = B.shape[0]
    G = sp.csr_matrix((np.ones(int(keep.sum())), (C.row[keep], C.col[keep])), shape=(n, n))
    G = ((G + G.T) > 0).astype(np.float64).tocsr()
    G.sort_indices()
    return G


def _greedy_aggregate(G: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    n = G.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    roots = []
    indptr, indices = G.indptr, G.indices
    # phase 1: roots absorb their unaggregated neighbours
    for i in range(n):
        if labels[i] >= 0:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        free = nbrs[labels[nbrs] < 0]
        if free.size == 0:
            continue
        a = len(roots)
        roots.append(i)
        labels[i] = a
        labels[free] = a
    # phase 2: join the adjacent phase-1 aggregate with most connections
    phase1 = labels.copy()
    for i in np.flatnonzero(phase1 < 0):
        nbr_aggs = phase1[indices[indptr[i]:indptr[i + 1]]]
        nbr_aggs = nbr_aggs[nbr_aggs >= 0]
        if nbr_aggs.size:
            labels[i] = int(np.argmax(np.bincount(nbr_aggs)))
    # phase 3: leftovers become singletons
    for i in np.flatnonzero(labels < 0):
        labels[i] = len(roots)
        roots.append(int(i))
    return labels, np.asarray(roots, dtype=np.int64)


def aggregate(A, drop_tol: float = 0.0) -> Aggregates:
    """Greedy index-ordered aggregation of each rank's owned rows.

    Entry ``(i, j)`` is dropped when ``|a_ij| <= drop_tol * sqrt(|a_ii a_jj|)``.
    Collective (the aggregate numbering needs a prefix sum).
    """
    check_scalar(drop_tol, "drop_tol", min_val=0.0)
    A = as_operator(A)
    labels, roots = _greedy_aggregate(_filtered_graph(A.owned_block(), drop_tol))
    counts = A.comm.all_gather(int(roots.size))
    offset = int(sum(counts[:A.comm.rank]))
    return Aggregates(labels, roots, offset, int(sum(counts)))


def _local_nullspace(A: CsrMatrix, nullspace) -> np.ndarray:
    n = A.row_map.num_local
    if nullspace is None:
        return np.ones((n, 1))
    if isinstance(nullspace, MultiVector):
        return nullspace.local.copy()
    ns = np.asarray(nullspace, dtype=np.float64)
    ns = ns.reshape(ns.shape[0], -1)
    if ns.shape[0] == A.row_map.num_global:
        return ns[A.row_map.gids]
    if ns.shape[0] == n:
        return ns
    raise ValueError(f"nullspace has {ns.shape[0]} rows, expected {A.row_map.num_global}")


def tentative_prolongator(A, agg: Aggregates, nullspace=None) -> tuple[CsrMatrix, MultiVector]:
    """Orthonormal tentative prolongator and the coarse nullspace.

    Each aggregate's rows of the nullspace are factored ``Q R`` (diagonal of
    ``R`` made positive); ``Q`` fills the aggregate's ``k`` columns and ``R``
    becomes the coarse nullspace rows.
    """
    A = as_operator(A)
    comm = A.comm
    B = _local_nullspace(A, nullspace)
    k = B.shape[1]
    nloc = A.row_map.num_local
    coarse_map = Map(comm, agg.num_global * k,
                     np.arange(agg.offset * k, (agg.offset + agg.num_local) * k))
    rows, cols, vals = [], [], []
    Bc = np.zeros((agg.num_local * k, k))
    for a, mem in enumerate(agg.members()):
        Q, R = np.linalg.qr(B[mem], mode="reduced")
        s = np.sign(np.diag(R))
        s[s == 0] = 1.0
        Q, R = Q * s, R * s[:, None]
        if Q.shape[1] < k or np.any(np.abs(np.diag(R)) <= 1e-12 * max(1.0, np.abs(R).max())):
            raise np.linalg.LinAlgError(
                f"nullspace is rank deficient on aggregate {agg.offset + a}")
        r, c = np.nonzero(Q)
        rows.append(mem[r])
        cols.append((agg.offset + a) * k + c)
        vals.append(Q[r, c])
        Bc[a * k:(a + 1) * k] = R
    cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0))
    local = csr_from_triples(cat(rows).astype(np.int64), cat(cols).astype(np.int64), cat(vals),
                             (nloc, coarse_map.num_global))
    P = CsrMatrix.from_local_rows(A.row_map, local, coarse_map)
    return P, MultiVector(coarse_map, k, Bc)


def smooth_prolongator(A, P_tent: CsrMatrix, damping: float = 4.0 / 3.0,
                       lambda_max: float | None = None) -> CsrMatrix:
    """``P = (I - omega D^-1 A) P_tent`` with ``omega = damping / lambda_max(D^-1 A)``.

    ``damping=0`` returns ``P_tent`` unchanged (plain aggregation).
    """
    if damping == 0:
        return P_tent
    A = as_operator(A)
    d = _check_diagonal(A)
    if lambda_max is None:
        lambda_max = estimate_lambda_max(A)
    omega = damping / lambda_max
    AP = scale_rows(spgemm(A, P_tent), 1.0 / d)
    return add(P_tent, AP, 1.0, -omega)


@dataclass
class Level:
    A: CsrMatrix
    P: CsrMatrix | None = None
    R: CsrMatrix | None = None
    smoother: LinearOperator | None = None
    aggregates: Aggregates | None = None
    nullspace: MultiVector | None = None


@dataclass
class Hierarchy:
    levels: list[Level] = field(default_factory=list)
    coarse_solver: DirectSolver | None = None
    coarse_size: int = 16
    max_levels: int = 10

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def dimensions(self) -> list[int]:
        return [lev.A.row_map.num_global for lev in self.levels]

    def operator_complexity(self) -> float:
        nnz = [lev.A.comm.all_reduce_scalar(float(lev.A.local.nnz)) for lev in self.levels]
        return sum(nnz) / nnz[0]


def _make_smoother(A: CsrMatrix, kind: str, sweeps: int) -> LinearOperator:
    if kind in ("symmetric_gs", "gauss_seidel_symmetric"):
        return Relaxation("gauss_seidel_symmetric", sweeps).fit(A)
    if kind == "jacobi":
        return Relaxation("jacobi", sweeps, damping=2.0 / 3.0).fit(A)
    if kind == "chebyshev":
        return Chebyshev(degree=2).fit(A)
    raise ValueError(f"unknown smoother {kind!r}")


def setup_hierarchy(A, drop_tol: float = 0.0, coarse_size: int = 16, max_levels: int = 10,
                    smoother: str = "symmetric_gs", sweeps: int = 1,
                    damping: float = 4.0 / 3.0, nullspace=None) -> Hierarchy:
    """Build the level list.  Collective.

    Coarsening stops at ``coarse_size`` rows, at ``max_levels`` levels, or
    when a level shrinks by less than 5% (a :class:`CoarseningStallWarning`
    is issued; the hierarchy built so far is kept).
    """
    check_scalar(coarse_size, "coarse_size", int, min_val=1)
    check_scalar(max_levels, "max_levels", int, min_val=1)
    A = as_operator(A)
    h = Hierarchy(coarse_size=coarse_size, max_levels=max_levels)
    ns = MultiVector(A.row_map, local=_local_nullspace(A, nullspace))
    level = Level(A, nullspace=ns)
    h.levels.append(level)
    while True:
        n = level.A.row_map.num_global
        if n <= coarse_size or len(h.levels) >= max_levels:
            break
        agg = aggregate(level.A, drop_tol)
        if agg.num_global * ns.num_vectors > 0.95 * n:
            warnings.warn(f"coarsening stalled at {n} rows; stopping with "
                          f"{len(h.levels)} levels", CoarseningStallWarning, stacklevel=2)
            break
        P_tent, ns_c = tentative_prolongator(level.A, agg, level.nullspace)
        P = smooth_prolongator(level.A, P_tent, damping)
        R = transpose(P)
        Ac = spgemm(R, spgemm(level.A, P))
        level.P, level.R, level.aggregates = P, R, agg
        level = Level(Ac, nullspace=ns_c)
        h.levels.append(level)
    for lev in h.levels[:-1]:
        lev.smoother = _make_smoother(lev.A, smoother, sweeps)
    h.coarse_solver = DirectSolver().fit(h.levels[-1].A)
    return h


def _cycle(h: Hierarchy, l: int, b: MultiVector) -> MultiVector:
    lev = h.levels[l]
    if l == h.num_levels - 1:
        return h.coarse_solver.apply(b)
    x = b.zeros_like()
    lev.smoother.smooth(b, x)
    r = lev.A.apply(x).scale(-1.0).update(1.0, b)
    rc = MultiVector(lev.R.row_map, b.num_vectors)
    spmv(lev.R, r, rc)
    xc = _cycle(h, l + 1, rc)
    spmv(lev.P, xc, x, 1.0, 1.0)
    lev.smoother.smooth(b, x)
    return x


def vcycle_apply(h: Hierarchy, r: MultiVector) -> MultiVector:
    """One V(1,1) cycle from a zero initial guess: ``z ~ A^-1 r``."""
    return _cycle(h, 0, r)


class SmoothedAggregationAMG(BaseEstimator, LinearOperator):
    """V-cycle preconditioner from a smoothed-aggregation hierarchy.

    Parameters
    ----------
    drop_tol : float
        Strength-of-connection threshold theta.
    coarse_size : int
    max_levels : int
    smoother : {'symmetric_gs', 'chebyshev', 'jacobi'}
    sweeps : int
        Pre- and post-smoothing sweeps.
    damping : float
        Prolongator damping numerator; ``omega = damping / lambda_max``.
    nullspace : array_like or None
    """

    def __init__(self, drop_tol: float = 0.0, coarse_size: int = 16, max_levels: int = 10,
                 smoother: str = "symmetric_gs", sweeps: int = 1, damping: float = 4.0 / 3.0,
                 nullspace=None):
        self.drop_tol = drop_tol
        self.coarse_size = coarse_size
        self.max_levels = max_levels
        self.smoother = smoother
        self.sweeps = sweeps
        self.damping = damping
        self.nullspace = nullspace

    def fit(self, A) -> "SmoothedAggregationAMG":
        A = as_operator(A)
        self.domain_map = self.range_map = A.row_map
        self.hierarchy_ = setup_hierarchy(A, self.drop_tol, self.coarse_size, self.max_levels,
                                          self.smoother, self.sweeps, self.damping,
                                          self.nullspace)
        return self

    def apply(self, r: MultiVector) -> MultiVector:
        return vcycle_apply(self.hierarchy_, r)
