"""Two-level overlapping Schwarz with an algebraic GDSW coarse space.

The coarse space is built from the matrix graph alone.  A node is on the
interface when its neighbourhood touches more than one subdomain; interface
nodes with the same set of adjacent subdomains (their *signature*) that are
connected form one component.  Each component contributes one basis function
per nullspace vector: the nullspace restricted to the component on the
interface, extended into subdomain interiors by discrete-harmonic extension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from sklearn.base import BaseEstimator

from .core import CsrMatrix, MultiVector, csr_from_triples, map_contiguous, spgemm, spmv, transpose
from .operators import LinearOperator, as_operator
from .smoothers import AdditiveSchwarz, _symmetric_pattern

__all__ = [
    "InterfaceClassification",
    "CoarseBasis",
    "identify_interface",
    "build_coarse_basis",
    "TwoLevelSchwarz",
    "two_level_apply",
]


class SingularInteriorError(ArithmeticError):
    pass


@dataclass
class InterfaceClassification:
    """Replicated description of the interface.

    Attributes
    ----------
    nodes : ndarray
        Interface global indices, ascending.
    signatures : list[tuple[int, ...]]
        Sorted adjacent-subdomain set of each interface node.
    component : ndarray
        Component id of each interface node (lowest global index in it).
    components : list[ndarray]
        Members of each component, ordered by component id.
    classes : list[str]
        ``'vertex'`` or ``'edge'`` per component.
    """

    nodes: np.ndarray
    signatures: list
    component: np.ndarray
    components: list
    classes: list

    @property
    def num_components(self) -> int:
        return len(self.components)

    def signature_of(self, gid: int) -> tuple:
        i = int(np.searchsorted(self.nodes, gid))
        if i < self.nodes.size and self.nodes[i] == gid:
            return self.signatures[i]
        return ()


def identify_interface(A, pattern: CsrMatrix | None = None) -> InterfaceClassification:
    """Classify interface nodes of the rank-owned decomposition of ``A``.

    Collective.  Raises ``ValueError`` when some rank owns no rows.
    """
    A = as_operator(A)
    comm = A.comm
    if comm.all_reduce_scalar(float(A.row_map.num_local), "min") == 0:
        raise ValueError("empty subdomain: every rank must own at least one row")
    if pattern is None:
        pattern = _symmetric_pattern(A)
    L = pattern.local
    owners = pattern.col_owner
    me = comm.rank
    entries = []
    for i in range(L.shape[0]):
        cols = L.indices[L.indptr[i]:L.indptr[i + 1]]
        sig = set(owners[cols].tolist())
        sig.add(me)
        if len(sig) >= 2:
            gid = int(pattern.row_map.gids[i])
            entries.append((gid, tuple(sorted(sig)), pattern.col_map.gids[cols].astype(np.int64)))
    gathered = [e for part in comm.all_gather(entries) for e in part]
    gathered.sort(key=lambda e: e[0])
    nodes = np.array([e[0] for e in gathered], dtype=np.int64)
    sigs = [e[1] for e in gathered]
    n = nodes.size
    if n == 0:
        return InterfaceClassification(nodes, [], np.zeros(0, np.int64), [], [])
    rows, cols = [], []
    for a, (_, sig, nbrs) in enumerate(gathered):
        pos = np.searchsorted(nodes, nbrs)
        pos = np.clip(pos, 0, n - 1)
        for b in pos[nodes[pos] == nbrs]:
            if b != a and sigs[b] == sig:
                rows.append(a)
                cols.append(int(b))
    G = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(G, directed=False)
    comp_min = {}
    for a, lab in enumerate(labels):
        comp_min.setdefault(lab, int(nodes[a]))
    component = np.array([comp_min[lab] for lab in labels], dtype=np.int64)
    ids = sorted(set(component.tolist()))
    members = [nodes[component == c] for c in ids]
    classes = []
    for c, mem in zip(ids, members):
        sig = sigs[int(np.searchsorted(nodes, c))]
        classes.append("vertex" if len(sig) >= 3 or mem.size == 1 else "edge")
    return InterfaceClassification(nodes, sigs, component, members, classes)


@dataclass
class CoarseBasis:
    phi: CsrMatrix
    classification: InterfaceClassification
    nullspace_dim: int

    @property
    def num_columns(self) -> int:
        return self.phi.domain_map.num_global


def build_coarse_basis(A, classification: InterfaceClassification, nullspace=None) -> CoarseBasis:
    """Interface values are component indicators times the nullspace; interior
    values solve ``A_II phi_I = -A_IG phi_G`` per subdomain."""
    A = as_operator(A)
    comm = A.comm
    N = A.row_map.num_global
    if nullspace is None:
        ns = np.ones((N, 1))
    else:
        ns = np.asarray(nullspace, dtype=np.float64).reshape(N, -1)
    k = ns.shape[1]
    comp_ids = [int(m[0]) for m in classification.components]
    col_of = {c: t for t, c in enumerate(comp_ids)}
    ncoarse = len(comp_ids) * k
    coarse_map = map_contiguous(ncoarse, comm)

    gids = A.row_map.gids
    nloc = gids.size
    is_if = np.isin(gids, classification.nodes)
    if_l = np.flatnonzero(is_if)
    in_l = np.flatnonzero(~is_if)
    rows, cols, vals = [], [], []
    # interface rows
    comp_local = np.zeros(if_l.size, dtype=np.int64)
    if if_l.size:
        pos = np.searchsorted(classification.nodes, gids[if_l])
        comp_local = classification.component[pos]
        for li, c in zip(if_l, comp_local):
            base = col_of[int(c)] * k
            for ell in range(k):
                if ns[gids[li], ell] != 0.0:
                    rows.append(li)
                    cols.append(base + ell)
                    vals.append(ns[gids[li], ell])
    # interior rows: discrete harmonic extension
    if in_l.size and if_l.size:
        B = A.owned_block().tocsr()
        A_II = B[in_l][:, in_l].tocsc()
        A_IG = B[in_l][:, if_l]
        local_cols = sorted({col_of[int(c)] for c in comp_local})
        phi_G = np.zeros((if_l.size, len(local_cols) * k))
        cpos = {c: t for t, c in enumerate(local_cols)}
        for a, c in enumerate(comp_local):
            t = cpos[col_of[int(c)]]
            phi_G[a, t * k:(t + 1) * k] = ns[gids[if_l[a]]]
        rhs = -(A_IG @ phi_G)
        try:
            lu = splu(A_II)
            diag = lu.U.diagonal()
            if np.any(diag == 0) or not np.all(np.isfinite(diag)):
                raise RuntimeError("singular")
            phi_I = lu.solve(np.asarray(rhs))
        except RuntimeError as exc:
            raise SingularInteriorError(
                f"rank {comm.rank}: interior block is singular") from exc
        phi_I = np.asarray(phi_I).reshape(in_l.size, -1)
        global_cols = np.array([c * k + ell for c in local_cols for ell in range(k)], dtype=np.int64)
        r, c = np.nonzero(phi_I)
        rows.extend(in_l[r].tolist())
        cols.extend(global_cols[c].tolist())
        vals.extend(phi_I[r, c].tolist())
    local = csr_from_triples(rows, cols, vals, (nloc, ncoarse))
    phi = CsrMatrix.from_local_rows(A.row_map, local, coarse_map)
    return CoarseBasis(phi, classification, k)


class TwoLevelSchwarz(BaseEstimator, LinearOperator):
    """Additive two-level Schwarz: first-level overlapping Schwarz plus the
    coarse correction ``Phi A0^-1 Phi^T r`` with ``A0 = Phi^T A Phi``.

    Parameters
    ----------
    overlap : int
    combine_mode : {'additive', 'restricted_additive'}
    subdomain_solver : {'dense_lu', 'ilu'}
    fill_level : int
    nullspace : array_like or None
        ``N x k`` global nullspace; constant vector when ``None``.
    """

    def __init__(self, overlap: int = 1, combine_mode: str = "additive",
                 subdomain_solver: str = "dense_lu", fill_level: int = 0, nullspace=None):
        self.overlap = overlap
        self.combine_mode = combine_mode
        self.subdomain_solver = subdomain_solver
        self.fill_level = fill_level
        self.nullspace = nullspace

    def fit(self, A) -> "TwoLevelSchwarz":
        A = as_operator(A)
        self.domain_map = self.range_map = A.row_map
        self.first_level_ = AdditiveSchwarz(self.overlap, self.subdomain_solver, self.fill_level,
                                            self.combine_mode).fit(A)
        self.classification_ = identify_interface(A)
        self.basis_ = build_coarse_basis(A, self.classification_, self.nullspace)
        phi = self.basis_.phi
        self.phi_t_ = transpose(phi)
        self.coarse_matrix_ = spgemm(self.phi_t_, spgemm(A, phi))
        A0 = self.coarse_matrix_.to_global().toarray()
        self.A0_ = A0
        if A0.size:
            try:
                self.coarse_lu_ = sla.lu_factor(A0)
            except (sla.LinAlgError, ValueError) as exc:
                raise ArithmeticError(f"coarse factorization failed: {exc}") from exc
            if np.any(np.diag(self.coarse_lu_[0]) == 0):
                raise ArithmeticError("coarse factorization failed: singular coarse matrix")
        else:
            self.coarse_lu_ = None
        return self

    def coarse_correction(self, r: MultiVector) -> MultiVector:
        phi = self.basis_.phi
        if self.coarse_lu_ is None:
            return r.zeros_like()
        c = MultiVector(phi.domain_map, r.num_vectors)
        spmv(self.phi_t_, r, c)
        y = sla.lu_solve(self.coarse_lu_, c.to_global())
        yc = MultiVector.from_global(phi.domain_map, y)
        out = r.zeros_like()
        spmv(phi, yc, out)
        return out

    def apply(self, r: MultiVector) -> MultiVector:
        z = self.first_level_.apply(r)
        return z.update(1.0, self.coarse_correction(r))


def two_level_apply(prec: TwoLevelSchwarz, r: MultiVector) -> MultiVector:
    return prec.apply(r)
