"""Partitioned linear algebra: maps, import plans, multivectors, CSR matrices.

A :class:`Map` records which global indices a rank owns.  Objects distributed
over a map talk to each other through an :class:`ImportPlan`, which classifies
every target entry as *same* (leading identical indices), *permute* (local on
both sides) or *remote* (owned by another rank) and precomputes who sends
what.  Forward application gathers ghost entries (halo exchange); reverse
application scatters back with add or insert (assembly).

Local kernels run on :mod:`scipy.sparse` CSR blocks; global indices are int64
and local column indices int32.
"""

from __future__ import annotations

import struct
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

from .comm import CommContext, serial_comm

__all__ = [
    "Map",
    "MapMismatchError",
    "ImportPlan",
    "MultiVector",
    "CsrMatrix",
    "map_contiguous",
    "map_from_parts",
    "build_import",
    "do_import",
    "do_export",
    "dot",
    "norm2",
    "axpy",
    "scale",
    "elementwise_multiply",
    "spmv",
    "spgemm",
    "transpose",
    "diagonal",
    "frobenius_norm",
    "add",
    "csr_from_triples",
]

LOCAL_INDEX = np.int32
GLOBAL_INDEX = np.int64

_TAG_IMPORT = 101
_TAG_EXPORT = 102
_TAG_ROWS = 103


class MapMismatchError(ValueError):
    """Operands are distributed over incompatible maps."""


# ---------------------------------------------------------------------------
# Map
# ---------------------------------------------------------------------------
class Map:
    """Ownership of global indices ``0..N-1`` by the ranks of a communicator.

    Parameters
    ----------
    comm : CommContext
    num_global : int
        Global element count ``N``.
    gids : array_like of int
        Global indices present on this rank, in local order.
    """

    def __init__(self, comm: CommContext, num_global: int, gids: Iterable[int]) -> None:
        self.comm = comm
        self.num_global = int(num_global)
        self.gids = np.ascontiguousarray(np.asarray(gids, dtype=GLOBAL_INDEX).reshape(-1))
        if self.gids.size and (self.gids.min() < 0 or self.gids.max() >= self.num_global):
            raise ValueError(f"global index outside [0, {self.num_global})")
        self._order = np.argsort(self.gids, kind="stable")
        self._sorted = self.gids[self._order]
        if self._sorted.size > 1 and np.any(self._sorted[1:] == self._sorted[:-1]):
            raise ValueError("duplicate global index within one rank")
        self._directory: Optional[np.ndarray] = None

    @property
    def num_local(self) -> int:
        return int(self.gids.shape[0])

    def lid(self, gids) -> np.ndarray:
        """Local indices of ``gids`` on this rank, ``-1`` where absent."""
        g = np.asarray(gids, dtype=GLOBAL_INDEX)
        pos = np.searchsorted(self._sorted, g)
        pos = np.clip(pos, 0, max(self._sorted.size - 1, 0))
        out = np.full(g.shape, -1, dtype=np.int64)
        if self._sorted.size:
            hit = self._sorted[pos] == g
            out[hit] = self._order[pos[hit]]
        return out

    def directory(self) -> np.ndarray:
        """Owner rank of every global index (collective, cached).

        Built from an all-gather of ownership tables; entries not owned
        anywhere are ``-1``.  For overlapping maps the highest rank wins.
        """
        if self._directory is None:
            tables = self.comm.all_gather(self.gids)
            owners = np.full(self.num_global, -1, dtype=np.int64)
            for r, g in enumerate(tables):
                owners[g] = r
            self._directory = owners
        return self._directory

    def is_one_to_one(self) -> bool:
        counts = np.zeros(self.num_global)
        counts[self.gids] = 1.0
        total = self.comm.all_reduce(counts, "sum")
        return bool(np.all(total == 1.0))

    def same_as(self, other: "Map") -> bool:
        """Local structural equality (no communication)."""
        return self is other or (
            self.num_global == other.num_global and np.array_equal(self.gids, other.gids)
        )

    def __repr__(self) -> str:
        return (f"Map(N={self.num_global}, rank={self.comm.rank}/{self.comm.size}, "
                f"n_local={self.num_local})")


def map_contiguous(N: int, comm: CommContext | None = None) -> Map:
    """Rank ``r`` owns a contiguous block of ``N // P`` indices, plus one more
    for the first ``N % P`` ranks."""
    comm = comm or serial_comm()
    if N < 0:
        raise ValueError("N must be nonnegative")
    P, r = comm.size, comm.rank
    base, extra = divmod(N, P)
    start = r * base + min(r, extra)
    size = base + (1 if r < extra else 0)
    return Map(comm, N, np.arange(start, start + size, dtype=GLOBAL_INDEX))


def map_from_parts(parts, comm: CommContext) -> Map:
    """One-to-one map where rank ``r`` owns the indices with ``parts == r``."""
    parts = np.asarray(parts)
    return Map(comm, parts.shape[0], np.flatnonzero(parts == comm.rank))


def _check_same(a: Map, b: Map, what: str) -> None:
    if not a.same_as(b):
        raise MapMismatchError(f"{what}: maps differ")


# ---------------------------------------------------------------------------
# Import plans
# ---------------------------------------------------------------------------
class ImportPlan:
    """Exchange schedule from a one-to-one ``source`` map to a ``target`` map.

    Attributes
    ----------
    num_same : int
        Leading target entries whose global index equals the source's at the
        same local position.
    permute_src, permute_tgt : ndarray
        Local-to-local copies for the remaining locally available entries.
    remote_lids : dict[int, ndarray]
        Target local indices filled by each source rank.
    export_lids : dict[int, ndarray]
        Source local indices sent to each destination rank.
    """

    def __init__(self, source: Map, target: Map) -> None:
        self.source = source
        self.target = target
        comm = source.comm
        ns, nt = source.num_local, target.num_local
        m = min(ns, nt)
        neq = np.flatnonzero(source.gids[:m] != target.gids[:m])
        self.num_same = int(neq[0]) if neq.size else m

        rest = target.gids[self.num_same:]
        src_lids = source.lid(rest)
        local = src_lids >= 0
        self.permute_tgt = (np.flatnonzero(local) + self.num_same).astype(np.int64)
        self.permute_src = src_lids[local].astype(np.int64)
        remote_tgt = (np.flatnonzero(~local) + self.num_same).astype(np.int64)
        remote_gids = target.gids[remote_tgt]

        owners = source.directory()
        owner_of = np.full(remote_gids.shape, -1, dtype=np.int64)
        in_range = remote_gids < source.num_global
        owner_of[in_range] = owners[remote_gids[in_range]]
        bad = remote_gids[owner_of < 0]
        if bad.size:
            raise KeyError(
                f"rank {comm.rank}: target references global index {int(bad[0])} "
                "absent from the source map"
            )

        self.remote_lids: dict[int, np.ndarray] = {}
        requests: dict[int, np.ndarray] = {}
        for q in np.unique(owner_of):
            sel = owner_of == q
            self.remote_lids[int(q)] = remote_tgt[sel]
            requests[int(q)] = remote_gids[sel]
        incoming = comm.exchange(requests, tag=-11)
        self.export_lids: dict[int, np.ndarray] = {
            q: source.lid(g).astype(np.int64) for q, g in incoming.items()
        }

    @property
    def is_identity(self) -> bool:
        return (self.num_same == self.target.num_local == self.source.num_local
                and not self.remote_lids and not self.export_lids)

    @property
    def num_remote(self) -> int:
        return int(sum(v.size for v in self.remote_lids.values()))

    @property
    def num_export(self) -> int:
        return int(sum(v.size for v in self.export_lids.values()))

    def __repr__(self) -> str:
        return (f"ImportPlan(same={self.num_same}, permute={self.permute_src.size}, "
                f"remote={self.num_remote}, export={self.num_export})")


def build_import(source: Map, target: Map) -> ImportPlan:
    return ImportPlan(source, target)


# ---------------------------------------------------------------------------
# MultiVector
# ---------------------------------------------------------------------------
_HDR = struct.Struct("<qq")


class MultiVector:
    """Dense ``n_local x k`` block distributed over a map."""

    def __init__(self, map: Map, num_vectors: int = 1, local: np.ndarray | None = None) -> None:
        self.map = map
        if local is None:
            local = np.zeros((map.num_local, num_vectors))
        else:
            local = np.asarray(local, dtype=np.float64)
            if local.ndim == 1:
                local = local.reshape(-1, 1)
        if local.shape[0] != map.num_local:
            raise MapMismatchError(
                f"local block has {local.shape[0]} rows, map has {map.num_local}"
            )
        if local.shape[1] < 1:
            raise ValueError("a multivector needs at least one column")
        self.local = local

    @property
    def num_vectors(self) -> int:
        return self.local.shape[1]

    @property
    def comm(self) -> CommContext:
        return self.map.comm

    @classmethod
    def from_global(cls, map: Map, values) -> "MultiVector":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        return cls(map, local=values[map.gids].copy())

    def to_global(self) -> np.ndarray:
        """Assemble the full ``N x k`` array on every rank (collective)."""
        parts = self.map.comm.all_gather((self.map.gids, self.local))
        out = np.zeros((self.map.num_global, self.num_vectors))
        for g, v in parts:
            out[g] = v
        return out

    def copy(self) -> "MultiVector":
        return MultiVector(self.map, local=self.local.copy())

    def zeros_like(self, num_vectors: int | None = None) -> "MultiVector":
        return MultiVector(self.map, num_vectors or self.num_vectors)

    def column(self, j: int) -> "MultiVector":
        """View of column ``j`` (shares storage)."""
        return MultiVector(self.map, local=self.local[:, j:j + 1])

    # -- BLAS-1 ----------------------------------------------------------
    def dot(self, other: "MultiVector") -> np.ndarray:
        _check_same(self.map, other.map, "dot")
        local = np.einsum("ij,ij->j", self.local, other.local)
        return self.map.comm.all_reduce(local, "sum")

    def norm2(self) -> np.ndarray:
        local = np.einsum("ij,ij->j", self.local, self.local)
        return np.sqrt(self.map.comm.all_reduce(local, "sum"))

    def norm_inf(self) -> np.ndarray:
        local = np.abs(self.local).max(axis=0) if self.local.shape[0] else np.zeros(self.num_vectors)
        return self.map.comm.all_reduce(local, "max")

    def update(self, alpha, x: "MultiVector", beta=1.0) -> "MultiVector":
        """``self <- alpha * x + beta * self`` (column-wise scalars allowed)."""
        _check_same(self.map, x.map, "update")
        if np.all(np.asarray(beta) == 1.0):
            self.local += np.asarray(alpha) * x.local
        else:
            self.local[...] = np.asarray(alpha) * x.local + np.asarray(beta) * self.local
        return self

    def scale(self, alpha) -> "MultiVector":
        self.local *= np.asarray(alpha)
        return self

    def put_scalar(self, value: float) -> "MultiVector":
        self.local[...] = value
        return self

    # -- DistObject pack / unpack ------------------------------------------
    def pack(self, lids) -> bytes:
        lids = np.asarray(lids, dtype=np.int64)
        head = _HDR.pack(lids.size, self.num_vectors)
        return head + self.map.gids[lids].tobytes() + np.ascontiguousarray(self.local[lids]).tobytes()

    def unpack(self, payload: bytes, mode: str = "insert") -> None:
        n, k = _HDR.unpack_from(payload, 0)
        off = _HDR.size
        gids = np.frombuffer(payload, dtype=GLOBAL_INDEX, count=n, offset=off)
        vals = np.frombuffer(payload, dtype=np.float64, count=n * k, offset=off + 8 * n).reshape(n, k)
        lids = self.map.lid(gids)
        if np.any(lids < 0):
            raise KeyError("unpacked global index not present on this rank")
        if mode == "insert":
            self.local[lids] = vals
        elif mode == "add":
            np.add.at(self.local, lids, vals)
        else:
            raise ValueError(f"unknown combine mode {mode!r}")

    def __repr__(self) -> str:
        return f"MultiVector({self.map!r}, k={self.num_vectors})"


def _apply_local(out: np.ndarray, idx, vals, mode: str) -> None:
    if mode == "insert":
        out[idx] = vals
    elif mode == "add":
        np.add.at(out, idx, vals)
    else:
        raise ValueError(f"unknown combine mode {mode!r}")


def do_import(x: MultiVector, plan: ImportPlan, mode: str = "insert",
              out: MultiVector | None = None) -> MultiVector:
    """Forward application: fill a target-map vector from ``x`` (source map).

    ``insert`` overwrites the target entries, ``add`` accumulates into them.
    """
    _check_same(x.map, plan.source, "import source")
    if out is None:
        out = MultiVector(plan.target, x.num_vectors)
    else:
        _check_same(out.map, plan.target, "import target")
    comm = plan.source.comm
    for q in sorted(plan.export_lids):
        if q != comm.rank:
            comm.send(q, _TAG_IMPORT, x.pack(plan.export_lids[q]))
    ns = plan.num_same
    sources = sorted(set(plan.remote_lids) | {comm.rank})
    for q in sources:
        if q == comm.rank:
            if mode == "insert":
                out.local[:ns] = x.local[:ns]
            else:
                out.local[:ns] += x.local[:ns]
            _apply_local(out.local, plan.permute_tgt, x.local[plan.permute_src], mode)
        else:
            out.unpack(comm.recv(q, _TAG_IMPORT), mode)
    return out


def do_export(y: MultiVector, plan: ImportPlan, mode: str = "add",
              out: MultiVector | None = None) -> MultiVector:
    """Reverse application: scatter a target-map vector back onto the source map.

    Contributions are combined in ascending source-rank order, so with
    ``insert`` the highest contributing rank wins.
    """
    _check_same(y.map, plan.target, "export source")
    if out is None:
        out = MultiVector(plan.source, y.num_vectors)
    else:
        _check_same(out.map, plan.source, "export target")
    comm = plan.source.comm
    for q in sorted(plan.remote_lids):
        comm.send(q, _TAG_EXPORT, y.pack(plan.remote_lids[q]))
    ns = plan.num_same
    for q in sorted(set(plan.export_lids) | {comm.rank}):
        if q == comm.rank:
            if mode == "insert":
                out.local[:ns] = y.local[:ns]
            else:
                out.local[:ns] += y.local[:ns]
            _apply_local(out.local, plan.permute_src, y.local[plan.permute_tgt], mode)
        else:
            out.unpack(comm.recv(q, _TAG_EXPORT), mode)
    return out


# free-function forms ------------------------------------------------------
def dot(x: MultiVector, y: MultiVector) -> np.ndarray:
    return x.dot(y)


def norm2(x: MultiVector) -> np.ndarray:
    return x.norm2()


def axpy(alpha, x: MultiVector, y: MultiVector) -> MultiVector:
    """``y <- alpha * x + y`` in place."""
    return y.update(alpha, x)


def scale(x: MultiVector, alpha) -> MultiVector:
    return x.scale(alpha)


def elementwise_multiply(x: MultiVector, y: MultiVector) -> MultiVector:
    _check_same(x.map, y.map, "elementwise_multiply")
    return MultiVector(x.map, local=x.local * y.local)


# ---------------------------------------------------------------------------
# CSR matrices
# ---------------------------------------------------------------------------
def csr_from_triples(rows, cols, vals, shape) -> sp.csr_matrix:
    """CSR with sorted, deduplicated rows; duplicates summed, zeros kept."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    nrows, ncols = shape
    if rows.size == 0:
        return sp.csr_matrix((np.zeros(0), np.zeros(0, dtype=LOCAL_INDEX),
                              np.zeros(nrows + 1, dtype=LOCAL_INDEX)), shape=shape)
    keys = rows * max(ncols, 1) + cols
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    first = np.ones(keys.size, dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    starts = np.flatnonzero(first)
    data = np.add.reduceat(vals[order], starts)
    ukeys = keys[starts]
    urows = ukeys // max(ncols, 1)
    ucols = ukeys - urows * max(ncols, 1)
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(np.bincount(urows, minlength=nrows), out=indptr[1:])
    itype = LOCAL_INDEX if max(ncols, nrows, ucols.size) < 2**31 else np.int64
    m = sp.csr_matrix((data, ucols.astype(itype), indptr.astype(itype)), shape=shape)
    m.has_sorted_indices = True
    return m


def _row_ids(A: sp.csr_matrix) -> np.ndarray:
    return np.repeat(np.arange(A.shape[0], dtype=np.int64), np.diff(A.indptr))


def _local_spgemm(A: sp.csr_matrix, B: sp.csr_matrix) -> sp.csr_matrix:
    # scipy drops cancellation zeros; recover the symbolic pattern separately
    Ap = sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    Bp = sp.csr_matrix((np.ones(B.nnz), B.indices, B.indptr), shape=B.shape)
    pattern = (Ap @ Bp).tocsr()
    pattern.sort_indices()
    C = (A @ B).tocsr()
    C.sort_indices()
    ncols = max(B.shape[1], 1)
    kp = _row_ids(pattern) * ncols + pattern.indices
    kc = _row_ids(C) * ncols + C.indices
    data = np.zeros(pattern.nnz)
    data[np.searchsorted(kp, kc)] = C.data
    return sp.csr_matrix((data, pattern.indices, pattern.indptr), shape=pattern.shape)


class CsrMatrix:
    """Row-distributed sparse matrix.

    The local block is an ``n_local_rows x n_cols`` CSR over the column map,
    whose first entries are this rank's domain-map indices and whose ghost
    columns follow, sorted by owning rank then global index.

    Use :meth:`from_local_rows` (collective) rather than the raw constructor.
    """

    def __init__(self, row_map: Map, col_map: Map, domain_map: Map, local: sp.csr_matrix,
                 col_owner: np.ndarray) -> None:
        self.row_map = row_map
        self.col_map = col_map
        self.domain_map = domain_map
        self.local = local
        self.col_owner = col_owner
        self.importer = ImportPlan(domain_map, col_map)
        self._transpose: Optional["CsrMatrix"] = None
        self._diag: Optional[np.ndarray] = None

    # -- construction ------------------------------------------------------
    @classmethod
    def from_local_rows(cls, row_map: Map, rows: sp.spmatrix, domain_map: Map | None = None
                        ) -> "CsrMatrix":
        """Build from this rank's rows given with *global* column indices.

        Collective over ``row_map.comm``.
        """
        domain_map = row_map if domain_map is None else domain_map
        rows = sp.csr_matrix(rows)
        if rows.shape[0] != row_map.num_local:
            raise MapMismatchError("row count does not match the row map")
        if rows.shape[1] != domain_map.num_global:
            raise MapMismatchError("column count does not match the domain map")
        owners = domain_map.directory()
        used = np.unique(rows.indices).astype(np.int64)
        owned = domain_map.gids
        ghosts = used[domain_map.lid(used) < 0]
        if ghosts.size and np.any(owners[ghosts] < 0):
            raise KeyError("column index not owned by any rank of the domain map")
        gorder = np.lexsort((ghosts, owners[ghosts]))
        ghosts = ghosts[gorder]
        col_gids = np.concatenate([owned, ghosts])
        col_map = Map(row_map.comm, domain_map.num_global, col_gids)
        col_owner = np.concatenate([np.full(owned.size, row_map.comm.rank, dtype=np.int64),
                                    owners[ghosts]])
        r = _row_ids(rows)
        lcols = col_map.lid(rows.indices)
        local = csr_from_triples(r, lcols, rows.data, (rows.shape[0], col_gids.size))
        return cls(row_map, col_map, domain_map, local, col_owner)

    @classmethod
    def from_global(cls, comm: CommContext, A, row_map: Map | None = None,
                    domain_map: Map | None = None) -> "CsrMatrix":
        """Distribute a matrix every rank can see (collective).

        Each rank keeps only its own rows; defaults to contiguous maps.
        """
        A = sp.csr_matrix(A)
        if row_map is None:
            row_map = map_contiguous(A.shape[0], comm)
        if domain_map is None:
            domain_map = row_map if A.shape[0] == A.shape[1] and row_map.num_global == A.shape[1] \
                else map_contiguous(A.shape[1], comm)
        return cls.from_local_rows(row_map, A[row_map.gids], domain_map)

    @classmethod
    def from_dense(cls, A, comm: CommContext | None = None) -> "CsrMatrix":
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        r, c = np.nonzero(A)
        m = sp.csr_matrix((A[r, c], (r, c)), shape=A.shape)
        return cls.from_global(comm or serial_comm(), m)

    # -- properties ---------------------------------------------------------
    @property
    def comm(self) -> CommContext:
        return self.row_map.comm

    @property
    def range_map(self) -> Map:
        return self.row_map

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_map.num_global, self.domain_map.num_global)

    @property
    def num_owned_cols(self) -> int:
        return self.domain_map.num_local

    def local_rows_global(self) -> sp.csr_matrix:
        """This rank's rows with global column indices."""
        L = self.local
        return sp.csr_matrix((L.data, self.col_map.gids[L.indices], L.indptr),
                             shape=(L.shape[0], self.domain_map.num_global))

    def owned_block(self) -> sp.csr_matrix:
        """Rows owned here restricted to columns owned here (diagonal block
        when the row and domain maps agree)."""
        return self.local[:, : self.num_owned_cols].tocsr()

    def ghost_block(self) -> sp.csr_matrix:
        return self.local[:, self.num_owned_cols:].tocsr()

    def to_global(self) -> sp.csr_matrix:
        """Gather the whole matrix on every rank (collective)."""
        parts = self.comm.all_gather((self.row_map.gids, self.local_rows_global()))
        rows, cols, vals = [], [], []
        for g, R in parts:
            R = R.tocoo()
            rows.append(g[R.row])
            cols.append(R.col)
            vals.append(R.data)
        return csr_from_triples(np.concatenate(rows), np.concatenate(cols),
                                np.concatenate(vals), self.shape)

    # -- operator contract ---------------------------------------------------
    def apply(self, x: MultiVector) -> MultiVector:
        y = MultiVector(self.row_map, x.num_vectors)
        spmv(self, x, y, 1.0, 0.0)
        return y

    def apply_transpose(self, x: MultiVector) -> MultiVector:
        if self._transpose is None:
            self._transpose = transpose(self)
        return self._transpose.apply(x)

    def import_columns(self, x: MultiVector) -> np.ndarray:
        """Local column-map (owned + ghost) values of ``x``."""
        if self.importer.is_identity:
            return x.local
        return do_import(x, self.importer).local

    # -- DistObject row transfer ----------------------------------------------
    def pack_rows(self, lids) -> bytes:
        lids = np.asarray(lids, dtype=np.int64)
        R = self.local_rows_global()[lids]
        head = _HDR.pack(lids.size, R.nnz)
        return (head + self.row_map.gids[lids].tobytes()
                + np.diff(R.indptr).astype(np.int64).tobytes()
                + R.indices.astype(np.int64).tobytes() + R.data.tobytes())

    @staticmethod
    def unpack_rows(payload: bytes, num_cols: int) -> tuple[np.ndarray, sp.csr_matrix]:
        """Decode :meth:`pack_rows` output into (row gids, rows with global columns)."""
        n, nnz = _HDR.unpack_from(payload, 0)
        off = _HDR.size
        gids = np.frombuffer(payload, dtype=np.int64, count=n, offset=off)
        off += 8 * n
        lens = np.frombuffer(payload, dtype=np.int64, count=n, offset=off)
        off += 8 * n
        cols = np.frombuffer(payload, dtype=np.int64, count=nnz, offset=off)
        off += 8 * nnz
        vals = np.frombuffer(payload, dtype=np.float64, count=nnz, offset=off)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        return gids.copy(), sp.csr_matrix((vals.copy(), cols.copy(), indptr), shape=(n, num_cols))

    def import_rows(self, plan: ImportPlan) -> sp.csr_matrix:
        """Rows of ``self`` for every index of ``plan.target`` (global columns).

        ``plan.source`` must be this matrix's row map.
        """
        _check_same(plan.source, self.row_map, "row import source")
        comm = self.comm
        N = self.domain_map.num_global
        for q in sorted(plan.export_lids):
            if q != comm.rank:
                comm.send(q, _TAG_ROWS, self.pack_rows(plan.export_lids[q]))
        mine = self.local_rows_global()
        nt = plan.target.num_local
        blocks_rows, blocks_cols, blocks_vals = [], [], []

        def put(tgt_lids, R):
            R = R.tocoo()
            blocks_rows.append(np.asarray(tgt_lids)[R.row])
            blocks_cols.append(R.col)
            blocks_vals.append(R.data)

        ns = plan.num_same
        put(np.arange(ns), mine[:ns])
        if plan.permute_src.size:
            put(plan.permute_tgt, mine[plan.permute_src])
        for q in sorted(plan.remote_lids):
            gids, R = self.unpack_rows(comm.recv(q, _TAG_ROWS), N)
            put(plan.target.lid(gids), R)
        if not blocks_rows:
            return sp.csr_matrix((nt, N))
        return csr_from_triples(np.concatenate(blocks_rows), np.concatenate(blocks_cols),
                                np.concatenate(blocks_vals), (nt, N))

    def diagonal_values(self) -> np.ndarray:
        if self._diag is None:
            cols = self.col_map.lid(self.row_map.gids)
            d = np.zeros(self.row_map.num_local)
            ok = cols >= 0
            if ok.any():
                d[ok] = np.asarray(self.local[np.flatnonzero(ok), cols[ok]]).ravel()
            self._diag = d
        return self._diag

    def __repr__(self) -> str:
        return (f"CsrMatrix(shape={self.shape}, rank={self.comm.rank}, "
                f"local_nnz={self.local.nnz})")


def spmv(A: CsrMatrix, x: MultiVector, y: MultiVector, alpha: float = 1.0,
         beta: float = 0.0) -> MultiVector:
    """``y <- alpha * A x + beta * y``."""
    _check_same(x.map, A.domain_map, "spmv domain")
    _check_same(y.map, A.row_map, "spmv range")
    xc = A.import_columns(x)
    Ax = A.local @ xc
    if beta == 0.0:
        y.local[...] = alpha * Ax
    else:
        y.local[...] = alpha * Ax + beta * y.local
    return y


def spgemm(A: CsrMatrix, B: CsrMatrix) -> CsrMatrix:
    """``C = A B`` with C on A's row map and B's domain map."""
    _check_same(A.domain_map, B.row_map, "spgemm inner dimension")
    Bext = B.import_rows(A.importer)
    C = _local_spgemm(A.local, Bext.tocsr())
    return CsrMatrix.from_local_rows(A.row_map, C, B.domain_map)


def transpose(A: CsrMatrix) -> CsrMatrix:
    comm = A.comm
    L = A.local.tocoo()
    dest = A.col_owner[L.col]
    gr = A.row_map.gids[L.row]
    gc = A.col_map.gids[L.col]
    outgoing = {}
    for q in np.unique(dest):
        sel = dest == q
        outgoing[int(q)] = (gc[sel], gr[sel], L.data[sel])
    incoming = comm.exchange(outgoing, tag=-13)
    new_rows = A.domain_map
    rs, cs, vs = [np.zeros(0, np.int64)], [np.zeros(0, np.int64)], [np.zeros(0)]
    for q in sorted(incoming):
        r, c, v = incoming[q]
        rs.append(new_rows.lid(r))
        cs.append(c)
        vs.append(v)
    local = csr_from_triples(np.concatenate(rs), np.concatenate(cs), np.concatenate(vs),
                             (new_rows.num_local, A.row_map.num_global))
    return CsrMatrix.from_local_rows(new_rows, local, A.row_map)


def diagonal(A: CsrMatrix) -> MultiVector:
    return MultiVector(A.row_map, local=A.diagonal_values().copy())


def frobenius_norm(A: CsrMatrix) -> float:
    return float(np.sqrt(A.comm.all_reduce_scalar(float(np.dot(A.local.data, A.local.data)))))


def add(A: CsrMatrix, B: CsrMatrix, alpha: float = 1.0, beta: float = 1.0) -> CsrMatrix:
    """``C = alpha A + beta B`` on A's maps; the union pattern is kept."""
    _check_same(A.row_map, B.row_map, "add rows")
    _check_same(A.domain_map, B.domain_map, "add columns")
    Ra = A.local_rows_global().tocoo()
    Rb = B.local_rows_global().tocoo()
    local = csr_from_triples(np.concatenate([Ra.row, Rb.row]),
                             np.concatenate([Ra.col, Rb.col]),
                             np.concatenate([alpha * Ra.data, beta * Rb.data]),
                             (A.row_map.num_local, A.domain_map.num_global))
    return CsrMatrix.from_local_rows(A.row_map, local, A.domain_map)


def scale_rows(A: CsrMatrix, d: np.ndarray) -> CsrMatrix:
    """``diag(d) A`` with ``d`` given on this rank's rows (no communication)."""
    local = A.local.copy()
    local.data = local.data * np.repeat(np.asarray(d, dtype=np.float64), np.diff(local.indptr))
    out = CsrMatrix.__new__(CsrMatrix)
    out.row_map, out.col_map, out.domain_map = A.row_map, A.col_map, A.domain_map
    out.local, out.col_owner, out.importer = local, A.col_owner, A.importer
    out._transpose, out._diag = None, None
    return out
