"""Matrix Market coordinate I/O.

Parsing is delegated to :func:`scipy.io.mmread` after the header is checked;
rank 0 reads and the matrix is broadcast, then distributed contiguously.
Values are written with ``repr`` so a write/read round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io as sio
import scipy.sparse as sp

from ..comm import CommContext, serial_comm
from ..core import CsrMatrix, map_contiguous

__all__ = ["MatrixMarketError", "mm_read", "mm_write", "read_global"]

_FIELDS = ("real", "integer")
_SYMMETRY = ("general", "symmetric")


class MatrixMarketError(ValueError):
    pass


def _check_header(path: Path) -> None:
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        first = fh.readline().strip().split()
    if len(first) != 5 or first[0].lower() != "%%matrixmarket" or first[1].lower() != "matrix":
        raise MatrixMarketError(f"{path}: malformed Matrix Market header {' '.join(first)!r}")
    fmt, field, sym = (w.lower() for w in first[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(f"{path}: unsupported format {fmt!r} (only coordinate)")
    if field not in _FIELDS or sym not in _SYMMETRY:
        raise MatrixMarketError(f"{path}: unsupported field/symmetry {field!r} {sym!r}")


def read_global(path) -> sp.csr_matrix:
    """Serial read: symmetric storage is expanded, duplicates are summed."""
    path = Path(path)
    _check_header(path)
    try:
        M = sio.mmread(str(path))
    except (ValueError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    M = sp.coo_matrix(M)
    return sp.csr_matrix((M.data.astype(np.float64), (M.row, M.col)), shape=M.shape)


def mm_read(path, comm: CommContext | None = None) -> CsrMatrix:
    """Collective read; errors on rank 0 are raised on every rank."""
    comm = comm or serial_comm()
    payload = None
    if comm.rank == 0:
        try:
            payload = read_global(path)
        except (OSError, MatrixMarketError) as exc:
            payload = exc
    payload = comm.broadcast(0, payload)
    if isinstance(payload, Exception):
        raise payload
    if payload.shape[0] != payload.shape[1]:
        raise MatrixMarketError(f"{path}: matrix is {payload.shape[0]}x{payload.shape[1]}, "
                                "expected square")
    row_map = map_contiguous(payload.shape[0], comm)
    return CsrMatrix.from_global(comm, payload, row_map)


def mm_write(path, A) -> None:
    """Write ``A`` (CsrMatrix, collective; or scipy sparse) in general coordinate format."""
    if isinstance(A, CsrMatrix):
        G = A.to_global()
        if A.comm.rank != 0:
            return
    else:
        G = sp.csr_matrix(A)
    C = G.tocoo()
    order = np.lexsort((C.col, C.row))
    lines = ["%%MatrixMarket matrix coordinate real general",
             f"{G.shape[0]} {G.shape[1]} {C.nnz}"]
    lines.extend(f"{C.row[k] + 1} {C.col[k] + 1} {float(C.data[k])!r}" for k in order)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
