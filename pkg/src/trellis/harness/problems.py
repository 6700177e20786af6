"""Model problem generators.

Generators build only the rows each rank owns.  Row ``i + nx * j`` is grid
point ``(i, j)``; Dirichlet boundary values are eliminated and the
right-hand side is ``A @ ones`` so the exact solution is the ones vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..comm import CommContext, serial_comm
from ..core import CsrMatrix, Map, MultiVector, map_contiguous, map_from_parts
from .partition import rcb_partition

__all__ = [
    "ProblemInstance",
    "gen_poisson_1d",
    "gen_poisson_2d",
    "gen_convection_diffusion_2d",
    "make_row_map",
]


@dataclass
class ProblemInstance:
    A: CsrMatrix
    b: MultiVector
    x_exact: MultiVector | None
    coordinates: np.ndarray
    tag: str

    @property
    def size(self) -> int:
        return self.A.row_map.num_global


def _grid_coordinates(nx: int, ny: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    return np.column_stack([(i.ravel() + 1) / (nx + 1), (j.ravel() + 1) / (ny + 1)])


def make_row_map(N: int, comm: CommContext, partition: str = "contiguous",
                 coordinates: np.ndarray | None = None) -> Map:
    if partition == "contiguous":
        return map_contiguous(N, comm)
    if partition == "rcb":
        if coordinates is None:
            raise ValueError("rcb partitioning needs coordinates")
        return map_from_parts(rcb_partition(coordinates, comm.size), comm)
    raise ValueError(f"unknown partition {partition!r}")


def _finish(rows: sp.csr_matrix, row_map: Map, coords: np.ndarray, tag: str) -> ProblemInstance:
    A = CsrMatrix.from_local_rows(row_map, rows, row_map)
    ones = MultiVector(row_map, local=np.ones((row_map.num_local, 1)))
    return ProblemInstance(A, A.apply(ones), ones, coords, tag)


def _stencil_rows(gids: np.ndarray, nx: int, ny: int, diag, west, east, south, north) -> sp.csr_matrix:
    i = gids % nx
    j = gids // nx
    n = gids.size
    loc = np.arange(n)
    rows, cols, vals = [loc], [gids], [np.broadcast_to(diag, (n,)).astype(float)]
    for mask, off, val in ((i > 0, -1, west), (i < nx - 1, 1, east),
                           (j > 0, -nx, south), (j < ny - 1, nx, north)):
        if val == 0.0:
            continue
        rows.append(loc[mask])
        cols.append(gids[mask] + off)
        vals.append(np.full(int(mask.sum()), val))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, nx * ny))


def gen_poisson_1d(n: int, comm: CommContext | None = None, row_map: Map | None = None
                   ) -> ProblemInstance:
    comm = comm or serial_comm()
    coords = ((np.arange(n) + 1) / (n + 1)).reshape(-1, 1)
    row_map = row_map or map_contiguous(n, comm)
    rows = _stencil_rows(row_map.gids, n, 1, 2.0, -1.0, -1.0, 0.0, 0.0)
    return _finish(rows, row_map, coords, f"poisson1d_{n}")


def gen_poisson_2d(nx: int, ny: int, comm: CommContext | None = None,
                   partition: str = "contiguous", row_map: Map | None = None) -> ProblemInstance:
    """5-point Laplacian ``[4, -1, -1, -1, -1]`` on an ``nx x ny`` interior grid."""
    if nx < 2 or ny < 2:
        raise ValueError("nx and ny must be at least 2")
    comm = comm or serial_comm()
    coords = _grid_coordinates(nx, ny)
    row_map = row_map or make_row_map(nx * ny, comm, partition, coords)
    rows = _stencil_rows(row_map.gids, nx, ny, 4.0, -1.0, -1.0, -1.0, -1.0)
    return _finish(rows, row_map, coords, f"poisson2d_{nx}x{ny}")


def gen_convection_diffusion_2d(nx: int, ny: int, velocity=(1.0, 0.0), eps: float = 1.0,
                                comm: CommContext | None = None, partition: str = "contiguous",
                                row_map: Map | None = None) -> ProblemInstance:
    """``eps`` times the 5-point Laplacian plus first-order upwind convection
    scaled by the mesh width ``h = 1 / (nx + 1)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    comm = comm or serial_comm()
    vx, vy = (float(v) for v in velocity)
    h = 1.0 / (nx + 1)
    coords = _grid_coordinates(nx, ny)
    row_map = row_map or make_row_map(nx * ny, comm, partition, coords)
    diag = 4.0 * eps + h * (abs(vx) + abs(vy))
    west = -eps - h * max(vx, 0.0)
    east = -eps - h * max(-vx, 0.0)
    south = -eps - h * max(vy, 0.0)
    north = -eps - h * max(-vy, 0.0)
    rows = _stencil_rows(row_map.gids, nx, ny, diag, west, east, south, north)
    return _finish(rows, row_map, coords, f"convdiff2d_{nx}x{ny}")
