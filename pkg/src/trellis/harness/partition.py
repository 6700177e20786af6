"""Geometric recursive coordinate bisection."""

from __future__ import annotations

import numpy as np

__all__ = ["rcb_partition"]


def rcb_partition(coordinates, nparts: int) -> np.ndarray:
    """Assign each point to one of ``nparts`` (a power of two) parts.

    Each bisection cuts along the axis of largest extent (ties go to the
    lowest axis) at the median, ordering points by coordinate and then by
    index, so part sizes differ by at most one.
    """
    X = np.asarray(coordinates, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if nparts < 1 or nparts & (nparts - 1):
        raise ValueError(f"nparts must be a power of 2, got {nparts}")
    parts = np.zeros(X.shape[0], dtype=np.int64)

    def split(idx: np.ndarray, count: int, first: int) -> None:
        if count == 1 or idx.size == 0:
            parts[idx] = first
            return
        pts = X[idx]
        extent = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(extent))
        order = np.lexsort((idx, pts[:, axis]))
        half = idx.size // 2
        split(idx[order[:half]], count // 2, first)
        split(idx[order[half:]], count // 2, first + count // 2)

    split(np.arange(X.shape[0]), nparts, 0)
    return parts
