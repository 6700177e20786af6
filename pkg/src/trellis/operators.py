"""Linear-operator contract and input validation helpers.

Anything with ``apply(x: MultiVector) -> MultiVector`` plus ``domain_map`` and
``range_map`` attributes is an operator; :class:`~trellis.core.CsrMatrix`
qualifies directly.  The helpers here coerce user inputs (dense arrays, scipy
matrices, callables) onto that contract.
"""

from __future__ import annotations

import numbers
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
from sklearn.utils import check_scalar as _sk_check_scalar

from .comm import CommContext, serial_comm
from .core import CsrMatrix, Map, MultiVector

__all__ = [
    "LinearOperator",
    "MatrixFreeOperator",
    "IdentityOperator",
    "ZeroOperator",
    "as_operator",
    "as_multivector",
    "as_preconditioner",
    "check_scalar",
]


class LinearOperator:
    """Minimal base class; subclasses set the maps and implement ``apply``."""

    domain_map: Map
    range_map: Map

    def apply(self, x: MultiVector) -> MultiVector:  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, x: MultiVector) -> MultiVector:
        return self.apply(x)


class MatrixFreeOperator(LinearOperator):
    """Wrap a function ``fn(x) -> y`` acting on multivectors."""

    def __init__(self, fn: Callable[[MultiVector], MultiVector], domain_map: Map,
                 range_map: Map | None = None) -> None:
        self.fn = fn
        self.domain_map = domain_map
        self.range_map = domain_map if range_map is None else range_map

    def apply(self, x: MultiVector) -> MultiVector:
        return self.fn(x)


class IdentityOperator(LinearOperator):
    def __init__(self, map: Map) -> None:
        self.domain_map = self.range_map = map

    def apply(self, x: MultiVector) -> MultiVector:
        return x.copy()


class ZeroOperator(LinearOperator):
    def __init__(self, map: Map) -> None:
        self.domain_map = self.range_map = map

    def apply(self, x: MultiVector) -> MultiVector:
        return x.zeros_like()


def as_operator(A: Any, comm: CommContext | None = None):
    """Coerce ``A`` to the operator contract.

    Dense arrays and scipy matrices are distributed with contiguous maps over
    ``comm`` (a fresh single-rank communicator when omitted).
    """
    if isinstance(A, CsrMatrix):
        return A
    if hasattr(A, "apply") and hasattr(A, "domain_map"):
        return A
    if sp.issparse(A):
        return CsrMatrix.from_global(comm or serial_comm(), A)
    if isinstance(A, np.ndarray) or isinstance(A, (list, tuple)):
        arr = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if arr.shape[0] != arr.shape[1]:
            raise ValueError(f"operator must be square, got shape {arr.shape}")
        return CsrMatrix.from_dense(arr, comm)
    raise TypeError(f"cannot use {type(A).__name__} as a linear operator")


def as_preconditioner(M: Any, map: Map):
    if M is None:
        return IdentityOperator(map)
    if hasattr(M, "apply"):
        return M
    if callable(M):
        return MatrixFreeOperator(M, map)
    return as_operator(M, map.comm)


def as_multivector(v: Any, map: Map, name: str = "vector") -> tuple[MultiVector, bool]:
    """Return ``(multivector, was_array)``; arrays are read as *global* values."""
    if isinstance(v, MultiVector):
        if not v.map.same_as(map):
            raise ValueError(f"{name} is distributed over the wrong map")
        return v, False
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape[0] != map.num_global:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {map.num_global}")
    return MultiVector.from_global(map, arr), True


def check_scalar(x: Any, name: str, target_type=numbers.Real, min_val=None, max_val=None,
                 include_boundaries: str = "both"):
    """``sklearn.utils.check_scalar`` that also rejects bools."""
    if isinstance(x, bool):
        raise TypeError(f"{name} must be {target_type}, got bool")
    return _sk_check_scalar(x, name, target_type, min_val=min_val, max_val=max_val,
                            include_boundaries=include_boundaries)
