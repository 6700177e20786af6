"""Parameter-list driven construction of preconditioner + Krylov solver stacks.

Layout::

    {"solver": {"type": "cg", "rtol": 1e-8, "max iterations": 500},
     "preconditioner": {"type": "amg", "multigrid: coarse size": 16}}

A missing ``preconditioner`` sublist means no preconditioning.  After each
solve, entries that were never read are reported with
:class:`UnusedParameterWarning`.
"""

from __future__ import annotations

import warnings
from typing import Any, Callable

from ..amg import SmoothedAggregationAMG
from ..gdsw import TwoLevelSchwarz
from ..krylov import (SolveReport, solve_bicgstab, solve_cg, solve_fixed_point, solve_gmres,
                      solve_pseudo_block_cg)
from ..operators import IdentityOperator, as_operator
from ..paramlist import ParameterError, ParameterList, as_parameter_list
from ..smoothers import (ILU, AdditiveSchwarz, BlockPreconditioner2x2, Chebyshev, DirectSolver,
                         Relaxation)

__all__ = ["FactoryError", "UnusedParameterWarning", "PRECONDITIONER_TYPES", "SOLVER_TYPES",
           "build_preconditioner", "build_solver"]

PRECONDITIONER_TYPES = ("none", "jacobi", "gauss_seidel", "chebyshev", "ilu", "schwarz", "gdsw",
                        "amg", "block2x2", "direct")
SOLVER_TYPES = ("cg", "gmres", "fgmres", "bicgstab", "fixed_point", "pseudo_block_cg")
_SYMMETRIC_SOLVERS = ("cg", "pseudo_block_cg")


class FactoryError(ParameterError):
    """Invalid solver configuration; the message names the offending key."""


class UnusedParameterWarning(UserWarning):
    pass


def build_preconditioner(A, p: ParameterList, solver_type: str = "gmres"):
    """Unfitted-then-fitted preconditioner described by sublist ``p``."""
    kind = p.get("type", "none")
    combine_default = "additive" if solver_type in _SYMMETRIC_SOLVERS else "restricted_additive"
    if kind == "none":
        return IdentityOperator(A.row_map)
    if kind == "jacobi":
        M = Relaxation("jacobi", p.get("sweeps", 1), p.get("damping", 1.0))
    elif kind == "gauss_seidel":
        direction = p.get("sweep direction", "symmetric")
        if direction not in ("forward", "backward", "symmetric"):
            raise FactoryError(f"preconditioner.sweep direction: unknown value {direction!r}")
        M = Relaxation(f"gauss_seidel_{direction}", p.get("sweeps", 1), p.get("damping", 1.0))
    elif kind == "chebyshev":
        lmax = p.get("lambda max", 0.0) if "lambda max" in p else None
        M = Chebyshev(p.get("chebyshev degree", 2), lmax, p.get("eigen ratio", 30.0))
    elif kind == "ilu":
        M = ILU(p.get("ilu fill level", 0))
    elif kind == "schwarz":
        M = AdditiveSchwarz(p.get("schwarz overlap", 1), p.get("subdomain solver", "dense_lu"),
                            p.get("ilu fill level", 0), p.get("combine mode", combine_default))
    elif kind == "gdsw":
        if p.get("coarse space", "gdsw") != "gdsw":
            raise FactoryError("preconditioner.coarse space: only 'gdsw' is supported")
        if p.get("nullspace", "constant") != "constant":
            raise FactoryError("preconditioner.nullspace: only 'constant' is supported")
        if p.get("interface classification", "signature") != "signature":
            raise FactoryError("preconditioner.interface classification: only 'signature'")
        M = TwoLevelSchwarz(p.get("overlap", 1), p.get("combine mode", combine_default),
                            p.get("subdomain solver", "dense_lu"), p.get("ilu fill level", 0))
    elif kind == "amg":
        M = SmoothedAggregationAMG(
            drop_tol=p.get("multigrid: drop tolerance", 0.0),
            coarse_size=p.get("multigrid: coarse size", 16),
            max_levels=p.get("multigrid: max levels", 10),
            smoother=p.get("multigrid: smoother", "symmetric_gs"),
            sweeps=p.get("multigrid: sweeps", 1),
            damping=p.get("multigrid: prolongator damping", 4.0 / 3.0))
    elif kind == "block2x2":
        if "split" not in p:
            raise FactoryError("preconditioner.split: required for block2x2")
        inner = None
        if p.is_sublist("inner"):
            inner = _unfitted(p.sublist("inner"), solver_type)
        M = BlockPreconditioner2x2(p.get("split", 0), p.get("block kind", "block_gauss_seidel"),
                                   inner)
    elif kind == "direct":
        M = DirectSolver()
    else:
        raise FactoryError(f"preconditioner.type: unknown preconditioner {kind!r}; "
                           f"choose from {', '.join(PRECONDITIONER_TYPES)}")
    return M.fit(A)


class _Deferred:
    """Unfitted preconditioner built from a sublist (for block inner solves)."""

    def __init__(self, p: ParameterList, solver_type: str) -> None:
        self.p, self.solver_type = p, solver_type

    def __sklearn_clone__(self):
        # fit() builds a fresh object, and sharing p keeps its used-marks
        return self

    def fit(self, A):
        return build_preconditioner(as_operator(A), self.p, self.solver_type)


def _unfitted(p: ParameterList, solver_type: str) -> _Deferred:
    return _Deferred(p, solver_type)


def _solver_fn(s: ParameterList) -> tuple[str, Callable]:
    stype = s.get("type", s.get("solver type", "gmres"))
    rtol = s.get("rtol", 1e-8)
    maxit = s.get("max iterations", 1000)
    if stype == "cg":
        return stype, lambda A, M, b, x0: solve_cg(A, M, b, x0, rtol, maxit)
    if stype == "pseudo_block_cg":
        return stype, lambda A, M, b, x0: solve_pseudo_block_cg(A, M, b, rtol, maxit, x0)
    if stype in ("gmres", "fgmres"):
        restart = s.get("restart", 30)
        ortho = s.get("orthogonalization", "icgs")
        flexible = s.get("flexible", stype == "fgmres")
        return stype, lambda A, M, b, x0: solve_gmres(A, M, b, x0, rtol, maxit, restart,
                                                      flexible, ortho)
    if stype == "bicgstab":
        return stype, lambda A, M, b, x0: solve_bicgstab(A, M, b, x0, rtol, maxit)
    if stype == "fixed_point":
        return stype, lambda A, M, b, x0: solve_fixed_point(A, M, b, x0, rtol, maxit)
    raise FactoryError(f"solver.type: unknown solver {stype!r}; choose from {', '.join(SOLVER_TYPES)}")


def build_solver(A, params: Any):
    """Build ``(preconditioner, solve)`` from a parameter list.

    ``solve(b, x0=None)`` returns ``(x, SolveReport)``.  Construction is
    collective when ``A`` is distributed.  Raises :class:`FactoryError` for
    unknown types and :class:`~trellis.paramlist.ParameterTypeError` for
    values of the wrong kind.
    """
    params = as_parameter_list(params)
    A = as_operator(A)
    if "solver" in params and not params.is_sublist("solver"):
        raise FactoryError("solver: must be a sublist")
    stype, fn = _solver_fn(params.sublist("solver"))
    if "preconditioner" in params:
        if not params.is_sublist("preconditioner"):
            raise FactoryError("preconditioner: must be a sublist")
        M = build_preconditioner(A, params.sublist("preconditioner"), stype)
    else:
        M = IdentityOperator(A.row_map)

    def solve(b, x0=None) -> tuple[Any, SolveReport]:
        out = fn(A, M, b, x0)
        unused = params.unused_entries()
        if unused and A.comm.rank == 0:
            warnings.warn(f"unused parameters: {', '.join(unused)}", UnusedParameterWarning,
                          stacklevel=2)
        return out

    return M, solve
