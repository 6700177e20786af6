"""Newton-type nonlinear solvers with composable status tests.

Models are stateless: ``residual(x)`` and, optionally, ``jacobian(x)``
(dense or scipy sparse) or ``jacobian_apply(x, v)``.  Without either the
Jacobian comes from forward-mode AD, which requires the residual to be
written with numpy operations or :mod:`trellis.autodiff` functions.
Vectors are plain (replicated) numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import autodiff
from .comm import serial_comm
from .core import MultiVector, map_contiguous
from .krylov import solve_gmres
from .operators import MatrixFreeOperator, check_scalar

__all__ = [
    "UNCONVERGED",
    "CONVERGED",
    "FAILED",
    "FunctionModel",
    "as_model",
    "SolverState",
    "StatusTest",
    "NormF",
    "WRMS",
    "MaxIters",
    "NaNDetect",
    "Stagnation",
    "Combo",
    "norm_f_abs",
    "norm_f_rel",
    "wrms",
    "max_iters",
    "nan_detect",
    "stagnation",
    "combo_and",
    "combo_or",
    "status_evaluate",
    "NewtonConfig",
    "NonlinearHistory",
    "newton_solve",
    "jfnk_apply",
    "anderson_solve",
]

UNCONVERGED = "unconverged"
CONVERGED = "converged"
FAILED = "failed"


# ---------------------------------------------------------------------------
# model contract
# ---------------------------------------------------------------------------
class FunctionModel:
    """Adapter turning plain callables into a model evaluator."""

    def __init__(self, residual: Callable, jacobian: Callable | None = None,
                 jacobian_apply: Callable | None = None) -> None:
        self._residual = residual
        if jacobian is not None:
            self.jacobian = jacobian
        if jacobian_apply is not None:
            self.jacobian_apply = jacobian_apply

    def residual(self, x):
        return self._residual(x)


def as_model(model: Any):
    if hasattr(model, "residual"):
        return model
    if callable(model):
        return FunctionModel(model)
    raise TypeError(f"{type(model).__name__} is not a model evaluator")


def _eval_residual(model, x: np.ndarray) -> np.ndarray:
    return np.asarray(model.residual(x), dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# status tests
# ---------------------------------------------------------------------------
@dataclass
class SolverState:
    """What a status test sees.  ``norms`` holds ``||F||`` of every iterate so far."""

    F: np.ndarray
    x: np.ndarray
    dx: np.ndarray | None
    iteration: int
    norms: list = field(default_factory=list)

    @property
    def norm_f(self) -> float:
        return float(np.linalg.norm(self.F))


class StatusTest:
    def evaluate(self, state: SolverState) -> str:  # pragma: no cover - interface
        raise NotImplementedError

    def describe(self, state: SolverState) -> list[str]:
        """Names of the leaf tests that are not unconverged."""
        s = self.evaluate(state)
        return [] if s == UNCONVERGED else [f"{type(self).__name__}: {s}"]


@dataclass
class NormF(StatusTest):
    """``||F|| <= tol`` (``relative=False``) or ``||F|| <= tol ||F_0||``."""

    tol: float
    relative: bool = False

    def evaluate(self, state):
        nf = state.norm_f
        ref = state.norms[0] if (self.relative and state.norms) else 1.0
        return CONVERGED if nf <= self.tol * ref else UNCONVERGED


@dataclass
class WRMS(StatusTest):
    """Weighted RMS of the last update: converged when at most 1."""

    rtol: float
    atol: float

    def value(self, state) -> float:
        if state.dx is None:
            return math.inf
        w = self.rtol * np.abs(state.x) + self.atol
        return float(np.sqrt(np.mean((state.dx / w) ** 2))) if state.x.size else 0.0

    def evaluate(self, state):
        return CONVERGED if self.value(state) <= 1.0 else UNCONVERGED


@dataclass
class MaxIters(StatusTest):
    """Fails once ``iteration >= n``."""

    n: int

    def evaluate(self, state):
        return FAILED if state.iteration >= self.n else UNCONVERGED


class NaNDetect(StatusTest):
    def evaluate(self, state):
        bad = not np.all(np.isfinite(state.F)) or not np.all(np.isfinite(state.x))
        return FAILED if bad else UNCONVERGED

    def __repr__(self) -> str:
        return "NaNDetect()"


@dataclass
class Stagnation(StatusTest):
    """Fails after ``window`` consecutive steps with ``||F_k|| >= factor ||F_{k-1}||``."""

    window: int = 5
    factor: float = 1.0

    def evaluate(self, state):
        norms = state.norms
        if len(norms) <= self.window:
            return UNCONVERGED
        tail = norms[-self.window - 1:]
        stuck = all(tail[i + 1] >= self.factor * tail[i] for i in range(self.window))
        return FAILED if stuck else UNCONVERGED


@dataclass
class Combo(StatusTest):
    """``'and'``: converged when all children are, failed when any is.
    ``'or'``: converged when any child is, otherwise failed when any is."""

    kind: str
    children: Sequence[StatusTest]

    def __post_init__(self):
        if self.kind not in ("and", "or"):
            raise ValueError(f"unknown combo {self.kind!r}")
        if not self.children:
            raise ValueError("combo needs at least one child")

    def evaluate(self, state):
        results = [c.evaluate(state) for c in self.children]
        if self.kind == "and":
            if FAILED in results:
                return FAILED
            return CONVERGED if all(r == CONVERGED for r in results) else UNCONVERGED
        if CONVERGED in results:
            return CONVERGED
        return FAILED if FAILED in results else UNCONVERGED

    def describe(self, state):
        return [d for c in self.children for d in c.describe(state)]


def norm_f_abs(tol: float) -> NormF:
    return NormF(tol, relative=False)


def norm_f_rel(tol: float) -> NormF:
    return NormF(tol, relative=True)


def wrms(rtol: float, atol: float) -> WRMS:
    return WRMS(rtol, atol)


def max_iters(n: int) -> MaxIters:
    return MaxIters(n)


def nan_detect() -> NaNDetect:
    return NaNDetect()


def stagnation(window: int = 5, factor: float = 1.0) -> Stagnation:
    return Stagnation(window, factor)


def combo_and(*children: StatusTest) -> Combo:
    return Combo("and", list(children))


def combo_or(*children: StatusTest) -> Combo:
    return Combo("or", list(children))


def status_evaluate(tree: StatusTest, state: SolverState) -> str:
    return tree.evaluate(state)


def _default_status() -> StatusTest:
    return combo_or(nan_detect(), norm_f_abs(1e-10), max_iters(50))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------
@dataclass
class NewtonConfig:
    """Newton options.

    Attributes
    ----------
    line_search : {'full', 'backtracking'}
        Backtracking halves the step until the Armijo condition holds.
    jacobian_mode : {'matrix', 'matrix_free_fd', 'matrix_free_ad'}
    linear_solver : {'direct', 'gmres'}
        ``'direct'`` needs an assembled Jacobian (``jacobian_mode='matrix'``).
    forcing : float
        Relative tolerance of each inexact linear solve.
    """

    line_search: str = "full"
    jacobian_mode: str = "matrix"
    linear_solver: str = "direct"
    forcing: float = 1e-4
    armijo_c: float = 1e-4
    max_trials: int = 20
    gmres_restart: int = 30
    gmres_maxit: int = 1000

    def validate(self) -> "NewtonConfig":
        if self.line_search not in ("full", "backtracking"):
            raise ValueError(f"unknown line search {self.line_search!r}")
        if self.jacobian_mode not in ("matrix", "matrix_free_fd", "matrix_free_ad"):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.linear_solver not in ("direct", "gmres"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if self.linear_solver == "direct" and self.jacobian_mode != "matrix":
            raise ValueError("the direct linear solver needs jacobian_mode='matrix'")
        check_scalar(self.forcing, "forcing", min_val=0.0, max_val=1.0, include_boundaries="neither")
        return self

    @classmethod
    def from_parameters(cls, params) -> "NewtonConfig":
        """Read ``nonlinear: ...`` keys from a :class:`ParameterList`."""
        return cls(
            line_search=params.get("nonlinear: line search", "full"),
            jacobian_mode=params.get("nonlinear: jacobian mode", "matrix"),
            linear_solver=params.get("nonlinear: linear solver", "direct"),
            forcing=params.get("nonlinear: forcing term", 1e-4),
        ).validate()


@dataclass
class NonlinearHistory:
    """Per-iteration record.

    ``norms[k]`` is ``||F(x_k)||``; ``step_lengths``, ``linear_iterations`` and
    ``armijo`` (tuples ``(phi0, phi_new, lam, slope)``) have one entry per
    accepted step.
    """

    iterates: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    armijo: list = field(default_factory=list)
    status: str = UNCONVERGED
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.step_lengths)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def jfnk_apply(model, x, v, F_at_x=None) -> np.ndarray:
    """Finite-difference ``J(x) v`` with ``eps = sqrt(macheps)(1 + ||x||) / ||v||``."""
    model = as_model(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        raise ValueError("jfnk_apply needs a nonzero direction")
    if F_at_x is None:
        F_at_x = _eval_residual(model, x)
    eps = math.sqrt(np.finfo(np.float64).eps) * (1.0 + float(np.linalg.norm(x))) / vn
    return (_eval_residual(model, x + eps * v) - np.asarray(F_at_x)) / eps


def _jacobian_action(model, x: np.ndarray, F: np.ndarray, mode: str):
    """Returns ``(J or None, matvec)``."""
    if mode == "matrix":
        if hasattr(model, "jacobian"):
            J = model.jacobian(x)
            J = J.tocsr() if sp.issparse(J) else np.atleast_2d(np.asarray(J, dtype=np.float64))
        else:
            J = autodiff.jacobian(model.residual, x)
        return J, (lambda v: np.asarray(J @ v).reshape(-1))
    if hasattr(model, "jacobian_apply"):
        return None, (lambda v: np.asarray(model.jacobian_apply(x, v), dtype=np.float64).reshape(-1))
    if mode == "matrix_free_fd":
        return None, (lambda v: jfnk_apply(model, x, v, F) if np.any(v) else np.zeros_like(F))
    return None, (lambda v: autodiff.directional_derivative(model.residual, x, v))


def _linear_solve(J, matvec, F: np.ndarray, cfg: NewtonConfig) -> tuple[np.ndarray, int]:
    n = F.size
    if cfg.linear_solver == "direct":
        s = spla.spsolve(J.tocsc(), -F) if sp.issparse(J) else np.linalg.solve(J, -F)
        return np.asarray(s, dtype=np.float64).reshape(-1), 1
    m = map_contiguous(n, serial_comm())
    op = MatrixFreeOperator(lambda X: MultiVector(m, local=matvec(X.local[:, 0])[:, None]), m)
    s, rep = solve_gmres(op, None, -F, rtol=cfg.forcing, maxit=cfg.gmres_maxit,
                         restart=cfg.gmres_restart)
    if not (rep.converged or rep.status == "false_convergence"):
        raise ArithmeticError(f"linear solve failed: {rep}")
    return np.asarray(s).reshape(-1), rep.iterations


def newton_solve(model, x0, status: StatusTest | None = None,
                 cfg: NewtonConfig | None = None) -> tuple[np.ndarray, NonlinearHistory]:
    """Newton's method on ``F(x) = 0`` with optional Armijo backtracking on
    ``phi(x) = ||F||^2 / 2``.

    Failures (NaN residual, exhausted line search, linear solver failure)
    are reported through ``history.status == 'failed'`` and ``history.reason``.
    """
    model = as_model(model)
    cfg = (cfg or NewtonConfig()).validate()
    status = status or _default_status()
    x = np.array(x0, dtype=np.float64).reshape(-1)
    hist = NonlinearHistory()
    F = _eval_residual(model, x)
    dx = None
    while True:
        nf = float(np.linalg.norm(F))
        hist.iterates.append(x.copy())
        hist.norms.append(nf)
        state = SolverState(F, x, dx, hist.iterations, hist.norms)
        result = status.evaluate(state)
        if result != UNCONVERGED:
            hist.status = result
            hist.reason = "; ".join(status.describe(state))
            return x, hist
        try:
            J, matvec = _jacobian_action(model, x, F, cfg.jacobian_mode)
            s, lin_its = _linear_solve(J, matvec, F, cfg)
        except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            hist.status, hist.reason = FAILED, f"linear solve: {exc}"
            return x, hist
        phi0 = 0.5 * nf ** 2
        slope = float(F @ matvec(s))  # grad(phi) . s = F^T J s
        lam = 1.0
        x_new = x + s
        F_new = _eval_residual(model, x_new)
        if cfg.line_search == "backtracking":
            if slope >= 0:
                hist.status, hist.reason = FAILED, "line search: not a descent direction"
                return x, hist
            trials = 1
            while not (0.5 * float(F_new @ F_new) <= phi0 + cfg.armijo_c * lam * slope):
                if trials >= cfg.max_trials:
                    hist.status = FAILED
                    hist.reason = f"line search: no sufficient decrease in {cfg.max_trials} trials"
                    return x, hist
                lam *= 0.5
                trials += 1
                x_new = x + lam * s
                F_new = _eval_residual(model, x_new)
        hist.armijo.append((phi0, 0.5 * float(F_new @ F_new), lam, slope))
        hist.step_lengths.append(lam)
        hist.linear_iterations.append(lin_its)
        dx = x_new - x
        x, F = x_new, F_new


# ---------------------------------------------------------------------------
# Anderson acceleration
# ---------------------------------------------------------------------------
def anderson_solve(G: Callable, x0, depth: int = 5, mixing: float = 1.0,
                   status: StatusTest | None = None) -> tuple[np.ndarray, NonlinearHistory]:
    """Anderson(m) acceleration of the fixed point ``x = G(x)``.

    The residual is ``f = G(x) - x``.  Each step solves the least-squares
    problem over the last ``depth`` residual differences by thin QR; nearly
    dependent columns are dropped oldest first.  ``depth=0`` is damped
    fixed-point iteration.
    """
    check_scalar(depth, "depth", int, min_val=0)
    check_scalar(mixing, "mixing", min_val=0.0, max_val=1.0, include_boundaries="right")
    status = status or _default_status()
    x = np.array(x0, dtype=np.float64).reshape(-1)
    hist = NonlinearHistory()
    dF: list[np.ndarray] = []
    dX: list[np.ndarray] = []
    f = np.asarray(G(x), dtype=np.float64).reshape(-1) - x
    dx = None
    while True:
        hist.iterates.append(x.copy())
        hist.norms.append(float(np.linalg.norm(f)))
        state = SolverState(f, x, dx, hist.iterations, hist.norms)
        result = status.evaluate(state)
        if result != UNCONVERGED:
            hist.status = result
            hist.reason = "; ".join(status.describe(state))
            return x, hist
        step = mixing * f
        while len(dF) > x.size:  # more columns than rows cannot be independent
            dF.pop(0)
            dX.pop(0)
        while dF:
            Q, R = np.linalg.qr(np.column_stack(dF))
            d = np.abs(np.diag(R))
            if d.min() > 1e-12 * max(d.max(), 1e-300):
                gamma = np.linalg.solve(R, Q.T @ f)
                step = step - (np.column_stack(dX) + mixing * np.column_stack(dF)) @ gamma
                break
            dF.pop(0)
            dX.pop(0)
        x_new = x + step
        f_new = np.asarray(G(x_new), dtype=np.float64).reshape(-1) - x_new
        if depth > 0:
            dF.append(f_new - f)
            dX.append(x_new - x)
            if len(dF) > depth:
                dF.pop(0)
                dX.pop(0)
        hist.step_lengths.append(1.0)
        hist.linear_iterations.append(0)
        dx = x_new - x
        x, f = x_new, f_new
