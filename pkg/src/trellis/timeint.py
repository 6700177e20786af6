"""Runge-Kutta and BDF2 time integration with step-size control.

The ODE is ``x' = f(t, x)`` with ``x`` a 1-D numpy array.  Implicit
steppers solve their stage equations with :func:`trellis.nonlinear.newton_solve`
and an AD Jacobian unless ``jac(t, x)`` is supplied, so ``f`` should be
written with numpy operations that also work on arrays of duals.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nonlinear import (CONVERGED, FunctionModel, NewtonConfig, combo_or, max_iters, nan_detect,
                        newton_solve, norm_f_abs)

__all__ = [
    "ButcherTableau",
    "FORWARD_EULER",
    "RK4",
    "BOGACKI_SHAMPINE",
    "BACKWARD_EULER",
    "TRAPEZOIDAL",
    "SDIRK2",
    "TABLEAUS",
    "StepFailure",
    "StepSizeError",
    "step_erk",
    "step_dirk",
    "step_bdf2",
    "Stepper",
    "RKStepper",
    "BDF2Stepper",
    "make_stepper",
    "StepControl",
    "HistoryEntry",
    "SolutionHistory",
    "IntegrationStats",
    "integrate",
    "replay",
    "order_verify",
]


class StepFailure(ArithmeticError):
    """A step could not be completed (stage Newton failure); retry smaller."""


class StepSizeError(RuntimeError):
    """The controller needed a step below ``dt_min``."""


# ---------------------------------------------------------------------------
# tableaus
# ---------------------------------------------------------------------------
class ButcherTableau:
    """Stage matrix ``A``, weights ``b``, nodes ``c`` and optional embedded weights.

    ``c`` defaults to the row sums of ``A``; a ``c`` that disagrees with them
    is rejected.
    """

    def __init__(self, A, b, c=None, b_hat=None, order: int = 1,
                 embedded_order: int | None = None, name: str = "") -> None:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        s = b.size
        if A.shape != (s, s):
            raise ValueError(f"A has shape {A.shape}, expected {(s, s)}")
        rows = A.sum(axis=1)
        c = rows if c is None else np.asarray(c, dtype=np.float64).reshape(-1)
        if c.shape != (s,) or not np.allclose(c, rows, rtol=0.0, atol=1e-14):
            raise ValueError(f"nodes c={c.tolist()} differ from row sums {rows.tolist()}")
        if np.any(np.triu(A, 1) != 0):
            raise ValueError("only explicit and diagonally implicit tableaus are supported")
        self.A, self.b, self.c = A, b, c
        self.b_hat = None if b_hat is None else np.asarray(b_hat, dtype=np.float64).reshape(-1)
        if self.b_hat is not None and self.b_hat.shape != (s,):
            raise ValueError("embedded weights have the wrong length")
        self.order = order
        self.embedded_order = embedded_order
        self.name = name

    @property
    def stages(self) -> int:
        return self.b.size

    @property
    def is_explicit(self) -> bool:
        return not np.any(np.diag(self.A))

    @property
    def is_dirk(self) -> bool:
        return not self.is_explicit

    @property
    def has_embedded(self) -> bool:
        return self.b_hat is not None

    def __repr__(self) -> str:
        return f"ButcherTableau({self.name or self.stages}, order={self.order})"


FORWARD_EULER = ButcherTableau([[0.0]], [1.0], order=1, name="forward_euler")
RK4 = ButcherTableau(
    [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1, 0]],
    [1 / 6, 1 / 3, 1 / 3, 1 / 6], order=4, name="rk4")
BOGACKI_SHAMPINE = ButcherTableau(
    [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.75, 0, 0], [2 / 9, 1 / 3, 4 / 9, 0]],
    [2 / 9, 1 / 3, 4 / 9, 0], b_hat=[7 / 24, 1 / 4, 1 / 3, 1 / 8],
    order=3, embedded_order=2, name="bogacki_shampine")
BACKWARD_EULER = ButcherTableau([[1.0]], [1.0], order=1, name="backward_euler")
TRAPEZOIDAL = ButcherTableau([[0, 0], [0.5, 0.5]], [0.5, 0.5], order=2, name="trapezoidal")
_G = 1.0 - 1.0 / math.sqrt(2.0)
SDIRK2 = ButcherTableau([[_G, 0], [1 - _G, _G]], [1 - _G, _G], order=2, name="sdirk2")

TABLEAUS = {t.name: t for t in (FORWARD_EULER, RK4, BOGACKI_SHAMPINE, BACKWARD_EULER,
                                TRAPEZOIDAL, SDIRK2)}


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------
def _call(f, t, x) -> np.ndarray:
    return np.asarray(f(t, x), dtype=np.float64).reshape(-1)


def _error_vector(tab: ButcherTableau, h: float, K: np.ndarray) -> np.ndarray | None:
    if tab.b_hat is None:
        return None
    return h * ((tab.b - tab.b_hat) @ K)


def step_erk(tab: ButcherTableau, f: Callable, t: float, x, h: float):
    """One explicit RK step; returns ``(x_next, err)`` where ``err`` is the
    embedded error vector ``h sum_i (b_i - bhat_i) k_i`` or ``None``."""
    if not tab.is_explicit:
        raise ValueError(f"{tab!r} is not explicit")
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    K = np.zeros((tab.stages, x.size))
    for i in range(tab.stages):
        xi = x + h * (tab.A[i, :i] @ K[:i]) if i else x
        K[i] = _call(f, t + tab.c[i] * h, xi)
    return x + h * (tab.b @ K), _error_vector(tab, h, K)


def _implicit_solve(f, t: float, base: np.ndarray, gamma: float, guess: np.ndarray,
                    jac: Callable | None, newton: NewtonConfig | None, tol: float | None
                    ) -> np.ndarray:
    """Solve ``X = base + gamma f(t, X)`` by Newton."""
    n = base.size
    if jac is None:
        model = FunctionModel(lambda X: X - base - gamma * np.asarray(f(t, X)).reshape(-1))
    else:
        model = FunctionModel(lambda X: X - base - gamma * np.asarray(f(t, X)).reshape(-1),
                              jacobian=lambda X: np.eye(n) - gamma * np.asarray(jac(t, X)))
    if tol is None:
        tol = 1e-13 * (1.0 + float(np.linalg.norm(base)))
    status = combo_or(nan_detect(), norm_f_abs(tol), max_iters(25))
    X, hist = newton_solve(model, guess, status, newton or NewtonConfig())
    if hist.status != CONVERGED:
        raise StepFailure(f"stage solve at t={t:.6g} failed: {hist.reason}")
    return X


def step_dirk(tab: ButcherTableau, f: Callable, t: float, x, h: float,
              newton: NewtonConfig | None = None, jac: Callable | None = None,
              tol: float | None = None):
    """One diagonally implicit RK step; returns ``(x_next, err)``.

    Stages with a zero diagonal entry are evaluated explicitly.  Raises
    :class:`StepFailure` when a stage solve does not converge.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    K = np.zeros((tab.stages, x.size))
    for i in range(tab.stages):
        ti = t + tab.c[i] * h
        base = x + h * (tab.A[i, :i] @ K[:i]) if i else x.copy()
        aii = tab.A[i, i]
        if aii == 0.0:
            K[i] = _call(f, ti, base)
            continue
        Xi = _implicit_solve(f, ti, base, h * aii, base, jac, newton, tol)
        # recover the stage derivative from the stage equation, not a new f call
        K[i] = (Xi - base) / (h * aii)
    return x + h * (tab.b @ K), _error_vector(tab, h, K)


def step_bdf2(history, f: Callable, h: float, newton: NewtonConfig | None = None,
              jac: Callable | None = None, tol: float | None = None):
    """Variable-step BDF2 from the last two history points.

    Returns ``(x_next, status)`` with status ``'bdf2'``, or ``'bootstrap'``
    when fewer than two points exist and a backward Euler step is taken.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    pts = history.last(2) if isinstance(history, SolutionHistory) else list(history)[-2:]
    pts = [(float(p[0]), np.asarray(p[1], dtype=np.float64).reshape(-1)) for p in pts]
    if not pts:
        raise ValueError("BDF2 needs at least one history point")
    t_n, x_n = pts[-1]
    if len(pts) == 1:
        x_next, _ = step_dirk(BACKWARD_EULER, f, t_n, x_n, h, newton, jac, tol)
        return x_next, "bootstrap"
    t_m, x_m = pts[0]
    w = h / (t_n - t_m)
    a = (1 + w) ** 2 / (1 + 2 * w)
    c = w * w / (1 + 2 * w)
    beta = (1 + w) / (1 + 2 * w)
    base = a * x_n - c * x_m
    guess = x_n + w * (x_n - x_m)
    return _implicit_solve(f, t_n + h, base, h * beta, guess, jac, newton, tol), "bdf2"


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------
class Stepper:
    name: str = ""
    order: int = 1
    embedded_order: int | None = None
    multistep: bool = False

    def step(self, f, t, x, h, history=None):  # pragma: no cover - interface
        """Returns ``(x_next, err or None, status)``."""
        raise NotImplementedError


class RKStepper(Stepper):
    def __init__(self, tableau: ButcherTableau, newton: NewtonConfig | None = None,
                 jac: Callable | None = None) -> None:
        self.tableau = tableau
        self.name = tableau.name
        self.order = tableau.order
        self.embedded_order = tableau.embedded_order
        self.newton = newton
        self.jac = jac

    def step(self, f, t, x, h, history=None):
        if self.tableau.is_explicit:
            xn, err = step_erk(self.tableau, f, t, x, h)
        else:
            xn, err = step_dirk(self.tableau, f, t, x, h, self.newton, self.jac)
        return xn, err, "ok"


class BDF2Stepper(Stepper):
    name = "bdf2"
    order = 2
    multistep = True

    def __init__(self, newton: NewtonConfig | None = None, jac: Callable | None = None) -> None:
        self.newton = newton
        self.jac = jac

    def step(self, f, t, x, h, history=None):
        if history is None or len(history) == 0:
            pts = [(t, x)]
        else:
            pts = history.last(2)
            if pts[-1][0] != t:
                raise ValueError("history does not end at the current time")
        xn, status = step_bdf2(pts, f, h, self.newton, self.jac)
        return xn, None, status


def make_stepper(name: str, newton: NewtonConfig | None = None,
                 jac: Callable | None = None) -> Stepper:
    key = name.lower().replace(" ", "_").replace("-", "_")
    aliases = {"euler": "forward_euler", "implicit_euler": "backward_euler",
               "rk_explicit_4_stage": "rk4", "bs3": "bogacki_shampine", "sdirk_2": "sdirk2"}
    key = aliases.get(key, key)
    if key == "bdf2":
        return BDF2Stepper(newton, jac)
    if key in TABLEAUS:
        return RKStepper(TABLEAUS[key], newton, jac)
    raise ValueError(f"unknown stepper {name!r}; choose from {sorted(TABLEAUS) + ['bdf2']}")


# ---------------------------------------------------------------------------
# control and history
# ---------------------------------------------------------------------------
@dataclass
class StepControl:
    """Step-size control.  ``rtol = inf`` means fixed steps of ``dt_init``."""

    dt_init: float
    dt_min: float = 1e-12
    dt_max: float = math.inf
    rtol: float = math.inf
    atol: float = 0.0
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError(f"need 0 < dt_min <= dt_init <= dt_max, got "
                             f"{self.dt_min}, {self.dt_init}, {self.dt_max}")
        if self.adaptive and not (self.rtol > 0 or self.atol > 0):
            raise ValueError("adaptive control needs rtol or atol > 0")

    @property
    def adaptive(self) -> bool:
        return math.isfinite(self.rtol)

    @classmethod
    def from_parameters(cls, params) -> "StepControl":
        return cls(dt_init=params.get("dt init"), dt_min=params.get("dt min", 1e-12),
                   dt_max=params.get("dt max", math.inf), rtol=params.get("rtol", math.inf),
                   atol=params.get("atol", 0.0), safety=params.get("safety", 0.9))

    def error_norm(self, err: np.ndarray, x: np.ndarray, x_new: np.ndarray) -> float:
        scale = self.atol + self.rtol * np.maximum(np.abs(x), np.abs(x_new))
        return float(np.sqrt(np.mean((err / scale) ** 2))) if err.size else 0.0

    def factor(self, en: float, p_hat: int) -> float:
        if en == 0.0:
            return self.max_factor
        raw = self.safety * en ** (-1.0 / (p_hat + 1))
        return min(self.max_factor, max(self.min_factor, raw))


@dataclass
class HistoryEntry:
    t: float
    x: np.ndarray
    dt: float
    status: str


class SolutionHistory:
    """Bounded buffer of accepted states; the oldest entries are evicted."""

    def __init__(self, capacity: int = 10000) -> None:
        if capacity < 3:
            raise ValueError("history capacity must be at least 3")
        self.capacity = capacity
        self._buf: deque[HistoryEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def __getitem__(self, i) -> HistoryEntry:
        return self._buf[i]

    def add(self, t: float, x, dt: float = 0.0, status: str = "ok") -> None:
        if self._buf and not t > self._buf[-1].t:
            raise ValueError(f"history times must increase: {t} after {self._buf[-1].t}")
        self._buf.append(HistoryEntry(float(t), np.array(x, dtype=np.float64).reshape(-1),
                                      float(dt), status))

    def last(self, k: int) -> list[tuple[float, np.ndarray]]:
        return [(e.t, e.x) for e in list(self._buf)[-k:]]

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self._buf])

    @property
    def states(self) -> np.ndarray:
        return np.array([e.x for e in self._buf])


@dataclass
class IntegrationStats:
    accepted: int = 0
    rejected: int = 0
    failed_solves: int = 0
    error_norms: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.accepted


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
def _attempt(stepper: Stepper, f, t, x, h, history, doubled: bool):
    """One trial step.  ``doubled`` estimates the error by step doubling:
    two half steps are kept and compared with one full step."""
    if not doubled:
        return stepper.step(f, t, x, h, history)
    x_full, _, _ = stepper.step(f, t, x, h, history)
    x_half, _, _ = stepper.step(f, t, x, 0.5 * h, history)
    x_new, _, _ = stepper.step(f, t + 0.5 * h, x_half, 0.5 * h, history)
    err = (x_new - x_full) / (2.0 ** stepper.order - 1.0)
    return x_new, err, "doubled"


def integrate(stepper, f: Callable, t0: float, tf: float, x0, ctrl: StepControl,
              history: SolutionHistory | None = None):
    """Advance ``x' = f(t, x)`` from ``t0`` to exactly ``tf``.

    Adaptive mode rejects steps whose WRMS error norm exceeds 1 and rescales
    ``h`` by ``clamp(safety * err^(-1/(p+1)), 0.2, 5)``, where ``p`` is the
    embedded order.  One-step methods without an embedded pair estimate the
    error by step doubling (``p`` = method order).

    Returns ``(x_final, history, stats)``.
    """
    if isinstance(stepper, str):
        stepper = make_stepper(stepper)
    if not tf > t0:
        raise ValueError("tf must exceed t0")
    if history is None:
        history = SolutionHistory()
    x = np.array(x0, dtype=np.float64).reshape(-1)
    t = float(t0)
    history.add(t, x, 0.0, "initial")
    stats = IntegrationStats()
    adaptive = ctrl.adaptive
    doubled = adaptive and stepper.embedded_order is None
    if doubled and stepper.multistep:
        raise ValueError(f"{stepper.name} has no error estimator; use fixed steps")
    p_hat = stepper.embedded_order if stepper.embedded_order is not None else stepper.order
    h = ctrl.dt_init
    while t < tf:
        remaining = tf - t
        landing = h >= remaining * (1.0 - 1e-10)
        if landing:
            h = remaining
        try:
            x_new, err, status = _attempt(stepper, f, t, x, h, history, doubled)
        except StepFailure as exc:
            stats.failed_solves += 1
            stats.rejected += 1
            h *= 0.5
            if h < ctrl.dt_min:
                raise StepSizeError(f"step size {h:.3e} below dt_min at t={t:.6g}: {exc}") from exc
            continue
        if adaptive:
            en = ctrl.error_norm(err, x, x_new)
            fac = ctrl.factor(en, p_hat) if math.isfinite(en) else ctrl.min_factor
            if not en <= 1.0:
                stats.rejected += 1
                h *= fac
                if h < ctrl.dt_min:
                    raise StepSizeError(
                        f"step size {h:.3e} below dt_min={ctrl.dt_min:.3e} at t={t:.6g} "
                        f"(error norm {en:.3e})")
                continue
            stats.error_norms.append(en)
        t_new = tf if landing else t + h
        history.add(t_new, x_new, h, status)
        stats.accepted += 1
        t, x = t_new, x_new
        if adaptive:
            h = min(h * fac, ctrl.dt_max)
            h = max(h, ctrl.dt_min)
    return x, history, stats


def replay(history: SolutionHistory, stepper, f: Callable) -> list[np.ndarray]:
    """Recompute the stored trajectory with the recorded step sizes.

    Starts from the oldest retained entry.  Multistep methods are restarted
    from the retained points, so their first replayed step must be a
    recorded ``'bdf2'`` step preceded by at least one retained point.
    """
    if isinstance(stepper, str):
        stepper = make_stepper(stepper)
    entries = list(history)
    replayed = SolutionHistory(max(3, len(entries) + 1))
    replayed.add(entries[0].t, entries[0].x, entries[0].dt, entries[0].status)
    out = [entries[0].x.copy()]
    x = entries[0].x
    for e in entries[1:]:
        prev_t = replayed[-1].t
        x, _, _ = _attempt(stepper, f, prev_t, x, e.dt, replayed, e.status == "doubled")
        replayed.add(e.t, x, e.dt, e.status)
        out.append(x)
    return out


def order_verify(stepper, f: Callable, x0, t0: float, tf: float, exact: Callable,
                 step_sizes) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    ``error`` is the max-norm difference from ``exact(tf)`` after fixed
    steps of each size (each size should divide ``tf - t0``).
    """
    hs = np.asarray(step_sizes, dtype=np.float64)
    if hs.size < 3:
        raise ValueError("need at least three step sizes")
    ratios = hs[1:] / hs[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-8):
        raise ValueError("step sizes must form a geometric sequence")
    errs = []
    ref = np.asarray(exact(tf), dtype=np.float64).reshape(-1)
    for h in hs:
        x, _, _ = integrate(stepper, f, t0, tf, x0, StepControl(dt_init=float(h), dt_min=float(h) * 1e-3),
                            SolutionHistory(3))
        errs.append(float(np.max(np.abs(x - ref))))
    errs = np.asarray(errs)
    if np.any(errs <= 0):
        raise ValueError("zero error: the method is exact on this problem")
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
