"""Forward-mode automatic differentiation with dual numbers.

A :class:`Dual` carries a value and a gradient array of length ``m`` fixed
at seeding time.  The elementary functions below accept plain floats too,
so a function written against this module evaluates identically on reals
and on duals.
"""

from __future__ import annotations

import math
import operator
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Dual",
    "DimensionMismatchError",
    "seed",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "arctan",
    "sinh",
    "cosh",
    "power",
    "jacobian",
    "value_and_jacobian",
    "directional_derivative",
]


class DimensionMismatchError(ValueError):
    pass


class Dual:
    """Value ``v`` with derivative components ``d``."""

    __slots__ = ("v", "d")

    def __init__(self, v: float, d=None, m: int | None = None) -> None:
        self.v = float(v)
        if d is None:
            self.d = np.zeros(0 if m is None else m)
        else:
            self.d = np.asarray(d, dtype=np.float64).reshape(-1)

    @property
    def dim(self) -> int:
        return self.d.size

    def __repr__(self) -> str:
        return f"Dual({self.v!r}, {self.d.tolist()!r})"

    # -- helpers -----------------------------------------------------------
    def _other(self, b) -> "Dual":
        if isinstance(b, Dual):
            if b.d.size != self.d.size:
                raise DimensionMismatchError(
                    f"derivative dimensions differ: {self.d.size} vs {b.d.size}")
            return b
        if isinstance(b, (int, float, np.integer, np.floating)):
            return Dual(b, np.zeros(self.d.size))
        return NotImplemented

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, b):
        b = self._other(b)
        if b is NotImplemented:
            return b
        return Dual(self.v + b.v, self.d + b.d)

    __radd__ = __add__

    def __sub__(self, b):
        b = self._other(b)
        if b is NotImplemented:
            return b
        return Dual(self.v - b.v, self.d - b.d)

    def __rsub__(self, a):
        a = self._other(a)
        if a is NotImplemented:
            return a
        return a - self

    def __mul__(self, b):
        b = self._other(b)
        if b is NotImplemented:
            return b
        return Dual(self.v * b.v, b.v * self.d + self.v * b.d)

    __rmul__ = __mul__

    def __truediv__(self, b):
        b = self._other(b)
        if b is NotImplemented:
            return b
        if b.v == 0.0:
            raise ZeroDivisionError("division by a dual with zero value")
        q = self.v / b.v
        return Dual(q, (self.d - q * b.d) / b.v)

    def __rtruediv__(self, a):
        a = self._other(a)
        if a is NotImplemented:
            return a
        return a / self

    def __neg__(self):
        return Dual(-self.v, -self.d)

    def __pos__(self):
        return self

    def __abs__(self):
        if self.v == 0.0:
            return Dual(0.0, np.abs(self.d))
        return self if self.v > 0 else -self

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(p * log(self))
        return power(self, p)

    def __rpow__(self, a):
        return exp(self * math.log(a))

    # comparisons act on values, so branches in user code work
    def __lt__(self, b):
        return self.v < (b.v if isinstance(b, Dual) else b)

    def __le__(self, b):
        return self.v <= (b.v if isinstance(b, Dual) else b)

    def __gt__(self, b):
        return self.v > (b.v if isinstance(b, Dual) else b)

    def __ge__(self, b):
        return self.v >= (b.v if isinstance(b, Dual) else b)

    def __float__(self) -> float:
        return self.v

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        if any(isinstance(a, np.ndarray) and a.ndim > 0 for a in inputs):
            # elementwise over object arrays; numpy calls the python operators
            objs = []
            for a in inputs:
                if isinstance(a, Dual):
                    box = np.empty((), dtype=object)
                    box[()] = a
                    objs.append(box)
                else:
                    objs.append(np.asarray(a).astype(object))
            return ufunc(*objs)
        fn = _UFUNCS.get(ufunc)
        if fn is None:
            return NotImplemented
        args = [float(a) if isinstance(a, (np.floating, np.integer)) else a for a in inputs]
        return fn(*args)

    # method forms let numpy ufuncs act on object arrays of duals
    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def tan(self):
        return tan(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def arctan(self):
        return arctan(self)

    def sinh(self):
        return sinh(self)

    def cosh(self):
        return cosh(self)


def _unary(a, f: Callable[[float], float], df: Callable[[float], float]):
    if isinstance(a, Dual):
        return Dual(f(a.v), df(a.v) * a.d)
    return f(float(a))


def _check_domain(ok: bool, name: str, v) -> None:
    if not ok:
        raise ValueError(f"{name} is undefined at {float(v)!r}")


def sin(a):
    return _unary(a, math.sin, math.cos)


def cos(a):
    return _unary(a, math.cos, lambda v: -math.sin(v))


def tan(a):
    return _unary(a, math.tan, lambda v: 1.0 / math.cos(v) ** 2)


def exp(a):
    return _unary(a, math.exp, math.exp)


def tanh(a):
    return _unary(a, math.tanh, lambda v: 1.0 - math.tanh(v) ** 2)


def arctan(a):
    return _unary(a, math.atan, lambda v: 1.0 / (1.0 + v * v))


def sinh(a):
    return _unary(a, math.sinh, math.cosh)


def cosh(a):
    return _unary(a, math.cosh, math.sinh)


def log(a):
    v = a.v if isinstance(a, Dual) else a
    _check_domain(v > 0, "log", v)
    return _unary(a, math.log, lambda v: 1.0 / v)


def sqrt(a):
    v = a.v if isinstance(a, Dual) else a
    if isinstance(a, Dual):
        _check_domain(v > 0, "sqrt derivative", v)
    else:
        _check_domain(v >= 0, "sqrt", v)
    return _unary(a, math.sqrt, lambda v: 0.5 / math.sqrt(v))


def power(a, p: float):
    """``a ** p`` for a real exponent ``p``."""
    v = a.v if isinstance(a, Dual) else float(a)
    if v == 0.0 and p < 1 and p != 0:
        raise ValueError(f"pow derivative undefined at 0 for exponent {p}")
    if v < 0 and float(p) != int(p):
        raise ValueError(f"non-integer power {p} of negative value {v}")
    return _unary(a, lambda x: x ** p, lambda x: p * x ** (p - 1) if p != 0 else 0.0)


_UFUNCS = {
    np.add: operator.add,
    np.subtract: operator.sub,
    np.multiply: operator.mul,
    np.true_divide: operator.truediv,
    np.negative: operator.neg,
    np.power: operator.pow,
    np.absolute: operator.abs,
    np.sin: sin,
    np.cos: cos,
    np.tan: tan,
    np.exp: exp,
    np.log: log,
    np.sqrt: sqrt,
    np.tanh: tanh,
    np.arctan: arctan,
    np.sinh: sinh,
    np.cosh: cosh,
}


def seed(x: Sequence[float], directions=None) -> np.ndarray:
    """Object array of duals ``x_i`` with derivative ``e_i``.

    ``directions`` (``n x m``) replaces the identity seeds, e.g. a single
    column ``v`` for a directional derivative.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    D = np.eye(x.size) if directions is None else np.asarray(directions, dtype=np.float64)
    D = D.reshape(x.size, -1)
    out = np.empty(x.size, dtype=object)
    for i, xi in enumerate(x):
        out[i] = Dual(xi, D[i])
    return out


def value_and_jacobian(F: Callable, x) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``F`` once on seeded duals; returns ``(F(x), J)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = x.size
    out = F(seed(x))
    if isinstance(out, (Dual, int, float, np.floating)):
        out = [out]
    out = list(np.asarray(out, dtype=object).reshape(-1))
    vals = np.empty(len(out))
    J = np.zeros((len(out), n))
    for i, y in enumerate(out):
        if isinstance(y, Dual):
            if y.d.size != n:
                raise DimensionMismatchError(f"output {i} has derivative dimension {y.d.size}")
            vals[i] = y.v
            J[i] = y.d
        else:  # output independent of x
            vals[i] = float(y)
    return vals, J


def jacobian(F: Callable, x) -> np.ndarray:
    """``n_out x n`` Jacobian of ``F`` at ``x`` by one dual evaluation."""
    return value_and_jacobian(F, x)[1]


def directional_derivative(F: Callable, x, v) -> np.ndarray:
    """``J(x) v`` using a single derivative component."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    out = np.asarray(F(seed(x, np.asarray(v, dtype=np.float64).reshape(-1, 1))),
                     dtype=object).reshape(-1)
    return np.array([y.d[0] if isinstance(y, Dual) else 0.0 for y in out])
