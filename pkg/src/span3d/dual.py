"""Forward-mode dual scalars and scalar-generic math helpers.

The loss code in :mod:`span3d.losses` is written against the helpers in this
module (``sin``, ``cos``, ``smin``, ...) so the same expressions evaluate on
plain floats, on :class:`DualScalar` (value + gradient) and on ``mpmath.mpf``
(the high-precision finite-difference oracle).
"""

from __future__ import annotations

import math
from typing import Sequence

import mpmath

N_PARAMS = 7
PARAM_NAMES = ("cx", "cy", "cz", "l", "h", "w", "ry")

# Relative tolerance for declaring two candidate extrema tied.
TIE_TOL = 1e-12
# Two tied candidates only matter if their derivatives disagree.
_DERIV_TOL = 1e-9


class DualScalar:
    """Value plus a vector of partial derivatives.

    ``tie`` is sticky: it is set when a ``smin``/``smax`` reduction had to
    choose between candidates whose values agree within ``TIE_TOL`` but whose
    derivatives differ, i.e. the result sits on a kink and the reported
    derivative is a one-sided subgradient.
    """

    __slots__ = ("value", "deriv", "tie")

    def __init__(self, value: float, deriv: Sequence[float], tie: bool = False):
        self.value = float(value)
        self.deriv = tuple(deriv)
        self.tie = tie

    @classmethod
    def constant(cls, value: float, n: int = N_PARAMS) -> "DualScalar":
        return cls(value, (0.0,) * n)

    @classmethod
    def variable(cls, value: float, index: int, n: int = N_PARAMS) -> "DualScalar":
        d = [0.0] * n
        d[index] = 1.0
        return cls(value, d)

    def _lift(self, other) -> "DualScalar":
        if isinstance(other, DualScalar):
            return other
        return DualScalar(other, (0.0,) * len(self.deriv))

    def __repr__(self) -> str:
        return f"DualScalar({self.value!r}, {list(self.deriv)!r}, tie={self.tie})"

    def __add__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(
                self.value + other.value,
                [a + b for a, b in zip(self.deriv, other.deriv)],
                self.tie or other.tie,
            )
        return DualScalar(self.value + other, self.deriv, self.tie)

    __radd__ = __add__

    def __neg__(self):
        return DualScalar(-self.value, [-a for a in self.deriv], self.tie)

    def __sub__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(
                self.value - other.value,
                [a - b for a, b in zip(self.deriv, other.deriv)],
                self.tie or other.tie,
            )
        return DualScalar(self.value - other, self.deriv, self.tie)

    def __rsub__(self, other):
        return DualScalar(other - self.value, [-a for a in self.deriv], self.tie)

    def __mul__(self, other):
        if isinstance(other, DualScalar):
            u, v = self.value, other.value
            return DualScalar(
                u * v,
                [u * b + v * a for a, b in zip(self.deriv, other.deriv)],
                self.tie or other.tie,
            )
        return DualScalar(self.value * other, [a * other for a in self.deriv], self.tie)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualScalar):
            v = other.value
            q = self.value / v
            return DualScalar(
                q,
                [(a - q * b) / v for a, b in zip(self.deriv, other.deriv)],
                self.tie or other.tie,
            )
        return DualScalar(self.value / other, [a / other for a in self.deriv], self.tie)

    def __rtruediv__(self, other):
        q = other / self.value
        return DualScalar(q, [-q * a / self.value for a in self.deriv], self.tie)

    def __abs__(self):
        if self.value < 0.0:
            return -self
        if self.value == 0.0 and any(a != 0.0 for a in self.deriv):
            return DualScalar(0.0, self.deriv, True)
        return self

    # comparisons look at the value only
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __float__(self):
        return self.value

    def sin(self):
        c = math.cos(self.value)
        return DualScalar(math.sin(self.value), [c * a for a in self.deriv], self.tie)

    def cos(self):
        s = -math.sin(self.value)
        return DualScalar(math.cos(self.value), [s * a for a in self.deriv], self.tie)

    def sqrt(self):
        r = math.sqrt(self.value)
        return DualScalar(r, [a / (2.0 * r) for a in self.deriv], self.tie)

    def log(self):
        return DualScalar(math.log(self.value), [a / self.value for a in self.deriv], self.tie)


def _val(x) -> float:
    return x.value if isinstance(x, DualScalar) else x


def value_of(x) -> float:
    """Plain float value of any supported scalar."""
    return float(_val(x))


def sin(x):
    if isinstance(x, DualScalar):
        return x.sin()
    if isinstance(x, mpmath.mpf):
        return mpmath.sin(x)
    return math.sin(x)


def cos(x):
    if isinstance(x, DualScalar):
        return x.cos()
    if isinstance(x, mpmath.mpf):
        return mpmath.cos(x)
    return math.cos(x)


def sqrt(x):
    if isinstance(x, DualScalar):
        return x.sqrt()
    if isinstance(x, mpmath.mpf):
        return mpmath.sqrt(x)
    return math.sqrt(x)


def log(x):
    if isinstance(x, DualScalar):
        return x.log()
    if isinstance(x, mpmath.mpf):
        return mpmath.log(x)
    return math.log(x)


def fabs(x):
    return abs(x)


def _material_tie(best: DualScalar, cand) -> bool:
    bv = best.value
    cv = _val(cand)
    if abs(cv - bv) > TIE_TOL * max(1.0, abs(bv)):
        return False
    cd = cand.deriv if isinstance(cand, DualScalar) else (0.0,) * len(best.deriv)
    scale = 1.0 + max(abs(a) for a in best.deriv)
    return any(abs(a - b) > _DERIV_TOL * scale for a, b in zip(best.deriv, cd))


def _reduce(args, better):
    if len(args) == 1 and not isinstance(args[0], (DualScalar, float, int, mpmath.mpf)):
        args = tuple(args[0])
    best = args[0]
    for a in args[1:]:
        # strict comparison: the first candidate wins exact ties
        if better(_val(a), _val(best)):
            best = a
    if not any(isinstance(a, DualScalar) for a in args):
        return best
    if not isinstance(best, DualScalar):
        n = next(len(a.deriv) for a in args if isinstance(a, DualScalar))
        best = DualScalar(best, (0.0,) * n)
    tie = best.tie or any(a.tie for a in args if isinstance(a, DualScalar))
    if not tie:
        tie = any(a is not best and _material_tie(best, a) for a in args)
    if tie != best.tie:
        best = DualScalar(best.value, best.deriv, tie)
    return best


def smin(*args):
    """Minimum with first-argument tie-breaking and dual tie detection."""
    return _reduce(args, lambda a, b: a < b)


def smax(*args):
    """Maximum with first-argument tie-breaking and dual tie detection."""
    return _reduce(args, lambda a, b: a > b)
