"""Forward-mode automatic differentiation with fixed-width tangent batches.

A ``Dual`` carries a scalar value (float or complex) together with a
tangent row of ``width`` directional derivatives, so one sweep through
the pipeline propagates derivatives with respect to up to ``width``
parameters at once.  All arithmetic follows the chain rule exactly; the
geometry and field code is written against plain operators plus the
dispatching helpers below, so the same code path runs on floats and on
Duals.

Only operations that are actually needed by the tracer are provided.
Values may be complex; every formula used downstream is analytic in its
complex inputs (no conjugation), so complex tangents follow the same
product/quotient/chain rules.
"""

from __future__ import annotations

import math
import cmath

import numpy as np

from .specfun import transition_function, transition_derivative

__all__ = [
    "Dual", "seed", "value_of", "tangent_of", "is_dual",
    "d_sqrt", "d_exp", "d_cos", "d_sin", "d_atan2", "d_abs",
    "d_transition", "d_real", "d_imag", "d_conj_free_abs2", "d_sigmoid",
]


class Dual:
    __slots__ = ("val", "tan")

    def __init__(self, val, tan):
        self.val = val
        self.tan = np.asarray(tan)

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def lift(x, width):
        if isinstance(x, Dual):
            return x
        return Dual(x, np.zeros(width))

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val + o.val, self.tan + o.tan)
        return Dual(self.val + o, self.tan)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val - o.val, self.tan - o.tan)
        return Dual(self.val - o, self.tan)

    def __rsub__(self, o):
        return Dual(o - self.val, -self.tan)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val * o.val, self.tan * o.val + self.val * o.tan)
        return Dual(self.val * o, self.tan * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            inv = 1.0 / o.val
            return Dual(self.val * inv, (self.tan - (self.val * inv) * o.tan) * inv)
        return Dual(self.val / o, self.tan / o)

    def __rtruediv__(self, o):
        inv = 1.0 / self.val
        return Dual(o * inv, -(o * inv * inv) * self.tan)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("Dual ** requires a plain exponent")
        v = self.val ** p
        return Dual(v, p * self.val ** (p - 1) * self.tan)

    # -- comparisons use the primal value only ----------------------------------
    def __lt__(self, o):
        return self.val < _val(o)

    def __le__(self, o):
        return self.val <= _val(o)

    def __gt__(self, o):
        return self.val > _val(o)

    def __ge__(self, o):
        return self.val >= _val(o)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.tan!r})"


def _val(x):
    return x.val if isinstance(x, Dual) else x


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def seed(value: float, index: int, width: int) -> Dual:
    """A Dual seeded as the ``index``-th of ``width`` independent parameters."""
    t = np.zeros(width)
    t[index] = 1.0
    return Dual(value, t)


def value_of(x):
    return x.val if isinstance(x, Dual) else x


def tangent_of(x, width: int):
    if isinstance(x, Dual):
        return x.tan
    return np.zeros(width)


# -- dispatching elementary functions (float | complex | Dual) -----------------

def d_sqrt(x):
    if isinstance(x, Dual):
        r = cmath.sqrt(x.val) if isinstance(x.val, complex) else math.sqrt(x.val)
        return Dual(r, x.tan / (2.0 * r))
    if isinstance(x, complex):
        return cmath.sqrt(x)
    return math.sqrt(x)


def d_exp(x):
    if isinstance(x, Dual):
        r = cmath.exp(x.val) if isinstance(x.val, complex) else math.exp(x.val)
        return Dual(r, r * x.tan)
    if isinstance(x, complex):
        return cmath.exp(x)
    return math.exp(x)


def d_cos(x):
    if isinstance(x, Dual):
        return Dual(math.cos(x.val), -math.sin(x.val) * x.tan)
    return math.cos(x)


def d_sin(x):
    if isinstance(x, Dual):
        return Dual(math.sin(x.val), math.cos(x.val) * x.tan)
    return math.sin(x)


def d_atan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        yv, xv = _val(y), _val(x)
        denom = xv * xv + yv * yv
        ty = y.tan if isinstance(y, Dual) else 0.0
        tx = x.tan if isinstance(x, Dual) else 0.0
        return Dual(math.atan2(yv, xv), (xv * ty - yv * tx) / denom)
    return math.atan2(y, x)


def d_abs(x):
    """|x| for real inputs (sign-based derivative; do not call at 0)."""
    if isinstance(x, Dual):
        s = 1.0 if x.val >= 0 else -1.0
        return Dual(abs(x.val), s * x.tan)
    return abs(x)


def d_real(x):
    if isinstance(x, Dual):
        return Dual(x.val.real if isinstance(x.val, complex) else x.val,
                    x.tan.real if np.iscomplexobj(x.tan) else x.tan)
    return x.real if isinstance(x, complex) else x


def d_imag(x):
    if isinstance(x, Dual):
        return Dual(x.val.imag if isinstance(x.val, complex) else 0.0,
                    x.tan.imag if np.iscomplexobj(x.tan) else np.zeros_like(x.tan))
    return x.imag if isinstance(x, complex) else 0.0


def d_conj_free_abs2(x):
    """|x|^2 for complex x, differentiated as Re^2 + Im^2 (real-valued output)."""
    re, im = d_real(x), d_imag(x)
    return re * re + im * im


def d_sigmoid(x):
    if isinstance(x, Dual):
        v = 1.0 / (1.0 + math.exp(-x.val))
        return Dual(v, v * (1.0 - v) * x.tan)
    return 1.0 / (1.0 + math.exp(-x))


def d_transition(x):
    """Transition function F with the closed-form derivative chain rule."""
    if isinstance(x, Dual):
        xv = max(x.val, 0.0)
        f = transition_function(xv)
        if xv == 0.0:
            # F ~ sqrt(pi x) near 0: one-sided derivative is unbounded; a
            # zero tangent is the least-bad frozen-topology convention and
            # is only reachable when a boundary is hit exactly.
            return Dual(f, np.zeros_like(x.tan) * (1 + 0j))
        df = transition_derivative(xv)
        return Dual(f, df * x.tan)
    return transition_function(max(x, 0.0))
