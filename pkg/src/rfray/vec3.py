"""3-vector helpers generic over float and Dual components.

Vectors are plain tuples (x, y, z).  Components may be floats or
``dual.Dual`` scalars; every helper is written with operators only, so
the same code propagates tangents when fed Duals.  numpy arrays of
shape (3,) also work for the float case.
"""

from __future__ import annotations

from .dual import d_sqrt, value_of

__all__ = [
    "v3", "vadd", "vsub", "vscale", "vdot", "vcross", "vnorm",
    "vnormalize", "vdist", "vlerp", "vfloat",
]


def v3(x, y, z):
    return (x, y, z)


def vadd(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vscale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


def vdot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def vcross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def vnorm(a):
    return d_sqrt(vdot(a, a))


def vnormalize(a):
    n = vnorm(a)
    return (a[0] / n, a[1] / n, a[2] / n)


def vdist(a, b):
    return vnorm(vsub(a, b))


def vlerp(a, b, t):
    return vadd(a, vscale(vsub(b, a), t))


def vfloat(a):
    """Strip tangents: the primal (float) vector."""
    return (value_of(a[0]), value_of(a[1]), value_of(a[2]))
