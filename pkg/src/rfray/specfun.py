"""Special functions for edge transition physics.

The key object is the transition function

    F(x) = 2j sqrt(x) e^{jx} \int_{sqrt(x)}^inf e^{-j tau^2} dtau ,   x >= 0,

which ramps smoothly from F(0) = 0 to F(x -> inf) = 1 and carries the
Fresnel-integral behaviour of fields near shadow and reflection
boundaries.  Writing the tail integral through the complementary error
function of a complex argument,

    \int_{sqrt(x)}^inf e^{-j tau^2} dtau
        = e^{-j pi/4} (sqrt(pi)/2) erfc(e^{j pi/4} sqrt(x)),

and using erfc(z) = exp(-z^2) w(jz) with the Faddeeva function w, the
oscillatory prefactor e^{jx} cancels exactly:

    F(x) = sqrt(pi x) e^{j pi/4} w(e^{3j pi/4} sqrt(x)).

This form is uniformly accurate for all x >= 0 (no large-phase
evaluation, no cancellation), so it is what we evaluate.  scipy's
``wofz`` implements w(z) to close to machine precision.

Derivative (from the product rule and d/dx of the tail integral):

    F'(x) = F(x)/(2x) + j (F(x) - 1),

valid for x > 0.  Small-x behaviour F ~ sqrt(pi x) e^{j pi/4} - 2jx,
large-x behaviour F ~ 1 + j/(2x) - 3/(4x^2) - 15j/(8x^3) + O(x^-4).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.special as _sc

_SQRT_PI = np.sqrt(np.pi)
_EXP_J_PI_4 = np.exp(1j * np.pi / 4)
_EXP_3J_PI_4 = np.exp(3j * np.pi / 4)


def complex_erfc(z):
    """erfc for complex argument via the Faddeeva function.

    erfc(z) = exp(-z^2) w(jz) for Re z >= 0; the reflection
    erfc(-z) = 2 - erfc(z) covers the left half plane without
    triggering overflow in exp(-z^2).
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    right = z.real >= 0.0
    zr = np.where(right, z, -z)
    out[...] = np.exp(-zr * zr) * _sc.wofz(1j * zr)
    out = np.where(right, out, 2.0 - out)
    if out.ndim == 0:
        return complex(out)
    return out


def fresnel_tail(x):
    """Tail integral \int_{sqrt(x)}^inf e^{-j tau^2} dtau for x >= 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("fresnel_tail requires x >= 0")
    s = np.sqrt(x)
    out = np.exp(-1j * np.pi / 4) * (_SQRT_PI / 2.0) * np.exp(-1j * x) * _sc.wofz(_EXP_3J_PI_4 * s)
    if out.ndim == 0:
        return complex(out)
    return out


def transition_function(x):
    """Transition function F(x), x >= 0.  F(0) = 0, F(inf) = 1, |F| <= 1."""
    if isinstance(x, float) or isinstance(x, int):
        if x < 0:
            raise ValueError("transition_function requires x >= 0")
        s = math.sqrt(x)
        return complex(_SQRT_PI * s * _EXP_J_PI_4 * _sc.wofz(_EXP_3J_PI_4 * s))
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("transition_function requires x >= 0")
    s = np.sqrt(x)
    out = _SQRT_PI * s * _EXP_J_PI_4 * _sc.wofz(_EXP_3J_PI_4 * s)
    if out.ndim == 0:
        return complex(out)
    return out


def transition_derivative(x):
    """dF/dx in closed form, x > 0.

    F'(x) = F(x)/(2x) + j(F(x) - 1).  Checked against central finite
    differences of transition_function in the test suite.
    """
    if isinstance(x, float) or isinstance(x, int):
        if x <= 0:
            raise ValueError("transition_derivative requires x > 0")
        f = transition_function(x)
        return f / (2.0 * x) + 1j * (f - 1.0)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("transition_derivative requires x > 0")
    f = transition_function(x)
    out = f / (2.0 * x) + 1j * (f - 1.0)
    if np.ndim(out) == 0:
        return complex(out)
    return out
