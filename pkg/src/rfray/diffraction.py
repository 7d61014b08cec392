"""Wedge diffraction: Fermat edge points, edge-frame angles, the
four-term uniform diffraction coefficient, and the transition weight
factors that keep path sums continuous across visibility boundaries.

Angle conventions (standard exterior-wedge setup): for a wedge whose
free-space region spans the dihedral ``alpha`` = nu * pi, angles phi
(observation) and phi' (source) are measured from the 0-face direction
``t0`` rotating towards the face normal ``n0``, so both lie in
[0, alpha].  beta- = phi - phi', beta+ = phi + phi'.  The direct ray is
shadowed for |beta-| > pi (incidence shadow boundary at pi) and the
0-face specular reflection exists for beta+ < pi (reflection boundary
at pi).

The diffraction coefficient is the Kouyoumjian-Pathak form

    D = -e^{-j pi/4} / (2 nu sqrt(2 pi k) sin(beta0)) *
        [ cot((pi + b-)/(2 nu)) F(k L a+(b-))
        + cot((pi - b-)/(2 nu)) F(k L a-(b-))
        + Rn cot((pi + b+)/(2 nu)) F(k L a+(b+))
        + R0 cot((pi - b+)/(2 nu)) F(k L a-(b+)) ]

with a+-(b) = 2 cos^2((2 pi nu N+- - b)/2), N+- the integers nearest
(b +- pi)/(2 pi nu), L = s s' sin^2(beta0)/(s + s'), and R0/Rn the face
reflection coefficients (-1 and +1 reproduce the perfectly conducting
soft/hard cases).  Every cot * F pair is finite at its boundary; the
residual jump there is exactly what cancels the transition-weighted
geometric term, which is how the engine keeps |E| continuous.

Weight factors: on the lit side of a boundary a path hop is scaled by
F(x); past the boundary the (preserved) path is scaled by F(x) - 1.
Both tend to their binary values away from the boundary, and the jump
0 -> -1 at the boundary is cancelled by the companion diffraction
path's own jump.

All scalar math here is generic over floats and Duals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import (Dual, d_sqrt, d_cos, d_sin, d_atan2, d_transition,
                   value_of)
from .vec3 import vadd, vsub, vscale, vdot, vcross, vnorm, vnormalize
from .geometry import Wedge, Mesh

__all__ = [
    "WedgeFrame", "DiffractionGeometry", "DegenerateGeometry",
    "wedge_frame", "diffraction_point", "diffraction_geometry",
    "a_plus", "a_minus", "utd_coefficient", "diffracted_field",
    "transition_factor", "boundary_factor",
]

_PREF = -complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))  # -e^{-j pi/4}


class DegenerateGeometry(ValueError):
    """Raised when a diffraction configuration has no usable geometry
    (endpoint on the edge line, zero-length edge, ...)."""


@dataclass
class WedgeFrame:
    """Edge frame rebuilt from (possibly Dual) vertex positions."""

    e0: tuple
    e1: tuple
    ehat: tuple                # unit edge direction
    t0: tuple                  # unit, from edge into face a
    n0: tuple                  # unit normal of face a
    length: object             # scalar
    alpha: object              # free-space dihedral, scalar
    wedge: Wedge | None = None

    @property
    def nu(self):
        return self.alpha / math.pi


@dataclass
class DiffractionGeometry:
    frame: WedgeFrame
    t_d: object                # arc-length parameter along the edge, [0, length]
    p_d: tuple                 # diffraction point
    phi: object                # observation angle in [0, alpha]
    phi_prime: object          # source angle in [0, alpha]
    s: object                  # p_d -> observer distance
    s_prime: object            # source -> p_d distance
    sin_beta0: object          # edge skew angle of the incident ray
    clamped: bool              # Fermat point pinned to an edge endpoint


def _perp(v, axis):
    return vsub(v, vscale(axis, vdot(v, axis)))


def wedge_frame(wedge: Wedge, mesh: Mesh, vertices=None) -> WedgeFrame:
    """The wedge's edge frame, from ``vertices`` when differentiating
    (a sequence indexable by vertex id yielding 3-tuples) or from the
    mesh's float vertices otherwise.  Reproduces the canonical
    orientation chosen at extraction time."""
    if vertices is None:
        vertices = mesh.vertices
        e0 = tuple(vertices[wedge.iv0])
        e1 = tuple(vertices[wedge.iv1])
    else:
        e0 = vertices[wedge.iv0]
        e1 = vertices[wedge.iv1]
    edge = vsub(e1, e0)
    length = vnorm(edge)
    if value_of(length) < 1e-15:
        raise DegenerateGeometry("zero-length wedge edge")
    ehat = vscale(edge, 1.0 / length)

    def tri_pts(t):
        ids = mesh.triangles[t]
        if vertices is mesh.vertices:
            return tuple(tuple(vertices[i]) for i in ids)
        return tuple(vertices[i] for i in ids)

    va, vb, vc = tri_pts(wedge.tri_a)
    apex_ids = [i for i in mesh.triangles[wedge.tri_a] if i not in (wedge.iv0, wedge.iv1)]
    apex = (vertices[apex_ids[0]] if vertices is not mesh.vertices
            else tuple(vertices[apex_ids[0]]))
    t0 = _perp(vsub(apex, e0), ehat)
    t0n = vnorm(t0)
    if value_of(t0n) < 1e-15:
        raise DegenerateGeometry("degenerate face on wedge")
    t0 = vscale(t0, 1.0 / t0n)
    n0 = vcross(vsub(vb, va), vsub(vc, va))
    n0 = _perp(n0, ehat)
    n0 = vscale(n0, 1.0 / vnorm(n0))
    if value_of(vdot(vcross(t0, n0), ehat)) < 0:
        ehat = vscale(ehat, -1.0)
        e0, e1 = e1, e0

    if wedge.tri_b is None:
        alpha = 2.0 * math.pi
    else:
        apex_b_ids = [i for i in mesh.triangles[wedge.tri_b]
                      if i not in (wedge.iv0, wedge.iv1)]
        apex_b = (vertices[apex_b_ids[0]] if vertices is not mesh.vertices
                  else tuple(vertices[apex_b_ids[0]]))
        tb = _perp(vsub(apex_b, e0), ehat)
        tb = vscale(tb, 1.0 / vnorm(tb))
        ang = d_atan2(vdot(tb, n0), vdot(tb, t0))
        if value_of(ang) <= 0.0:
            ang = ang + 2.0 * math.pi
        alpha = ang
    return WedgeFrame(e0=e0, e1=e1, ehat=ehat, t0=t0, n0=n0,
                      length=length, alpha=alpha, wedge=wedge)


def diffraction_point(frame: WedgeFrame, src, obs):
    """Fermat (minimum total length) point on the edge segment.

    The unfolding closed form: with axial coordinates t_a, t_b and
    radial offsets rho_a, rho_b of the two endpoints, the interior
    stationary point is t* = (t_a rho_b + t_b rho_a)/(rho_a + rho_b),
    clamped to [0, length].  Returns (t, p_d, clamped).
    """
    ra = vsub(src, frame.e0)
    rb = vsub(obs, frame.e0)
    ta = vdot(ra, frame.ehat)
    tb = vdot(rb, frame.ehat)
    rho_a = vnorm(_perp(ra, frame.ehat))
    rho_b = vnorm(_perp(rb, frame.ehat))
    denom = rho_a + rho_b
    if value_of(denom) < 1e-14:
        raise DegenerateGeometry("both endpoints on the edge line")
    t = (ta * rho_b + tb * rho_a) / denom
    clamped = False
    if value_of(t) <= 0.0:
        t = 0.0 * t
        clamped = True
    elif value_of(t) >= value_of(frame.length):
        t = frame.length
        clamped = True
    p_d = vadd(frame.e0, vscale(frame.ehat, t))
    return t, p_d, clamped


def _wrap_angle(ang, alpha):
    """Map an atan2 result into [0, alpha], clamping material spill."""
    if value_of(ang) < 0.0:
        ang = ang + 2.0 * math.pi
    av = value_of(ang)
    al = value_of(alpha)
    if av > al:
        # inside the material sliver: snap to the nearer face
        if av - al <= (2.0 * math.pi - av):
            ang = alpha if isinstance(alpha, Dual) else al
        else:
            ang = 0.0
    return ang


def diffraction_geometry(frame: WedgeFrame, src, obs) -> DiffractionGeometry:
    """Full scalar geometry of a source-edge-observer configuration."""
    t, p_d, clamped = diffraction_point(frame, src, obs)
    d_in = vsub(p_d, src)
    s_prime = vnorm(d_in)
    d_out = vsub(obs, p_d)
    s = vnorm(d_out)
    if value_of(s_prime) < 1e-14 or value_of(s) < 1e-14:
        raise DegenerateGeometry("endpoint coincides with diffraction point")
    u = _perp(vsub(src, p_d), frame.ehat)
    un = vnorm(u)
    v = _perp(vsub(obs, p_d), frame.ehat)
    vn = vnorm(v)
    if value_of(un) < 1e-14 or value_of(vn) < 1e-14:
        raise DegenerateGeometry("endpoint on the edge line")
    phi_prime = _wrap_angle(d_atan2(vdot(u, frame.n0), vdot(u, frame.t0)),
                            frame.alpha)
    phi = _wrap_angle(d_atan2(vdot(v, frame.n0), vdot(v, frame.t0)),
                      frame.alpha)
    cosb = vdot(d_in, frame.ehat) / s_prime
    sin2 = 1.0 - cosb * cosb
    if value_of(sin2) < 1e-16:
        raise DegenerateGeometry("incident ray parallel to the edge")
    sin_beta0 = d_sqrt(sin2)
    return DiffractionGeometry(frame=frame, t_d=t, p_d=p_d, phi=phi,
                               phi_prime=phi_prime, s=s, s_prime=s_prime,
                               sin_beta0=sin_beta0, clamped=clamped)


# -- Kouyoumjian-Pathak pieces --------------------------------------------------

def a_plus(beta, nu):
    n = round((math.pi + value_of(beta)) / (2.0 * math.pi * value_of(nu)))
    c = d_cos((2.0 * math.pi * nu * n - beta) / 2.0)
    return 2.0 * c * c


def a_minus(beta, nu):
    n = round((value_of(beta) - math.pi) / (2.0 * math.pi * value_of(nu)))
    c = d_cos((2.0 * math.pi * nu * n - beta) / 2.0)
    return 2.0 * c * c


_POLE_TOL = 1e-9


def _cot_F(sign: int, beta, nu, kL):
    """cot((pi + sign*beta)/(2 nu)) * F(kL a_{sign}(beta)), finite at the
    boundary; evaluation exactly on a pole is nudged off by 1e-9 (the
    physical one-sided limits differ there, so the side is arbitrary)."""
    g = (math.pi + sign * beta) / (2.0 * nu)
    sg = d_sin(g)
    if abs(value_of(sg)) < _POLE_TOL:
        shift = 2.0 * value_of(nu) * _POLE_TOL * (1.0 if sign > 0 else -1.0)
        beta = beta + shift
        g = (math.pi + sign * beta) / (2.0 * nu)
        sg = d_sin(g)
    cot = d_cos(g) / sg
    a = a_plus(beta, nu) if sign > 0 else a_minus(beta, nu)
    return cot * d_transition(kL * a)


def utd_coefficient(phi, phi_prime, nu, L, k, r0=-1.0, rn=-1.0, sin_beta0=1.0):
    """Four-term uniform wedge diffraction coefficient.

    r0 and rn are the reflection coefficients of the 0-face and n-face
    for the active polarization (-1/+1 give the perfectly conducting
    soft/hard coefficients).  Finite at the optical boundaries.
    """
    if value_of(nu) <= 0:
        raise ValueError("wedge parameter nu must be > 0")
    if value_of(L) <= 0 or k <= 0:
        raise ValueError("L and k must be > 0")
    bm = phi - phi_prime
    bp = phi + phi_prime
    kL = k * L
    total = (_cot_F(+1, bm, nu, kL)
             + _cot_F(-1, bm, nu, kL)
             + rn * _cot_F(+1, bp, nu, kL)
             + r0 * _cot_F(-1, bp, nu, kL))
    pref = _PREF / (2.0 * nu * d_sqrt(2.0 * math.pi * k) * sin_beta0)
    return pref * total


def diffracted_field(geom: DiffractionGeometry, e_incident, k,
                     r0=-1.0, rn=-1.0):
    """Field of a diffracted ray at distance s past the edge:
    E_i * D * e^{-jks} / sqrt(s)."""
    L = geom.s * geom.s_prime * geom.sin_beta0 * geom.sin_beta0 / (geom.s + geom.s_prime)
    D = utd_coefficient(geom.phi, geom.phi_prime, geom.frame.nu, L, k,
                        r0=r0, rn=rn, sin_beta0=geom.sin_beta0)
    from .dual import d_exp
    phase = d_exp((-1j * k) * geom.s)
    return e_incident * D * phase / d_sqrt(geom.s)


# -- transition weights ----------------------------------------------------------

def transition_factor(x, lit: bool):
    """Per-boundary path weight: F(x) on the lit side, F(x) - 1 in shadow.

    Deep on the lit side the factor approaches 1; deep in shadow it
    decays like j/(2x).  The 0 -> -1 step at the boundary is cancelled
    by the companion diffraction path's own discontinuity.
    """
    f = d_transition(x)
    return f if lit else f - 1.0


def boundary_factor(geom: DiffractionGeometry, k, boundary: str):
    """(x, lit, factor) for a hop/segment relative to one wedge.

    boundary = "rb": the 0-face reflection boundary (beta+ = pi), used
    for reflection points near a face edge.  boundary = "isb": the
    incidence shadow boundary (|beta-| = pi), used for segments passing
    near a silhouette edge.
    """
    nu = geom.frame.nu
    L = geom.s * geom.s_prime * geom.sin_beta0 * geom.sin_beta0 / (geom.s + geom.s_prime)
    if boundary == "rb":
        beta = geom.phi + geom.phi_prime
    elif boundary == "isb":
        beta = geom.phi - geom.phi_prime
        if value_of(beta) < 0:
            beta = -beta
    else:
        raise ValueError("boundary must be 'rb' or 'isb'")
    x = k * L * a_minus(beta, nu)
    lit = value_of(beta) <= math.pi
    return x, lit, transition_factor(x, lit)
