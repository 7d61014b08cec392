"""Analytic parameter gradients of the traced field, with an FD oracle.

Forward-mode dual numbers ride through the whole geometric pipeline
(mirror points, Fermat points, transition arguments, Fresnel products),
so the analytic gradient of any engine output is the tangent of the same
computation with seeded parameters.  The discrete plan (path specs,
wedge assignments) is frozen at the evaluation point; contributions fade
smoothly instead of appearing or disappearing, which is what makes the
frozen-topology derivative meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import Dual, d_cos, d_sin, d_sqrt, value_of
from .engine import Scene, Plan, build_plan, evaluate_plan
from .field import accumulate_field
from .materials import Material
from .parallel import parallel_map
from .vec3 import v3, vadd, vcross, vdot, vscale, vfloat


class UnsupportedModeError(ValueError):
    """Raised when gradients are requested for a non-differentiable mode."""


class OracleFailureError(RuntimeError):
    """Raised when the finite-difference oracle hits a non-finite output."""


_DUAL_BATCH = 4                     # seed at most this many components at once


# -- parameter vectors -------------------------------------------------------------

def _select_active(full_names: tuple, defaults, active):
    """(names, values, full-layout indices) for the requested subset."""
    if active is None:
        idx = tuple(range(len(full_names)))
        return full_names, np.asarray(defaults, dtype=float), idx
    wanted = tuple(active)
    missing = [n for n in wanted if n not in full_names]
    if missing:
        raise ValueError(f"unknown parameter names {missing}")
    idx = tuple(full_names.index(n) for n in wanted)
    vals = np.asarray([defaults[i] for i in idx], dtype=float)
    return wanted, vals, idx


@dataclass
class ParamVector:
    """Named, flat, real parameter vector with a scene-update rule.

    kind selects how values map onto the scene:
      vertex_offsets  per-vertex xyz displacement added to mesh vertices
      rigid           translation xyz, rotation axis-angle xyz, scale
      txrx            endpoint xyz displacements (tx then rx)
      materials       absolute (eps_re, eps_im, sigma) per material name

    Constructors accept an optional subset of component names to keep
    active; inactive components hold their nominal values, so a single
    scalar handle like a rigid height is still a valid vector.
    """

    kind: str
    names: tuple
    values: np.ndarray
    vertex_ids: tuple = ()
    material_names: tuple = ()
    active_idx: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.names) != self.values.size:
            raise ValueError("layout names must match value slots")
        if len(set(self.names)) != len(self.names):
            raise ValueError("layout names must be unique")
        if not self.active_idx:
            self.active_idx = tuple(range(self.values.size))
        if self.kind == "rigid":
            rot = [self._full_value(i) for i in (3, 4, 5)]
            if math.sqrt(sum(r * r for r in rot)) >= math.pi:
                raise ValueError("rotation magnitude must stay below pi")

    def _full_defaults(self) -> list:
        if self.kind == "vertex_offsets":
            return [0.0] * (3 * len(self.vertex_ids))
        if self.kind == "rigid":
            return [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        if self.kind == "txrx":
            return [0.0] * 6
        return list(self._material_defaults)

    def _full_value(self, full_idx):
        if full_idx in self.active_idx:
            return self.values[self.active_idx.index(full_idx)]
        return self._full_defaults()[full_idx]

    def expand(self, values=None) -> list:
        """Full-layout values with active slots substituted."""
        vals = self.values if values is None else values
        full = self._full_defaults()
        for pos, fi in enumerate(self.active_idx):
            full[fi] = vals[pos]
        return full

    _material_defaults = ()

    @staticmethod
    def vertex_offsets(vertex_ids, active=None) -> "ParamVector":
        ids = tuple(int(i) for i in vertex_ids)
        full = tuple(f"v{i}.{ax}" for i in ids for ax in "xyz")
        names, vals, idx = _select_active(full, [0.0] * len(full), active)
        return ParamVector(kind="vertex_offsets", names=names, values=vals,
                           vertex_ids=ids, active_idx=idx)

    @staticmethod
    def rigid(active=None) -> "ParamVector":
        full = ("translation.x", "translation.y", "translation.z",
                "rotation.x", "rotation.y", "rotation.z", "scale")
        names, vals, idx = _select_active(
            full, [0, 0, 0, 0, 0, 0, 1.0], active)
        return ParamVector(kind="rigid", names=names, values=vals,
                           active_idx=idx)

    @staticmethod
    def txrx(active=None) -> "ParamVector":
        full = ("tx.x", "tx.y", "tx.z", "rx.x", "rx.y", "rx.z")
        names, vals, idx = _select_active(full, [0.0] * 6, active)
        return ParamVector(kind="txrx", names=names, values=vals,
                           active_idx=idx)

    @staticmethod
    def materials(scene: Scene, names, active=None) -> "ParamVector":
        mnames = tuple(names)
        table = dict(scene.materials)
        full, defaults = [], []
        for nm in mnames:
            m = table[nm]
            full += [f"{nm}.eps_re", f"{nm}.eps_im", f"{nm}.sigma"]
            defaults += [m.eps_re, m.eps_im, m.sigma]
        sel, vals, idx = _select_active(tuple(full), defaults, active)
        pv = ParamVector(kind="materials", names=sel, values=vals,
                         material_names=mnames, active_idx=idx)
        pv._material_defaults = tuple(defaults)
        return pv

    def replace_values(self, values) -> "ParamVector":
        pv = ParamVector(kind=self.kind, names=self.names,
                         values=np.asarray(values, dtype=float),
                         vertex_ids=self.vertex_ids,
                         material_names=self.material_names,
                         active_idx=self.active_idx)
        if self.kind == "materials":
            pv._material_defaults = self._material_defaults
        return pv


@dataclass
class GradientVector:
    """Flat real gradient matching a ParamVector layout."""

    names: tuple
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.names) != self.values.size:
            raise ValueError("layout mismatch between names and values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("gradient entries must be finite")

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


# -- theta -> scene overrides -------------------------------------------------------

def _rotate(vec, rot):
    """Rodrigues rotation, series-stabilized near zero angle."""
    th2 = vdot(rot, rot)
    if value_of(th2) < 1e-12:
        c1 = 1.0 - th2 / 6.0        # sin(t)/t
        c2 = 0.5 - th2 / 24.0       # (1-cos(t))/t^2
    else:
        th = d_sqrt(th2)
        c1 = d_sin(th) / th
        c2 = (1.0 - d_cos(th)) / th2
    cx = vcross(rot, vec)
    cxx = vcross(rot, cx)
    return vadd(vec, vadd(vscale(cx, c1), vscale(cxx, c2)))


def apply_params(scene: Scene, theta: ParamVector, values=None, rx=None):
    """Overrides for evaluate_plan produced from a parameter vector.

    values defaults to theta.values and may contain duals; rx is the
    nominal receiver (needed by the txrx kind).  Returns a dict with any
    of tx / rx / vertices / materials set.
    """
    vals = theta.expand(theta.values if values is None else values)
    out = {}
    if theta.kind == "vertex_offsets":
        verts = [v3(*scene.mesh.vertices[i])
                 for i in range(len(scene.mesh.vertices))]
        for slot, vid in enumerate(theta.vertex_ids):
            off = (vals[3 * slot], vals[3 * slot + 1], vals[3 * slot + 2])
            verts[vid] = vadd(verts[vid], off)
        out["vertices"] = verts
    elif theta.kind == "rigid":
        t = (vals[0], vals[1], vals[2])
        rot = (vals[3], vals[4], vals[5])
        s = vals[6]
        verts = []
        for i in range(len(scene.mesh.vertices)):
            p = vscale(v3(*scene.mesh.vertices[i]), s)
            verts.append(vadd(_rotate(p, rot), t))
        out["vertices"] = verts
    elif theta.kind == "txrx":
        out["tx"] = vadd(scene.tx, (vals[0], vals[1], vals[2]))
        if rx is None:
            raise ValueError("txrx parameters need the nominal receiver")
        out["rx"] = vadd(rx, (vals[3], vals[4], vals[5]))
    elif theta.kind == "materials":
        mats = {}
        for slot, nm in enumerate(theta.material_names):
            base = scene.materials[nm]
            mats[nm] = Material(name=nm, eps_re=vals[3 * slot],
                                eps_im=vals[3 * slot + 1],
                                mu_r=base.mu_r, sigma=vals[3 * slot + 2])
        out["materials"] = mats
    else:
        raise ValueError(f"unknown parameter kind {theta.kind!r}")
    return out


def _require_differentiable(scene: Scene):
    if scene.cfg.weight_mode.kind == "binary":
        raise UnsupportedModeError(
            "binary visibility weights have ill-defined gradients; "
            "use the transition or soft weight mode")


# -- forward evaluations ------------------------------------------------------------

def _seeded_values(theta: ParamVector, idxs):
    """theta.values with the chosen components carrying unit dual seeds."""
    width = len(idxs)
    vals = list(theta.values.astype(float))
    for lane, i in enumerate(idxs):
        tan = np.zeros(width)
        tan[lane] = 1.0
        vals[i] = Dual(vals[i], tan)
    return vals, width


def _field_with(scene: Scene, plan: Plan, theta: ParamVector, values, rx):
    over = apply_params(scene, theta, values=values, rx=rx)
    paths = evaluate_plan(scene, plan, rx=over.pop("rx", rx), **over)
    return accumulate_field(paths, scene.cfg)


def path_output_gradient(scene: Scene, plan: Plan, theta: ParamVector,
                         rx, component: int) -> list:
    """Per-path derivatives of (length, amplitude, weight) for one
    parameter component, as a list of dicts aligned with the planned
    evaluation order."""
    _require_differentiable(scene)
    vals, width = _seeded_values(theta, [component])
    over = apply_params(scene, theta, values=vals, rx=rx)
    paths = evaluate_plan(scene, plan, rx=over.pop("rx", rx), **over)
    out = []
    for p in paths:
        out.append({
            "kind": p.kind,
            "length": _tan1(p.length, width),
            "amplitude": _tan1(p.amplitude, width),
            "weight": _tan1(p.weight, width),
        })
    return out


def _tan1(x, width):
    if isinstance(x, Dual):
        return complex(np.ravel(np.asarray(x.tan))[0])
    return 0j


def field_gradient(scene: Scene, theta: ParamVector, rx,
                   plan: Plan | None = None):
    """(gradient of Re E, gradient of Im E) over all components of theta.

    Components are seeded in dual batches; the plan (discrete topology)
    is built once at the nominal point and held fixed.
    """
    _require_differentiable(scene)
    if plan is None:
        plan = build_plan(scene, vfloat(rx))
    n = theta.values.size
    g_re = np.zeros(n)
    g_im = np.zeros(n)
    for start in range(0, n, _DUAL_BATCH):
        idxs = list(range(start, min(start + _DUAL_BATCH, n)))
        vals, width = _seeded_values(theta, idxs)
        e = _field_with(scene, plan, theta, vals, rx)
        if isinstance(e, Dual):
            tans = np.asarray(e.tan).reshape(width)
            g_re[idxs] = tans.real
            g_im[idxs] = tans.imag
    return (GradientVector(theta.names, g_re),
            GradientVector(theta.names, g_im))


def fd_oracle(forward, theta: ParamVector, component: int,
              eps: float | None = None, scheme: str = "central"):
    """Finite-difference derivative of forward(theta) in one component.

    forward maps a ParamVector to a real or complex scalar.  central
    differences by default; the one-sided forward variant is available
    for comparison.  Non-finite forward outputs raise OracleFailureError.
    """
    x = float(theta.values[component])
    if eps is None:
        eps = 1e-6 * max(1.0, abs(x))
    if eps <= 0:
        raise ValueError("eps must be positive")

    def at(delta):
        vals = theta.values.copy()
        vals[component] = x + delta
        y = forward(theta.replace_values(vals))
        y = complex(y)
        if not (math.isfinite(y.real) and math.isfinite(y.imag)):
            raise OracleFailureError(
                f"forward output non-finite at component {component}, "
                f"offset {delta:+.3e}")
        return y

    if scheme == "central":
        d = (at(eps) - at(-eps)) / (2 * eps)
    elif scheme == "forward":
        d = (at(eps) - at(0.0)) / eps
    else:
        raise ValueError("scheme must be 'central' or 'forward'")
    return d if d.imag != 0 else d.real


def gradcheck(scene: Scene, theta: ParamVector, rx,
              tolerance: float = 1e-4, floor: float = 1e-9,
              plan: Plan | None = None) -> dict:
    """Compare analytic and FD gradients component-wise.

    Returns a machine-readable report; the overall 'ok' flag is false if
    any component's relative error exceeds the tolerance.  Components
    whose FD magnitude sits below the floor are compared absolutely
    against the same floor.
    """
    _require_differentiable(scene)
    if theta.values.size > 64:
        raise ValueError("gradcheck accepts at most 64 components")
    if plan is None:
        plan = build_plan(scene, vfloat(rx))

    def forward(th):
        return complex(value_of(_field_with(scene, plan, th, th.values, rx)))

    g_re, g_im = field_gradient(scene, theta, rx, plan=plan)
    comps = []
    ok = True
    for i, name in enumerate(theta.names):
        fd = complex(fd_oracle(forward, theta, i))
        an = complex(g_re.values[i], g_im.values[i])
        scale = max(abs(fd), floor)
        rel = abs(an - fd) / scale
        passed = bool(rel <= tolerance)
        ok = ok and passed
        comps.append({
            "name": name,
            "analytic": [an.real, an.imag],
            "fd": [fd.real, fd.imag],
            "rel_err": rel,
            "pass": passed,
        })
    return {
        "components": comps,
        "mode": scene.cfg.weight_mode.kind,
        "tolerances": {"rel": tolerance, "floor": floor},
        "ok": ok,
    }


def render_field_gradient(scene: Scene, grid, theta: ParamVector,
                          component: int = 0, **plan_kwargs):
    """Analytic d(E)/d(theta[component]) over a field grid.

    Returns a complex (ny, nx) array whose real/imag parts are the
    gradients of Re E and Im E.  Shares candidate enumeration across
    cells like the plain renderer."""
    _require_differentiable(scene)
    specs = scene.candidate_specs(grid.cell_center(0, 0))
    dspecs = (scene.diffraction_specs()
              if scene.cfg.weight_mode.kind == "transition" else None)
    vals, _ = _seeded_values(theta, [component])

    def cell(idx):
        iy, ix = divmod(idx, grid.nx)
        rx = grid.cell_center(ix, iy)
        plan = build_plan(scene, rx, specs=specs, dspecs=dspecs)
        e = _field_with(scene, plan, theta, vals, rx)
        if isinstance(e, Dual):
            return complex(np.ravel(np.asarray(e.tan))[0])
        return 0j

    flat = parallel_map(cell, range(grid.nx * grid.ny))
    return np.array(flat, dtype=complex).reshape(grid.ny, grid.nx)
