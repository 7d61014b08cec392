"""Scene assembly and the plan/evaluate pipeline.

All discrete decisions (which candidate paths are realizable, which
wedges blend each segment, which occlusions are hard) are frozen into a
Plan at the nominal geometry.  Evaluation then re-traces the frozen
plan with possibly perturbed (Dual-valued) vertices, endpoints, or
materials, so every field output is a smooth composition of the plan's
continuous pieces and forward-mode tangents flow through unchanged.

Occlusion model: a segment blocked by a face whose nearest silhouette
edge lies inside the capture band is attenuated smoothly by that
wedge's transition factor; blocked farther from any silhouette it is
dropped outright.  Edge-diffracted paths are enumerated as independent
first-order candidates and carry the field across shadow boundaries.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .diffraction import (DegenerateGeometry, diffraction_geometry,
                          boundary_factor, utd_coefficient)
from .dual import value_of, d_sqrt, d_sin, is_dual
from .field import (SimulationConfig, FieldGrid, GridSpec, CIR,
                    accumulate_field, build_cir)
from .geometry import (Mesh, Bvh, extract_wedges, segment_occluders,
                       _segment_segment_distance, BVH_MIN_TRIANGLES)
from .materials import (Material, builtin_materials, fresnel_cos,
                        PEC_SIGMA_THRESHOLD)
from .parallel import parallel_map
from .pathtracer import (FLAT_TOL as _FLAT_TOL, PathSpec, DiffractedSpec,
                         TracedPath, FrameCache, PathDegenerateError,
                         ResourceLimitError, enumerate_candidates,
                         enumerate_diffraction_specs, image_trace,
                         trace_diffracted, path_weight, wedges_by_triangle)
from .vec3 import vsub, vadd, vscale, vnorm, vfloat

__all__ = [
    "Scene", "Plan", "PlanEntry", "build_plan", "evaluate_plan",
    "field_at", "cir_at", "render_field_grid", "DEFAULT_GRID_BUDGET",
]

DEFAULT_GRID_BUDGET = 20_000_000    # nx * ny * candidate paths
_VACUUM = builtin_materials()["vacuum"]


@dataclass
class Scene:
    """Static scene: geometry, material bindings, transmitter, config.

    Wedge frames, adjacency tables, and the BVH are derived once; they
    describe the nominal geometry that plans are frozen against.
    """

    mesh: Mesh
    materials: dict
    tx: tuple
    cfg: SimulationConfig

    def __post_init__(self):
        self.tx = vfloat(self.tx)
        self.wedges = extract_wedges(self.mesh)
        self.tri_table = wedges_by_triangle(self.wedges, self.mesh.n_triangles)
        self.frames = FrameCache(self.mesh, self.wedges)
        self.bvh = (Bvh(self.mesh)
                    if self.mesh.n_triangles >= BVH_MIN_TRIANGLES else None)
        self._tri_materials = self._resolve_materials(self.materials)
        # silhouette candidates: every wedge that is not a flat fold
        self.silhouettes = [i for i, w in enumerate(self.wedges)
                            if abs(w.alpha - math.pi) > _FLAT_TOL]
        verts = self.mesh.vertices
        self._sil_ids = np.asarray(self.silhouettes, dtype=np.int64)
        self._sil_q0 = (verts[[self.wedges[i].iv0 for i in self.silhouettes]]
                        if self.silhouettes else np.zeros((0, 3)))
        self._sil_q1 = (verts[[self.wedges[i].iv1 for i in self.silhouettes]]
                        if self.silhouettes else np.zeros((0, 3)))
        self._sil_rows = list(zip(self.silhouettes,
                                  [tuple(r) for r in self._sil_q0.tolist()],
                                  [tuple(r) for r in self._sil_q1.tolist()]))
        self._spec_cache = {}
        self._dspec_cache = {}

    def _resolve_materials(self, table: dict) -> list:
        out = []
        builtins = builtin_materials()
        for t in range(self.mesh.n_triangles):
            name = self.mesh.material_names[self.mesh.material_ids[t]]
            mat = table.get(name) or builtins.get(name)
            if mat is None:
                raise KeyError(f"no material definition for {name!r}")
            out.append(mat)
        return out

    def material_of(self, tri: int) -> Material:
        return self._tri_materials[tri]

    def candidate_specs(self, rx) -> list:
        key = self.cfg.max_depth
        if key not in self._spec_cache:
            self._spec_cache[key] = enumerate_candidates(
                self.mesh, self.tx, rx, self.cfg.max_depth)
        return self._spec_cache[key]

    def diffraction_specs(self) -> list:
        key = self.cfg.max_depth
        if key not in self._dspec_cache:
            keep = set(self.silhouettes)
            self._dspec_cache[key] = [
                s for s in enumerate_diffraction_specs(
                    self.mesh, self.wedges, self.cfg.max_depth)
                if s.wedge_index in keep]
        return self._dspec_cache[key]


@dataclass(frozen=True)
class PlanEntry:
    kind: str                       # "specular" | "diffracted"
    spec: object                    # PathSpec | DiffractedSpec
    # per segment: tuple of (wedge id, allow_shadow) blend assignments.
    # allow_shadow marks the wedge as the silhouette of a face that
    # actually blocks the segment; only then may its shadow-side
    # (F - 1) factor apply.  Lit-side factors always apply in band.
    seg_wedges: tuple


@dataclass
class Plan:
    rx: tuple
    entries: list
    # nominal-geometry traces parallel to entries; evaluate_plan reuses
    # them when no override perturbs the trace inputs
    nominal: list | None = None


def _segment_roles(path: TracedPath):
    """Per segment: (endpoint triangles to exclude, edge flag).

    Interior points of a specular path sit on its hop triangles; a
    diffracted path has one extra interior point on the wedge edge.
    """
    n_seg = len(path.points) - 1
    tris = [h.triangle for h in path.per_hop]
    if path.kind == "diffracted":
        ei = 1 + len(path.spec.pre)     # index of the edge point
        interior = tris[:len(path.spec.pre)] + [None] + tris[len(path.spec.pre):]
    else:
        ei = None
        interior = tris
    roles = []
    for j in range(n_seg):
        ends = []
        if j - 1 >= 0 and interior[j - 1] is not None:
            ends.append(interior[j - 1])
        if j < len(interior) and interior[j] is not None:
            ends.append(interior[j])
        touches_edge = ei is not None and (j + 1 == ei or j == ei)
        roles.append((ends, touches_edge))
    return roles


def _excluded_wedges(scene: Scene, path: TracedPath, ends, touches_edge):
    out = set()
    for t in ends:
        out.update(scene.tri_table[t])
    if path.kind == "diffracted":
        out.add(path.spec.wedge_index)
        if touches_edge:
            w = scene.wedges[path.spec.wedge_index]
            out.update(scene.tri_table[w.tri_a])
            if w.tri_b is not None:
                out.update(scene.tri_table[w.tri_b])
    return out


def _seg_to_segs_dist(a, b, q0, q1) -> np.ndarray:
    """Distance of segment (a, b) to each segment (q0[i], q1[i])."""
    u = b - a
    v = q1 - q0
    w = a - q0
    aa = float(u @ u)
    bb = v @ u
    cc = np.einsum("ij,ij->i", v, v)
    dd = w @ u
    ee = np.einsum("ij,ij->i", v, w)
    den = aa * cc - bb * bb
    safe_den = np.where(den > 0, den, 1.0)
    s = np.where(den > 1e-14 * np.maximum(aa * cc, 1e-300),
                 (bb * ee - cc * dd) / safe_den, 0.0)
    s = np.clip(s, 0.0, 1.0)
    safe_c = np.where(cc > 0, cc, 1.0)
    t = np.clip(np.where(cc > 0, (bb * s + ee) / safe_c, 0.0), 0.0, 1.0)
    if aa > 0:
        s = np.clip((bb * t - dd) / aa, 0.0, 1.0)
    t = np.clip(np.where(cc > 0, (bb * s + ee) / safe_c, 0.0), 0.0, 1.0)
    diff = (a + s[:, None] * u) - (q0 + t[:, None] * v)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _near_silhouettes(scene: Scene, a, b, band: float, excluded) -> list:
    if scene._sil_ids.size == 0:
        return []
    if len(scene._sil_rows) <= 16:
        # scalar loop; array dispatch overhead dominates at this size
        return [wi for wi, q0, q1 in scene._sil_rows
                if wi not in excluded
                and _segment_segment_distance(a, b, q0, q1) <= band]
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = _seg_to_segs_dist(a, b, scene._sil_q0, scene._sil_q1)
    return [int(wi) for wi in scene._sil_ids[d <= band] if int(wi) not in excluded]


def _nearest_silhouette(scene: Scene, point) -> tuple:
    """(wedge id, distance) of the closest silhouette edge, or (None, inf)."""
    if scene._sil_ids.size == 0:
        return None, math.inf
    p = np.asarray(point, dtype=float)
    v = scene._sil_q1 - scene._sil_q0
    w = p - scene._sil_q0
    t = np.clip(np.einsum("ij,ij->i", v, w)
                / np.maximum(np.einsum("ij,ij->i", v, v), 1e-300), 0.0, 1.0)
    diff = w - t[:, None] * v
    d = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(d))
    return int(scene._sil_ids[i]), math.sqrt(float(d[i]))


def _crossing_point(a, b, scene: Scene, tri: int):
    v0, v1, v2 = scene.mesh.tri_vertices(tri)
    n = np.cross(np.asarray(v1) - v0, np.asarray(v2) - v0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = float(n @ (b - a))
    if abs(denom) < 1e-300:
        return a
    t = float(n @ (np.asarray(v0) - a)) / denom
    return a + min(1.0, max(0.0, t)) * (b - a)


def build_plan(scene: Scene, rx, specs=None, dspecs=None) -> Plan:
    """Freeze the discrete path structure for one receiver.

    Realizes every candidate (reflective and first-order diffracted),
    resolves per-segment occlusion against the capture band, and records
    which wedges blend each segment.  All geometry here is nominal
    float; the Plan is what evaluate_plan differentiates through.
    """
    rx = vfloat(rx)
    cfg = scene.cfg
    mode = cfg.weight_mode
    band = cfg.capture_band_lambdas * cfg.wavelength
    monostatic = vnorm(vsub(rx, scene.tx)) < 1e-9

    realized = []
    if specs is None:
        specs = scene.candidate_specs(rx)
    for spec in specs:
        if spec.order == 0 and monostatic:
            continue
        try:
            realized.append(image_trace(scene.tx, rx, spec, scene.mesh))
        except PathDegenerateError:
            continue
    if mode.kind == "transition":
        if dspecs is None:
            dspecs = scene.diffraction_specs()
        for ds in dspecs:
            try:
                p = trace_diffracted(scene.tx, rx, ds, scene.mesh, scene.wedges,
                                     frame=scene.frames.plain(ds.wedge_index))
            except (PathDegenerateError, DegenerateGeometry):
                continue
            if p.geom.clamped:
                continue            # endpoint hit: not a stationary edge point
            realized.append(p)

    entries = []
    kept_paths = []
    for path in realized:
        roles = _segment_roles(path)
        seg_sets = []
        keep = True
        for j in range(len(path.points) - 1):
            a = vfloat(path.points[j])
            b = vfloat(path.points[j + 1])
            ends, touches_edge = roles[j]
            excl_w = _excluded_wedges(scene, path, ends, touches_edge)
            excl_t = set(ends)
            if path.kind == "diffracted" and touches_edge:
                w = scene.wedges[path.spec.wedge_index]
                excl_t.add(w.tri_a)
                if w.tri_b is not None:
                    excl_t.add(w.tri_b)
            if mode.kind == "transition":
                near = _near_silhouettes(scene, a, b, band, excl_w)
            else:
                near = []
            near_set = set(near)
            allow = set()
            occ = segment_occluders(a, b, scene.mesh, exclude=excl_t,
                                    bvh=scene.bvh)
            for tri in occ:
                if mode.kind != "transition":
                    keep = False
                    break
                cp = _crossing_point(a, b, scene, int(tri))
                wi, dist = _nearest_silhouette(scene, cp)
                if wi is None or dist > band or wi not in near_set:
                    keep = False
                    break
                allow.add(wi)
            if not keep:
                break
            seg_sets.append(tuple(sorted((wi, wi in allow) for wi in near)))
        if keep:
            entries.append(PlanEntry(path.kind, path.spec, tuple(seg_sets)))
            kept_paths.append(path)
    return Plan(rx=rx, entries=entries, nominal=kept_paths)


def _leg_bounds(path: TracedPath):
    """Unfolding legs: specular paths unfold end to end; a diffracted
    path restarts its wavefront at the edge point."""
    last = len(path.points) - 1
    if path.kind == "diffracted":
        ei = 1 + len(path.spec.pre)
        return [(0, ei), (ei, last)]
    return [(0, last)]


def _segment_blend(path: TracedPath, entry: PlanEntry, k: float,
                   frames: FrameCache):
    """In-band wedge transition factors over all segments, evaluated
    with endpoints unfolded to the full leg length so the arguments see
    the true wavefront curvature.  Returns (product, details) where
    details lists one (segment, wedge, lit, factor) per applied factor."""
    w = 1.0 + 0j
    details = []
    if all(len(s) == 0 for s in entry.seg_wedges):
        return w, details
    pts = path.points
    seg_len = [vnorm(vsub(b, a)) for a, b in zip(pts, pts[1:])]
    legs = _leg_bounds(path)
    for j, wset in enumerate(entry.seg_wedges):
        if not wset:
            continue
        lo, hi = next(l for l in legs if l[0] <= j < l[1])
        l_prior = sum(seg_len[lo:j], 0.0)
        l_post = sum(seg_len[j + 1:hi], 0.0)
        a, b = pts[j], pts[j + 1]
        dhat = vscale(vsub(b, a), 1.0 / seg_len[j])
        src = vsub(a, vscale(dhat, l_prior)) if value_of(l_prior) > 0 else a
        obs = vadd(b, vscale(dhat, l_post)) if value_of(l_post) > 0 else b
        for wi, allow_shadow in wset:
            try:
                geom = diffraction_geometry(frames.plain(wi), src, obs)
            except DegenerateGeometry:
                continue
            _, lit, f = boundary_factor(geom, k, "isb")
            if not lit and not allow_shadow:
                continue        # angular shadow of a face the segment misses
            details.append((j, wi, lit, f))
            w = w * f
    return w, details


def _grazing_gamma(pol: str) -> complex:
    return -1.0 + 0j


def _face_reflection(mat: Material, sin_psi, pol: str, f_hz: float):
    """Reflection coefficient a face contributes to the edge
    coefficient, at grazing angle psi off the face."""
    if mat.sigma >= PEC_SIGMA_THRESHOLD:
        return 1.0 + 0j if pol == "parallel" else -1.0 + 0j
    if value_of(sin_psi) < 0:
        sin_psi = -sin_psi
    if value_of(sin_psi) < 1e-9:
        return _grazing_gamma(pol)
    return fresnel_cos(sin_psi, _VACUUM, mat, f_hz).gamma(pol)


def _hop_gamma(scene_mats, hop, pol: str, f_hz: float):
    ci = hop.cos_theta_i
    cv = value_of(ci)
    if cv < 1e-9:
        g = _grazing_gamma(pol)
        hop.fresnel_perp = hop.fresnel_par = g
        return g
    if cv > 1.0:
        ci = ci / cv                # renormalize tiny overshoot
    fc = fresnel_cos(ci, _VACUUM, scene_mats[hop.triangle], f_hz)
    hop.fresnel_perp = fc.gamma_perp
    hop.fresnel_par = fc.gamma_par
    return fc.gamma(pol)


def _diffraction_amplitude(scene: Scene, path: TracedPath, k: float,
                           pol: str, f_hz: float, mats):
    """D times the spherical edge spreading for the unfolded geometry."""
    geom = path.geom
    frame = geom.frame
    wedge = scene.wedges[path.spec.wedge_index]
    mat0 = mats[wedge.tri_a]
    matn = mats[wedge.tri_b] if wedge.tri_b is not None else mat0
    r0 = _face_reflection(mat0, d_sin(geom.phi_prime), pol, f_hz)
    rn = _face_reflection(matn, d_sin(frame.alpha - geom.phi), pol, f_hz)
    s, sp = geom.s, geom.s_prime
    L = s * sp * geom.sin_beta0 ** 2 / (s + sp)
    D = utd_coefficient(geom.phi, geom.phi_prime, frame.nu, L, k,
                        r0=r0, rn=rn, sin_beta0=geom.sin_beta0)
    return D * d_sqrt(1.0 / (s * sp * (s + sp)))


def _handoff_paths(path: TracedPath, entry: PlanEntry, seg_details,
                   dkeys, amp) -> list:
    """Smooth boundary-handoff terms pairing the specular fade with its
    companion edge paths.

    A boundary factor fades the specular field as F (lit side) or
    F - 1 (shadow side) while the companion edge path carries the
    standard coefficient, whose near-boundary half jumps the opposite
    way; adding the residual (1 - F) times the otherwise-weighted
    specular field restores the exact uniform total on both sides.
    Emits one extra path per factor whose companion edge path is
    actually planned; factors without a planned companion keep the
    plain smooth fade."""
    seq = tuple(entry.spec.triangle_seq)
    factors = []
    for h, wi, lit, f in path.diagnostics.get("hop_factors", ()):
        key = None if wi is None else (seq[:h], wi, seq[h + 1:])
        factors.append((key, f, f if lit else f + 1.0))
    for j, wi, lit, f in seg_details:
        factors.append(((seq[:j], wi, seq[j:]), f, f if lit else f + 1.0))
    # fade + residual telescopes to the hard step per factor: f + r = H.
    # Expanding the product over every subset of active residuals makes
    # the summed specular family equal step-masked geometric optics
    # exactly, even when several boundaries are in transition at once.
    active = []
    passive = 1.0 + 0j
    for key, f, big_f in factors:
        r = 1.0 - big_f
        if key is not None and key in dkeys and abs(value_of(r)) > 1e-6:
            active.append((key, f, r))
        else:
            passive = passive * f
    if len(active) > 8:         # keep the expansion bounded
        active.sort(key=lambda t: -abs(value_of(t[2])))
        for key, f, _ in active[8:]:
            passive = passive * f
        active = active[:8]
    out = []
    for mask in range(1, 1 << len(active)):
        cw = passive
        keys = []
        for i, (key, f, r) in enumerate(active):
            if mask >> i & 1:
                cw = cw * r
                keys.append(key)
            else:
                cw = cw * f
        hp = copy.copy(path)
        hp.weight = cw
        hp.amplitude = amp
        hp.diagnostics = dict(path.diagnostics, handoff=tuple(keys))
        out.append(hp)
    return out


def evaluate_plan(scene: Scene, plan: Plan, tx=None, rx=None, vertices=None,
                  materials=None) -> list:
    """Re-trace a frozen plan with possibly perturbed inputs.

    tx/rx/vertices/materials override the nominal scene values and may
    carry Dual tangents; the discrete structure (path specs, wedge
    assignments) stays exactly as planned.  Returns weighted paths
    ready for accumulate_field / build_cir.
    """
    cfg = scene.cfg
    mode = cfg.weight_mode
    k = cfg.wavenumber
    pol = cfg.polarization
    reuse = (plan.nominal is not None and vertices is None
             and tx is None and (rx is None or rx is plan.rx))
    tx = scene.tx if tx is None else tx
    rx = plan.rx if rx is None else rx
    if vertices is None:
        frames = scene.frames
    else:
        frames = FrameCache(scene.mesh, scene.wedges, vertices)
    if materials is None:
        mats = scene._tri_materials
    else:
        merged = dict(scene.materials)
        merged.update(materials)
        mats = scene._resolve_materials(merged)

    dkeys = {(e.spec.pre, e.spec.wedge_index, e.spec.post)
             for e in plan.entries if e.kind == "diffracted"}
    out = []
    for i, entry in enumerate(plan.entries):
        if reuse:
            path = copy.copy(plan.nominal[i])
            path.diagnostics = dict(path.diagnostics)
        else:
            try:
                if entry.kind == "specular":
                    path = image_trace(tx, rx, entry.spec, scene.mesh, vertices)
                else:
                    path = trace_diffracted(
                        tx, rx, entry.spec, scene.mesh, scene.wedges, vertices,
                        frame=frames.plain(entry.spec.wedge_index))
            except (PathDegenerateError, DegenerateGeometry):
                continue
        w = path_weight(path, scene.mesh, mode, k, scene.wedges,
                        scene.tri_table, frames)
        seg_details = []
        if mode.kind == "transition":
            blend, seg_details = _segment_blend(path, entry, k, frames)
            w = w * blend
        amp = cfg.tx_power_amplitude + 0j
        for hop in path.per_hop:
            amp = amp * _hop_gamma(mats, hop, pol, cfg.frequency_hz)
        if entry.kind == "specular":
            amp = amp / path.length
        else:
            amp = amp * _diffraction_amplitude(scene, path, k, pol,
                                               cfg.frequency_hz, mats)
        path.weight = w
        path.amplitude = amp
        out.append(path)
        if mode.kind == "transition" and entry.kind == "specular":
            out.extend(_handoff_paths(path, entry, seg_details, dkeys, amp))
    return out


def field_at(scene: Scene, rx, plan: Plan | None = None, **overrides):
    if plan is None:
        plan = build_plan(scene, vfloat(rx))
        if not any(is_dual(c) for c in rx):
            rx = plan.rx      # let evaluate_plan reuse the nominal traces
    paths = evaluate_plan(scene, plan, rx=rx, **overrides)
    return accumulate_field(paths, scene.cfg)


def cir_at(scene: Scene, rx, plan: Plan | None = None) -> CIR:
    if plan is None:
        plan = build_plan(scene, vfloat(rx))
        if not any(is_dual(c) for c in rx):
            rx = plan.rx
    paths = evaluate_plan(scene, plan, rx=rx)
    return build_cir(paths, scene.cfg)


def render_field_grid(scene: Scene, grid: GridSpec,
                      budget: int = DEFAULT_GRID_BUDGET, **overrides) -> FieldGrid:
    """Field at every cell center, each cell through the full pipeline.

    Cells are independent and assembled in fixed row-major order, so
    output is bit-identical for any worker count.
    """
    specs = scene.candidate_specs(grid.cell_center(0, 0))
    n_cand = len(specs)
    dspecs = None
    if scene.cfg.weight_mode.kind == "transition":
        dspecs = scene.diffraction_specs()
        n_cand += len(dspecs)
    total = grid.nx * grid.ny * max(1, n_cand)
    if total > budget:
        raise ResourceLimitError(
            f"grid work {total} (cells x candidates) exceeds the budget "
            f"of {budget}")
    for iy in (0, grid.ny - 1):
        for ix in (0, grid.nx - 1):
            if vnorm(vsub(grid.cell_center(ix, iy), scene.tx)) < 1e-6:
                raise ValueError("grid cell coincides with tx (standoff 1e-6 m)")

    def cell(idx):
        iy, ix = divmod(idx, grid.nx)
        rx = grid.cell_center(ix, iy)
        plan = build_plan(scene, rx, specs=specs, dspecs=dspecs)
        paths = evaluate_plan(scene, plan, **overrides)
        return complex(value_of(accumulate_field(paths, scene.cfg)))

    values = parallel_map(cell, range(grid.nx * grid.ny))
    samples = np.asarray(values, dtype=complex).reshape(grid.ny, grid.nx)
    return FieldGrid(origin=grid.origin, u_axis=grid.u_axis,
                     v_axis=grid.v_axis, nx=grid.nx, ny=grid.ny,
                     samples=samples)
