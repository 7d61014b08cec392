"""Deterministic propagation-path construction and visibility weighting.

Specular paths come from the method of images: for a candidate triangle
sequence the receiver is mirrored back through the supporting planes in
reverse order, then the actual reflection points are recovered by
intersecting forward from the transmitter.  The construction works with
infinite planes, so a path is well defined even when a reflection point
leaves its triangle; the weight modes decide how such paths fade:

    binary      product of strict inside-triangle indicators (0 or 1)
    soft        product of min(sigmoid(k u), sigmoid(k w), sigmoid(k (1-u-w)))
    transition  product of complex F(k L a) factors (lit side F, shadow
                side F - 1) built from the nearest wedge of each hit
                triangle, so the field stays continuous when a
                reflection point crosses an edge

First-order diffraction paths (reflections allowed before and after a
single wedge interaction) are enumerated separately; in transition mode
they are the companions whose own discontinuities cancel the weight
steps at every shadow/reflection boundary.

Also here: the Fermat diffraction-point solver wrapper, per-segment
secondary visibility (occlusion blending), and the hemisphere
Monte Carlo diagnostic that demonstrates why naive direction sampling
returns exactly zero on specular scenes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dual import d_sigmoid, d_sqrt, d_exp, value_of
from .vec3 import vadd, vsub, vscale, vdot, vcross, vnorm, vnormalize, vfloat
from .geometry import (Mesh, Wedge, supporting_plane, mirror_point,
                       intersect_plane, barycentric, segment_occluders, Bvh,
                       BVH_MIN_TRIANGLES)
from .diffraction import (wedge_frame, diffraction_geometry, DegenerateGeometry,
                          boundary_factor, utd_coefficient, transition_factor,
                          WedgeFrame, DiffractionGeometry)

__all__ = [
    "PathSpec", "DiffractedSpec", "TracedPath", "PathHop", "WeightMode",
    "Exhaustive", "Stochastic", "PathDegenerateError", "ResourceLimitError",
    "enumerate_candidates", "enumerate_diffraction_specs", "image_trace",
    "trace_diffracted", "path_weight", "secondary_visibility",
    "naive_mc_estimate", "nearest_wedge", "wedges_by_triangle",
]


class PathDegenerateError(ValueError):
    """A candidate path has no usable geometric realization."""


class ResourceLimitError(RuntimeError):
    """A configured enumeration/budget limit was exceeded."""


@dataclass(frozen=True)
class WeightMode:
    kind: str = "binary"            # binary | soft | transition
    soft_k: float | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "soft", "transition"):
            raise ValueError(f"unknown weight mode {self.kind!r}")
        if self.kind == "soft" and (self.soft_k is None or self.soft_k <= 0):
            raise ValueError("soft mode requires soft_k > 0")

    @classmethod
    def binary(cls):
        return cls("binary")

    @classmethod
    def soft(cls, k: float):
        return cls("soft", k)

    @classmethod
    def transition(cls):
        return cls("transition")

    @property
    def differentiable(self) -> bool:
        return self.kind != "binary"


@dataclass(frozen=True)
class PathSpec:
    """Candidate specular path: ordered reflecting-triangle indices.
    Empty sequence = line of sight."""

    triangle_seq: tuple[int, ...]

    def __post_init__(self):
        for a, b in zip(self.triangle_seq, self.triangle_seq[1:]):
            if a == b:
                raise ValueError("consecutive identical triangles in path spec")

    @property
    def order(self) -> int:
        return len(self.triangle_seq)


@dataclass(frozen=True)
class DiffractedSpec:
    """Single wedge interaction with optional reflections around it."""

    pre: tuple[int, ...]            # triangles hit before the edge
    wedge_index: int
    post: tuple[int, ...]           # triangles hit after the edge

    @property
    def order(self) -> int:
        return len(self.pre) + len(self.post) + 1


@dataclass(frozen=True)
class Exhaustive:
    limit: int = 1_000_000


@dataclass(frozen=True)
class Stochastic:
    n_rays: int
    capture_radius: float
    seed: int = 0
    limit: int = 1_000_000


@dataclass
class PathHop:
    triangle: int
    u: object
    w: object
    cos_theta_i: object             # incidence cosine from the plane normal
    fresnel_perp: object = 1.0 + 0j
    fresnel_par: object = 1.0 + 0j
    penetration: object = 1.0 + 0j


@dataclass
class TracedPath:
    kind: str                       # "specular" | "diffracted"
    spec: object                    # PathSpec | DiffractedSpec
    points: list                    # [tx, interactions..., rx]
    length: object                  # total unfolded length L_P
    per_hop: list
    geom: DiffractionGeometry | None = None   # diffracted paths only
    weight: object = None           # complex W, filled by the engine
    amplitude: object = None        # complex A_P, filled by the engine
    phase: object = None            # arg(W A) - k L, wrapped
    diagnostics: dict = field(default_factory=dict)

    @property
    def segment_lengths(self):
        return [vnorm(vsub(b, a)) for a, b in zip(self.points, self.points[1:])]


# -- candidate enumeration -------------------------------------------------------

MAX_DEPTH_CAP = 4


def _exhaustive_count(n_tris: int, max_depth: int) -> int:
    total = 1                       # LOS
    for m in range(1, max_depth + 1):
        total += n_tris * (n_tris - 1) ** (m - 1) if n_tris > 0 else 0
    return total


def enumerate_candidates(mesh: Mesh, tx, rx, max_depth: int,
                         strategy=Exhaustive()) -> list[PathSpec]:
    """All candidate reflection sequences up to max_depth.

    Exhaustive: every sequence without immediate repeats (the weight
    machinery, not enumeration, decides validity).  Stochastic: seeded
    specular random walks from tx; a prefix is kept when its onward ray
    passes within capture_radius of rx.  Stochastic output is always a
    subset of the exhaustive set for the same scene.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if max_depth > MAX_DEPTH_CAP:
        raise ValueError(f"max_depth {max_depth} exceeds hard cap {MAX_DEPTH_CAP}")
    n = len(mesh.triangles)
    if isinstance(strategy, Exhaustive):
        count = _exhaustive_count(n, max_depth)
        if count > strategy.limit:
            raise ResourceLimitError(
                f"exhaustive enumeration would produce {count} candidates, "
                f"over the limit of {strategy.limit}")
        seqs: list[tuple[int, ...]] = [()]
        frontier: list[tuple[int, ...]] = [()]
        for _ in range(max_depth):
            nxt = []
            for s in frontier:
                for t in range(n):
                    if s and s[-1] == t:
                        continue
                    nxt.append(s + (t,))
            seqs.extend(nxt)
            frontier = nxt
        return [PathSpec(s) for s in seqs]
    if isinstance(strategy, Stochastic):
        return _stochastic_candidates(mesh, tx, rx, max_depth, strategy)
    raise ValueError(f"unknown strategy {strategy!r}")


def _stochastic_candidates(mesh: Mesh, tx, rx, max_depth: int,
                           st: Stochastic) -> list[PathSpec]:
    rng = np.random.default_rng(st.seed)
    found: set[tuple[int, ...]] = set()
    v = np.asarray(mesh.vertices, float)
    tri = np.asarray(mesh.triangles, int)
    a = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - a
    e2 = v[tri[:, 2]] - a
    normals = np.cross(e1, e2)
    nn = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / nn
    txv = np.asarray(vfloat(tx), float)
    rxv = np.asarray(vfloat(rx), float)

    # LOS prefix: direct ray toward rx
    found.add(())

    nrays = int(st.n_rays)
    dirs = rng.normal(size=(nrays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.tile(txv, (nrays, 1))
    seq = np.full((nrays, max_depth), -1, dtype=int)
    alive = np.ones(nrays, dtype=bool)
    last = np.full(nrays, -1, dtype=int)

    for depth in range(max_depth):
        if not alive.any():
            break
        t_hit, idx_hit = _batch_ray_hits(origins, dirs, a, e1, e2, last)
        hit = alive & (idx_hit >= 0)
        if not hit.any():
            break
        ph = origins[hit] + dirs[hit] * t_hit[hit, None]
        nh = normals[idx_hit[hit]]
        dh = dirs[hit] - 2.0 * (np.einsum("ij,ij->i", dirs[hit], nh))[:, None] * nh
        origins[hit] = ph
        dirs[hit] = dh
        seq[hit, depth] = idx_hit[hit]
        last[hit] = idx_hit[hit]
        alive = hit
        # capture test: does the onward ray pass near rx?
        rel = rxv - origins[hit]
        proj = np.einsum("ij,ij->i", rel, dirs[hit])
        perp = rel - proj[:, None] * dirs[hit]
        near = (proj > 0) & (np.linalg.norm(perp, axis=1) <= st.capture_radius)
        for row in np.nonzero(hit)[0][near]:
            found.add(tuple(int(x) for x in seq[row, :depth + 1]))
        if len(found) > st.limit:
            raise ResourceLimitError(
                f"stochastic search found more than {st.limit} candidates")
    return [PathSpec(s) for s in sorted(found)]


def _batch_ray_hits(origins, dirs, a, e1, e2, exclude_tri):
    """Nearest Moller-Trumbore hit per ray; exclude_tri masks the
    triangle each ray just left.  Returns (t, tri_index or -1)."""
    eps = 1e-12
    R = origins.shape[0]
    T = a.shape[0]
    pvec = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("tj,rtj->rt", e1, pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - a[None, :, :]
    u = np.einsum("rtj,rtj->rt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :, :])
    w = np.einsum("rj,rtj->rt", dirs, qvec) * inv
    t = np.einsum("tj,rtj->rt", e2, qvec) * inv
    bary_tol = 1e-9
    ok &= (u >= -bary_tol) & (w >= -bary_tol) & (u + w <= 1 + bary_tol) & (t > 1e-9)
    ok &= np.arange(T)[None, :] != exclude_tri[:, None]
    t = np.where(ok, t, np.inf)
    idx = np.argmin(t, axis=1)
    tmin = t[np.arange(R), idx]
    return tmin, np.where(np.isfinite(tmin), idx, -1)


def enumerate_diffraction_specs(mesh: Mesh, wedges: list[Wedge],
                                max_depth: int, limit: int = 1_000_000,
                                ) -> list[DiffractedSpec]:
    """All single-wedge specs with reflection prefixes/suffixes fitting
    inside max_depth total interactions."""
    if max_depth < 1:
        return []
    n = len(mesh.triangles)
    seqs: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(max_depth - 1):
        nxt = []
        for s in frontier:
            for t in range(n):
                if s and s[-1] == t:
                    continue
                nxt.append(s + (t,))
        seqs.extend(nxt)
        frontier = nxt
    out = []
    for wi in range(len(wedges)):
        for pre in seqs:
            for post in seqs:
                if len(pre) + len(post) + 1 > max_depth:
                    continue
                out.append(DiffractedSpec(pre, wi, post))
                if len(out) > limit:
                    raise ResourceLimitError(
                        f"diffraction enumeration exceeded the limit of {limit}")
    return out


# -- image-method tracing --------------------------------------------------------

def _tri_vertices(mesh: Mesh, t: int, vertices=None):
    ids = mesh.triangles[t]
    if vertices is None:
        return tuple(tuple(mesh.vertices[i]) for i in ids)
    return tuple(vertices[i] for i in ids)


def image_trace(tx, rx, spec: PathSpec, mesh: Mesh, vertices=None) -> TracedPath:
    """Realize a specular candidate through its supporting planes.

    The receiver is mirrored back through the planes in reverse order;
    reflection points are then recovered by forward intersections from
    tx.  Each forward segment must genuinely cross its plane (interior
    parameter), otherwise the candidate has no physical realization and
    a PathDegenerateError carries the diagnostic.  Generic over Dual
    scalar inputs via the vertices override.
    """
    seq = spec.triangle_seq
    planes = []
    tris = []
    for t in seq:
        v0, v1, v2 = _tri_vertices(mesh, t, vertices)
        planes.append(supporting_plane(v0, v1, v2))
        tris.append((v0, v1, v2))
    images = [None] * len(seq)
    cur = rx
    for i in range(len(seq) - 1, -1, -1):
        cur = mirror_point(cur, planes[i])
        images[i] = cur
    points = [tx]
    per_hop = []
    cur = tx
    for i, t in enumerate(seq):
        hit = intersect_plane(cur, images[i], planes[i])
        if hit is None:
            raise PathDegenerateError(
                f"path {seq}: segment {i} parallel to supporting plane of "
                f"triangle {t}")
        p, tpar = hit
        if not 1e-12 < value_of(tpar) < 1.0 - 1e-12:
            raise PathDegenerateError(
                f"path {seq}: no forward crossing of triangle {t}'s plane "
                f"(parameter {value_of(tpar):.3g})")
        v0, v1, v2 = tris[i]
        u, w = barycentric(p, v0, v1, v2)
        d_in = vsub(p, cur)
        n = planes[i].n
        ct = vdot(d_in, n) / (vnorm(d_in) * vnorm(n))
        if value_of(ct) < 0:
            ct = -ct
        per_hop.append(PathHop(triangle=t, u=u, w=w, cos_theta_i=ct))
        points.append(p)
        cur = p
    points.append(rx)
    total = points[0]
    length = 0.0
    for a_pt, b_pt in zip(points, points[1:]):
        length = length + vnorm(vsub(b_pt, a_pt))
    path = TracedPath(kind="specular", spec=spec, points=points,
                      length=length, per_hop=per_hop)
    if vertices is None and seq:
        path.diagnostics["virtual_image_length"] = float(
            value_of(vnorm(vsub(tx, images[0]))))
    return path


def trace_diffracted(tx, rx, spec: DiffractedSpec, mesh: Mesh,
                     wedges: list[Wedge], vertices=None,
                     frame: WedgeFrame | None = None) -> TracedPath:
    """Realize a reflections + single-edge-diffraction candidate.

    The wedge edge sees the fully mirrored transmitter (through the pre
    sequence) and receiver (through the post sequence); the Fermat point
    on the edge is computed in that unfolded frame, then the actual
    reflection points are recovered by forward intersections on both
    sides.  ``frame`` may supply a precomputed frame for the wedge; it
    must match ``vertices``.
    """
    wedge = wedges[spec.wedge_index]
    pre_planes, pre_tris = [], []
    for t in spec.pre:
        v0, v1, v2 = _tri_vertices(mesh, t, vertices)
        pre_planes.append(supporting_plane(v0, v1, v2))
        pre_tris.append((v0, v1, v2))
    post_planes, post_tris = [], []
    for t in spec.post:
        v0, v1, v2 = _tri_vertices(mesh, t, vertices)
        post_planes.append(supporting_plane(v0, v1, v2))
        post_tris.append((v0, v1, v2))

    tx_virt = tx
    for pl in pre_planes:
        tx_virt = mirror_point(tx_virt, pl)
    rx_virt = rx
    for pl in reversed(post_planes):
        rx_virt = mirror_point(rx_virt, pl)

    if frame is None:
        frame = wedge_frame(wedge, mesh, vertices)
    geom = diffraction_geometry(frame, tx_virt, rx_virt)
    p_d = geom.p_d

    # forward reconstruction: tx -> pre reflections -> p_d
    points = [tx]
    per_hop = []
    cur = tx
    # images of p_d back through the pre planes
    imgs = [None] * len(spec.pre)
    tgt = p_d
    for i in range(len(spec.pre) - 1, -1, -1):
        tgt = mirror_point(tgt, pre_planes[i])
        imgs[i] = tgt
    for i, t in enumerate(spec.pre):
        hit = intersect_plane(cur, imgs[i], pre_planes[i])
        if hit is None or not 1e-12 < value_of(hit[1]) < 1.0 - 1e-12:
            raise PathDegenerateError(
                f"diffracted path {spec}: no forward crossing on pre hop {i}")
        p = hit[0]
        v0, v1, v2 = pre_tris[i]
        u, w = barycentric(p, v0, v1, v2)
        d_in = vsub(p, cur)
        n = pre_planes[i].n
        ct = vdot(d_in, n) / (vnorm(d_in) * vnorm(n))
        if value_of(ct) < 0:
            ct = -ct
        per_hop.append(PathHop(triangle=t, u=u, w=w, cos_theta_i=ct))
        points.append(p)
        cur = p
    points.append(p_d)
    cur = p_d
    imgs = [None] * len(spec.post)
    tgt = rx
    for i in range(len(spec.post) - 1, -1, -1):
        tgt = mirror_point(tgt, post_planes[i])
        imgs[i] = tgt
    for i, t in enumerate(spec.post):
        hit = intersect_plane(cur, imgs[i], post_planes[i])
        if hit is None or not 1e-12 < value_of(hit[1]) < 1.0 - 1e-12:
            raise PathDegenerateError(
                f"diffracted path {spec}: no forward crossing on post hop {i}")
        p = hit[0]
        v0, v1, v2 = post_tris[i]
        u, w = barycentric(p, v0, v1, v2)
        d_in = vsub(p, cur)
        n = post_planes[i].n
        ct = vdot(d_in, n) / (vnorm(d_in) * vnorm(n))
        if value_of(ct) < 0:
            ct = -ct
        per_hop.append(PathHop(triangle=t, u=u, w=w, cos_theta_i=ct))
        points.append(p)
        cur = p
    points.append(rx)
    length = 0.0
    for a_pt, b_pt in zip(points, points[1:]):
        length = length + vnorm(vsub(b_pt, a_pt))
    return TracedPath(kind="diffracted", spec=spec, points=points,
                      length=length, per_hop=per_hop, geom=geom)


# -- weights ---------------------------------------------------------------------

def wedges_by_triangle(wedges: list[Wedge], n_triangles: int) -> list[list[int]]:
    table: list[list[int]] = [[] for _ in range(n_triangles)]
    for i, w in enumerate(wedges):
        table[w.tri_a].append(i)
        if w.tri_b is not None:
            table[w.tri_b].append(i)
    return table


def _point_segment_distance(p, e0, e1):
    d = vsub(e1, e0)
    dd = vdot(d, d)
    t = vdot(vsub(p, e0), d) / dd
    tv = min(max(value_of(t), 0.0), 1.0)
    proj = vadd(e0, vscale(d, tv))
    return value_of(vnorm(vsub(p, proj)))


FLAT_TOL = 1e-9                         # dihedral within this of pi is a seam


def nearest_wedge(point, triangle: int, wedges: list[Wedge],
                  tri_table: list[list[int]], mesh: Mesh) -> int | None:
    """Index of the triangle's nearest wedge that is a real boundary.

    Coplanar seams (dihedral pi between two faces) are skipped: the
    surface continues across them, so they carry no shadow or
    reflection boundary."""
    best, best_d = None, math.inf
    for wi in tri_table[triangle]:
        w = wedges[wi]
        if w.tri_b is not None and abs(w.alpha - math.pi) <= FLAT_TOL:
            continue
        d = _point_segment_distance(vfloat(point),
                                    tuple(mesh.vertices[w.iv0]),
                                    tuple(mesh.vertices[w.iv1]))
        if d < best_d:
            best, best_d = wi, d
    return best


def _lost_flat_seam(hop_pt, triangle: int, wedges, tri_table, mesh) -> bool:
    """True when a hop point lies across a coplanar seam of its triangle.

    A stationary point on a plane tessellated by several triangles must
    be claimed by exactly one candidate, or the reflection would be
    double counted; crossing a seam hands the identical path over to
    the neighbor's candidate, so the field stays continuous.  Points on
    the seam itself go to the lower-indexed face.
    """
    p = vfloat(hop_pt)
    tri = mesh.triangles[triangle]
    a = tuple(mesh.vertices[tri[0]])
    b = tuple(mesh.vertices[tri[1]])
    c = tuple(mesh.vertices[tri[2]])
    n = vcross(vsub(b, a), vsub(c, a))
    centroid = vscale(vadd(vadd(a, b), c), 1.0 / 3.0)
    for wi in tri_table[triangle]:
        w = wedges[wi]
        if w.tri_b is None or abs(w.alpha - math.pi) > FLAT_TOL:
            continue
        q0 = tuple(mesh.vertices[w.iv0])
        q1 = tuple(mesh.vertices[w.iv1])
        s_dir = vnormalize(vcross(n, vsub(q1, q0)))
        if vdot(vsub(centroid, q0), s_dir) < 0:
            s_dir = vscale(s_dir, -1.0)
        side = vdot(vsub(p, q0), s_dir)
        if side < -1e-12:
            return True
        if side <= 1e-12 and triangle != min(w.tri_a, w.tri_b):
            return True
    return False


def _hop_transition_factor(prev_pt, hop_pt, next_pt, hop: PathHop, k: float,
                           wedges, tri_table, mesh, frames) -> tuple:
    """(wedge, lit, factor) for one specular hop: the F argument comes
    from the nearest wedge of the hit triangle, oriented so that
    triangle is the 0-face; crossing the edge is the beta+ = pi
    boundary.  Wedge is None when no edge frame is usable and the
    factor degrades to the binary inside test."""
    if _lost_flat_seam(hop_pt, hop.triangle, wedges, tri_table, mesh):
        return None, False, 0.0 + 0j
    wi = nearest_wedge(hop_pt, hop.triangle, wedges, tri_table, mesh)
    if wi is not None:
        frame = frames.oriented(wi, hop.triangle)
        try:
            geom = diffraction_geometry(frame, prev_pt, next_pt)
        except DegenerateGeometry:
            wi = None
        else:
            _, lit, factor = boundary_factor(geom, k, "rb")
            return wi, lit, factor
    inside = (value_of(hop.u) > 0 and value_of(hop.w) > 0
              and value_of(hop.u) + value_of(hop.w) < 1)
    return None, inside, (1.0 + 0j if inside else 0.0 + 0j)


class FrameCache:
    """Per-evaluation cache of wedge frames (also dual-generic)."""

    def __init__(self, mesh: Mesh, wedges: list[Wedge], vertices=None):
        self.mesh = mesh
        self.wedges = wedges
        self.vertices = vertices
        self._plain: dict[int, WedgeFrame] = {}
        self._oriented: dict[tuple[int, int], WedgeFrame] = {}

    def plain(self, wi: int) -> WedgeFrame:
        if wi not in self._plain:
            self._plain[wi] = wedge_frame(self.wedges[wi], self.mesh,
                                          self.vertices)
        return self._plain[wi]

    def oriented(self, wi: int, zero_face_tri: int) -> WedgeFrame:
        key = (wi, zero_face_tri)
        if key not in self._oriented:
            w = self.wedges[wi]
            if w.tri_b is not None and w.tri_b == zero_face_tri:
                flipped = Wedge(iv0=w.iv0, iv1=w.iv1, tri_a=w.tri_b,
                                tri_b=w.tri_a, alpha=w.alpha, e0=w.e1,
                                e1=w.e0, edge_dir=w.edge_dir, t0=w.t0,
                                n0=w.n0, length=w.length)
                self._oriented[key] = wedge_frame(flipped, self.mesh,
                                                  self.vertices)
            else:
                self._oriented[key] = self.plain(wi)
        return self._oriented[key]


def path_weight(path: TracedPath, mesh: Mesh, mode: WeightMode,
                k_wavenumber: float, wedges: list[Wedge] | None = None,
                tri_table=None, frames: FrameCache | None = None) -> object:
    """Composite hop-validity weight of a traced path under a mode.

    Binary and soft modes act on barycentric margins alone; transition
    mode evaluates the complex F factor per hop against the nearest
    wedge (lit side F, shadow side F - 1).  Segment occlusion is
    handled separately by secondary_visibility.
    """
    if path.kind == "diffracted" and mode.kind != "transition":
        raise ValueError("diffracted paths only participate in transition mode")
    if mode.kind == "binary":
        w = 1.0
        for hop in path.per_hop:
            u, ww = value_of(hop.u), value_of(hop.w)
            w *= 1.0 if (u > 0 and ww > 0 and u + ww < 1) else 0.0
        return complex(w)
    if mode.kind == "soft":
        w = 1.0
        for hop in path.per_hop:
            kk = mode.soft_k
            s1 = d_sigmoid(kk * hop.u)
            s2 = d_sigmoid(kk * hop.w)
            s3 = d_sigmoid(kk * (1.0 - hop.u - hop.w))
            m = s1
            for s in (s2, s3):
                m = s if value_of(s) < value_of(m) else m
            w = w * m
        return w
    # transition
    if wedges is None:
        from .geometry import extract_wedges
        wedges = extract_wedges(mesh)
    if tri_table is None:
        tri_table = wedges_by_triangle(wedges, len(mesh.triangles))
    if frames is None:
        frames = FrameCache(mesh, wedges)
    w = 1.0 + 0j
    details = []
    for i, hop in enumerate(path.per_hop):
        prev_pt = path.points[i]
        hop_pt = path.points[i + 1]
        next_pt = path.points[i + 2]
        wi, lit, factor = _hop_transition_factor(prev_pt, hop_pt, next_pt,
                                                 hop, k_wavenumber, wedges,
                                                 tri_table, mesh, frames)
        details.append((i, wi, lit, factor))
        w = w * factor
    path.diagnostics["hop_factors"] = details
    return w


# -- secondary visibility --------------------------------------------------------

def segment_wedge_factor(a, b, wi: int, k: float, frames: FrameCache,
                         src_virtual=None) -> object:
    """Incidence-shadow-boundary factor of segment (a, b) past wedge wi.
    src_virtual replaces a as the unfolded source position when the
    segment is an interior leg of a longer path."""
    src = a if src_virtual is None else src_virtual
    geom = diffraction_geometry(frames.plain(wi), src, b)
    _, _, factor = boundary_factor(geom, k, "isb")
    return factor


def secondary_visibility(e_spec, a, b, blocker_wedges: list[int], k: float,
                         frames: FrameCache, src_virtual=None,
                         materials_rn=None) -> object:
    """Blended field for one path segment against nearby blockers.

    The specular term is scaled by the product of per-wedge transition
    factors (F on the lit side of each silhouette, F - 1 past it); each
    wedge also contributes a first-order edge-diffracted term computed
    in the same unfolded geometry.  Far from every silhouette the result
    is e_spec exactly (empty blocker set).
    """
    if not blocker_wedges:
        return e_spec
    src = a if src_virtual is None else src_virtual
    total_w = 1.0 + 0j
    diffracted = 0.0 + 0j
    d_ab = vnorm(vsub(b, src))
    # effective source amplitude of the spherical hop
    amp = e_spec * d_ab * d_exp(1j * k * d_ab)
    for wi in blocker_wedges:
        frame = frames.plain(wi)
        try:
            geom = diffraction_geometry(frame, src, b)
        except DegenerateGeometry:
            continue
        _, _, factor = boundary_factor(geom, k, "isb")
        total_w = total_w * factor
        r0, rn = (-1.0, -1.0)
        if materials_rn is not None:
            r0, rn = materials_rn(wi, geom)
        L = geom.s * geom.s_prime * geom.sin_beta0 ** 2 / (geom.s + geom.s_prime)
        D = utd_coefficient(geom.phi, geom.phi_prime, frame.nu, L, k,
                            r0=r0, rn=rn, sin_beta0=geom.sin_beta0)
        spread = d_sqrt(geom.s_prime / (geom.s * (geom.s + geom.s_prime)))
        diffracted = diffracted + (amp * d_exp(-1j * k * geom.s_prime)
                                   / geom.s_prime * D * spread
                                   * d_exp(-1j * k * geom.s))
    return e_spec * total_w + diffracted


# -- measure-zero Monte Carlo diagnostic -----------------------------------------

def naive_mc_estimate(mesh: Mesh, tx, rx, n_samples: int, rng_seed: int = 0,
                      max_depth: int = 3, axis=(0.0, 0.0, -1.0),
                      k: float = 2.0 * math.pi) -> complex:
    """Hemisphere Monte Carlo with mirror-only (delta) BRDFs.

    Directions are sampled uniformly on the hemisphere about ``axis``;
    each ray bounces specularly.  A sample contributes only if a bounce
    segment passes exactly through rx, an event of measure zero for a
    point receiver: the estimate is exactly 0 for any sample count,
    while the image method finds the same paths deterministically.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    v = np.asarray(mesh.vertices, float)
    tri = np.asarray(mesh.triangles, int)
    a = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - a
    e2 = v[tri[:, 2]] - a
    normals = np.cross(e1, e2)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    axis_v = np.asarray(axis, float)
    axis_v /= np.linalg.norm(axis_v)
    rxv = np.asarray(vfloat(rx), float)

    total = 0.0 + 0.0j
    chunk = 262_144
    remaining = int(n_samples)
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        dirs = rng.normal(size=(m, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        flip = dirs @ axis_v < 0
        dirs[flip] = -dirs[flip]
        origins = np.tile(np.asarray(vfloat(tx), float), (m, 1))
        travel = np.zeros(m)
        last = np.full(m, -1, dtype=int)
        alive = np.ones(m, dtype=bool)
        for _ in range(max_depth):
            if not alive.any():
                break
            t_hit, idx = _batch_ray_hits(origins, dirs, a, e1, e2, last)
            hit = alive & (idx >= 0)
            if not hit.any():
                break
            # delta-BRDF receiver test: the segment must contain rx exactly
            rel = rxv - origins[hit]
            proj = np.einsum("ij,ij->i", rel, dirs[hit])
            perp = rel - proj[:, None] * dirs[hit]
            exact = (np.linalg.norm(perp, axis=1) == 0.0) \
                & (proj > 0) & (proj < t_hit[hit])
            if exact.any():
                rows = np.nonzero(hit)[0][exact]
                L = travel[rows] + proj[exact]
                total += np.sum(np.exp(-1j * k * L) / L)
            ph = origins[hit] + dirs[hit] * t_hit[hit, None]
            nh = normals[idx[hit]]
            dirs_h = dirs[hit] - 2.0 * np.einsum("ij,ij->i", dirs[hit], nh)[:, None] * nh
            travel[hit] += t_hit[hit]
            origins[hit] = ph
            dirs[hit] = dirs_h
            last[hit] = idx[hit]
            alive = hit
    return complex(total)
