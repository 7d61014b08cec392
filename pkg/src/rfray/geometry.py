"""Mesh geometry: supporting planes, mirror images, barycentric tests,
wedge extraction, occlusion queries and a minimal OBJ subset.

Scalar-generic parts (supporting_plane, mirror_point, intersect_plane,
barycentric) accept float or Dual components so the tracer can run the
same code in forward and in derivative mode.  Bulk queries (occlusion,
wedge extraction) are float/numpy only.

Conventions
-----------
* Triangles keep their authored winding; the supporting-plane normal is
  (v1-v0) x (v2-v0).  Dihedral classification of interior edges assumes
  consistent outward winding across the mesh.
* A wedge's ``alpha`` is the dihedral angle of the free-space region
  around the edge (the side the face normals point into): pi for a flat
  fold, 3*pi/2 for the exterior edge of a box, 2*pi for a boundary edge
  with a single face (half-plane).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .vec3 import vadd, vsub, vscale, vdot, vcross, vnorm, vnormalize

__all__ = [
    "Mesh", "Plane", "Wedge", "supporting_plane", "mirror_point",
    "intersect_plane", "barycentric", "inside_triangle", "extract_wedges",
    "segment_occluders", "signed_clearance", "load_obj", "save_obj", "Bvh",
]

BVH_LEAF_SIZE = 4
BVH_MIN_TRIANGLES = 64


@dataclass
class Mesh:
    """Indexed triangle soup with per-triangle material ids."""

    vertices: np.ndarray          # (n, 3) float64
    triangles: np.ndarray         # (m, 3) int64
    material_ids: np.ndarray      # (m,) int64, index into material_names
    material_names: list[str] = field(default_factory=lambda: ["vacuum"])

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.material_ids) != len(self.triangles):
            raise ValueError("material_ids must have one entry per triangle")
        self.material_ids = np.asarray(self.material_ids, dtype=np.int64)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def tri_vertices(self, t: int):
        i, j, k = self.triangles[t]
        return self.vertices[i], self.vertices[j], self.vertices[k]


@dataclass
class Plane:
    """Plane through p0 with (unnormalized) normal n; components may be Dual."""

    p0: tuple
    n: tuple


@dataclass
class Wedge:
    """Edge shared by at most two faces, with its free-space dihedral frame.

    Vertex indices are kept so the frame can be rebuilt from perturbed
    vertices during differentiation.
    """

    iv0: int
    iv1: int
    tri_a: int
    tri_b: int | None          # None -> boundary edge (half-plane)
    alpha: float               # free-space dihedral, (0, 2*pi]
    e0: np.ndarray             # vertex positions
    e1: np.ndarray
    edge_dir: np.ndarray       # unit e1 - e0
    t0: np.ndarray             # unit in-plane direction from edge into face a
    n0: np.ndarray             # unit normal of face a (rotation sense reference)
    length: float

    @property
    def sharpness(self) -> float:
        return np.pi / self.alpha

    @property
    def is_boundary(self) -> bool:
        return self.tri_b is None


def supporting_plane(v0, v1, v2) -> Plane:
    """Plane of a triangle: anchor v0, normal (v1-v0) x (v2-v0)."""
    return Plane(tuple(v0), vcross(vsub(v1, v0), vsub(v2, v0)))


def mirror_point(p, plane: Plane):
    """Reflection of p through the plane: p - 2((p-p0).n / n.n) n."""
    n = plane.n
    d = vdot(vsub(p, plane.p0), n)
    nn = vdot(n, n)
    return vsub(p, vscale(n, 2.0 * d / nn))


def intersect_plane(a, b, plane: Plane):
    """Intersection of segment a->b with a plane.

    Returns (point, t) with t the segment parameter, or None when the
    segment is parallel to the plane (degenerate configuration).
    """
    n = plane.n
    d = vsub(b, a)
    denom = vdot(d, n)
    num = vdot(vsub(plane.p0, a), n)
    # the parallel test must act on primal values only
    dv = denom.val if hasattr(denom, "val") else denom
    nv = num.val if hasattr(num, "val") else num
    if abs(dv) < 1e-300 or abs(dv) < 1e-12 * (abs(nv) + 1.0):
        return None
    t = num / denom
    return vadd(a, vscale(d, t)), t


def barycentric(p, v0, v1, v2):
    """Coordinates (u, w) with p ~ v0 + u (v1-v0) + w (v2-v0).

    Solved from the 2x2 Gram system of the edge vectors; p is implicitly
    projected onto the triangle plane.
    """
    e1 = vsub(v1, v0)
    e2 = vsub(v2, v0)
    t = vsub(p, v0)
    g11 = vdot(e1, e1)
    g12 = vdot(e1, e2)
    g22 = vdot(e2, e2)
    b1 = vdot(e1, t)
    b2 = vdot(e2, t)
    det = g11 * g22 - g12 * g12
    u = (g22 * b1 - g12 * b2) / det
    w = (g11 * b2 - g12 * b1) / det
    return u, w


def inside_triangle(u, w, tol: float = 0.0) -> bool:
    """Closed-set test u >= 0, w >= 0, u + w <= 1 (optionally relaxed)."""
    return (u >= -tol) and (w >= -tol) and (u + w <= 1.0 + tol)


# -- wedge extraction ---------------------------------------------------------

def _perp_component(v, axis):
    return v - np.dot(v, axis) * axis


def extract_wedges(mesh: Mesh) -> list[Wedge]:
    """All edges of the mesh as wedges.

    Edges with two faces get the free-space dihedral angle; edges with a
    single face become half-plane wedges (alpha = 2*pi).  Edges shared
    by more than two faces are not a wedge; they are excluded with a
    warning.
    """
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for t, (i, j, k) in enumerate(mesh.triangles):
        for a, b in ((i, j), (j, k), (k, i)):
            key = (min(a, b), max(a, b))
            edge_faces.setdefault(key, []).append(t)

    wedges: list[Wedge] = []
    for (iv0, iv1), faces in sorted(edge_faces.items()):
        if len(faces) > 2:
            warnings.warn(
                f"edge ({iv0},{iv1}) shared by {len(faces)} faces; "
                "not a wedge, excluded")
            continue
        e0 = mesh.vertices[iv0]
        e1 = mesh.vertices[iv1]
        edge = e1 - e0
        elen = float(np.linalg.norm(edge))
        if elen < 1e-15:
            warnings.warn(f"degenerate edge ({iv0},{iv1}) excluded")
            continue
        ehat = edge / elen

        tri_a = faces[0]
        apex_a = [v for v in mesh.triangles[tri_a] if v not in (iv0, iv1)][0]
        t0 = _perp_component(mesh.vertices[apex_a] - e0, ehat)
        t0n = np.linalg.norm(t0)
        if t0n < 1e-15:
            warnings.warn(f"degenerate face on edge ({iv0},{iv1}) excluded")
            continue
        t0 = t0 / t0n
        va, vb, vc = mesh.tri_vertices(tri_a)
        n0 = np.cross(vb - va, vc - va)
        n0 = _perp_component(n0, ehat)
        n0 = n0 / np.linalg.norm(n0)
        # enforce right-handed (t0, n0) about ehat so angles grow from the
        # face into the region the normal points to
        if np.dot(np.cross(t0, n0), ehat) < 0:
            ehat = -ehat
            e0, e1 = e1, e0

        if len(faces) == 1:
            alpha = 2.0 * np.pi
            tri_b = None
        else:
            tri_b = faces[1]
            apex_b = [v for v in mesh.triangles[tri_b] if v not in (iv0, iv1)][0]
            tb = _perp_component(mesh.vertices[apex_b] - e0, ehat)
            tbn = np.linalg.norm(tb)
            if tbn < 1e-15:
                warnings.warn(f"degenerate face on edge ({iv0},{iv1}) excluded")
                continue
            tb = tb / tbn
            ang = np.arctan2(np.dot(tb, n0), np.dot(tb, t0))
            alpha = float(ang % (2.0 * np.pi))
            if alpha == 0.0:
                alpha = 2.0 * np.pi
        wedges.append(Wedge(
            iv0=int(iv0), iv1=int(iv1), tri_a=int(tri_a), tri_b=tri_b,
            alpha=alpha, e0=e0.copy(), e1=e1.copy(), edge_dir=ehat.copy(),
            t0=t0.copy(), n0=n0.copy(), length=elen))
    return wedges


# -- ray/segment vs triangle (vectorized Moller-Trumbore) ----------------------

def _cross_rows(a, b):
    """Row-wise cross product without np.cross's axis shuffling."""
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _segment_hits(origin, direction, v0, v1, v2, t_lo, t_hi, eps=1e-12):
    """Boolean mask of triangles hit by origin + t*direction, t in (t_lo, t_hi)."""
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = _cross_rows(np.broadcast_to(direction, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origin - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = _cross_rows(tvec, e1)
    v = np.einsum("ij,j->i", qvec, direction) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    bary_tol = 1e-9
    return (ok & (u >= -bary_tol) & (v >= -bary_tol) & (u + v <= 1.0 + bary_tol)
            & (t > t_lo) & (t < t_hi))


class Bvh:
    """Axis-aligned BVH over triangles: longest-axis median split, small leaves.

    Used for occlusion queries once a mesh is large enough for the setup
    cost to pay off; below ``BVH_MIN_TRIANGLES`` queries fall back to a
    vectorized brute-force pass.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        tris = mesh.triangles
        v = mesh.vertices
        self.v0 = v[tris[:, 0]]
        self.v1 = v[tris[:, 1]]
        self.v2 = v[tris[:, 2]]
        self.lo = np.minimum(np.minimum(self.v0, self.v1), self.v2)
        self.hi = np.maximum(np.maximum(self.v0, self.v1), self.v2)
        self.centroid = (self.v0 + self.v1 + self.v2) / 3.0
        self.nodes: list[tuple] = []   # (lo, hi, left, right, tri_idx|None)
        if mesh.n_triangles:
            self._build(np.arange(mesh.n_triangles))

    def _build(self, idx) -> int:
        lo = self.lo[idx].min(axis=0)
        hi = self.hi[idx].max(axis=0)
        node = len(self.nodes)
        self.nodes.append(None)
        if len(idx) <= BVH_LEAF_SIZE:
            self.nodes[node] = (lo, hi, -1, -1, idx)
            return node
        axis = int(np.argmax(hi - lo))
        order = np.argsort(self.centroid[idx, axis], kind="stable")
        half = len(idx) // 2
        left = self._build(idx[order[:half]])
        right = self._build(idx[order[half:]])
        self.nodes[node] = (lo, hi, left, right, None)
        return node

    def segment_candidates(self, p, q):
        """Indices of triangles whose AABB the segment p->q may cross."""
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        s_lo = np.minimum(p, q)
        s_hi = np.maximum(p, q)
        out = []
        stack = [0]
        while stack:
            lo, hi, left, right, leaf = self.nodes[stack.pop()]
            if np.any(s_hi < lo) or np.any(s_lo > hi):
                continue
            if leaf is not None:
                out.append(leaf)
            else:
                stack.append(left)
                stack.append(right)
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(out)


def segment_occluders(p, q, mesh: Mesh, exclude=(), bvh: Bvh | None = None,
                      eps: float = 1e-9):
    """Triangle indices strictly crossed by the open segment p->q.

    ``exclude`` lists triangle indices whose hits are ignored (the
    reflecting triangles at the segment endpoints).  Intersections
    within ``eps`` of either endpoint (as a fraction of segment length)
    do not count as occlusion.
    """
    if mesh.n_triangles == 0:
        return np.empty(0, dtype=np.int64)
    if mesh.n_triangles <= 8 and bvh is None:
        # scalar Moller-Trumbore; array dispatch overhead dominates here
        px, py, pz = float(p[0]), float(p[1]), float(p[2])
        dx = float(q[0]) - px
        dy = float(q[1]) - py
        dz = float(q[2]) - pz
        out = []
        v = mesh.vertices
        for t in range(mesh.n_triangles):
            if t in exclude:
                continue
            i, j, k = mesh.triangles[t]
            ax, ay, az = v[i]
            e1x, e1y, e1z = v[j][0] - ax, v[j][1] - ay, v[j][2] - az
            e2x, e2y, e2z = v[k][0] - ax, v[k][1] - ay, v[k][2] - az
            hx = dy * e2z - dz * e2y
            hy = dz * e2x - dx * e2z
            hz = dx * e2y - dy * e2x
            det = e1x * hx + e1y * hy + e1z * hz
            if abs(det) <= 1e-12:
                continue
            inv = 1.0 / det
            sx, sy, sz = px - ax, py - ay, pz - az
            u = (sx * hx + sy * hy + sz * hz) * inv
            if u < -1e-9:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            w = (dx * qx + dy * qy + dz * qz) * inv
            if w < -1e-9 or u + w > 1.0 + 1e-9:
                continue
            tt = (e2x * qx + e2y * qy + e2z * qz) * inv
            if eps < tt < 1.0 - eps:
                out.append(t)
        return np.asarray(out, dtype=np.int64)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if bvh is not None and mesh.n_triangles >= BVH_MIN_TRIANGLES:
        cand = bvh.segment_candidates(p, q)
        if cand.size == 0:
            return np.empty(0, dtype=np.int64)
        v0, v1, v2 = bvh.v0[cand], bvh.v1[cand], bvh.v2[cand]
        hit = _segment_hits(p, q - p, v0, v1, v2, eps, 1.0 - eps)
        idx = cand[hit]
    else:
        tris = mesh.triangles
        v = mesh.vertices
        hit = _segment_hits(p, q - p, v[tris[:, 0]], v[tris[:, 1]],
                            v[tris[:, 2]], eps, 1.0 - eps)
        idx = np.nonzero(hit)[0]
    if len(exclude):
        keep = [i for i in idx.tolist() if i not in exclude]
        idx = np.asarray(keep, dtype=np.int64)
    return np.sort(idx)


def _segment_segment_distance(p0, p1, q0, q1):
    """Minimum distance between segments [p0,p1] and [q0,q1]."""
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = q1[0] - q0[0], q1[1] - q0[1], q1[2] - q0[2]
    wx, wy, wz = p0[0] - q0[0], p0[1] - q0[1], p0[2] - q0[2]
    a = ux * ux + uy * uy + uz * uz
    b = ux * vx + uy * vy + uz * vz
    c = vx * vx + vy * vy + vz * vz
    d = ux * wx + uy * wy + uz * wz
    e = vx * wx + vy * wy + vz * wz
    den = a * c - b * b
    if den > 1e-14 * max(a * c, 1e-300):
        s = min(1.0, max(0.0, (b * e - c * d) / den))
    else:
        s = 0.0
    t = min(1.0, max(0.0, (b * s + e) / c)) if c > 0 else 0.0
    # one clamped re-solve keeps the pair consistent on the boundary
    if a > 0:
        s = min(1.0, max(0.0, (b * t - d) / a))
    t = min(1.0, max(0.0, (b * s + e) / c)) if c > 0 else 0.0
    dx = (p0[0] + s * ux) - (q0[0] + t * vx)
    dy = (p0[1] + s * uy) - (q0[1] + t * vy)
    dz = (p0[2] + s * uz) - (q0[2] + t * vz)
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def signed_clearance(p, q, wedge: Wedge, mesh: Mesh) -> float:
    """Clearance of segment p->q past a wedge edge.

    Magnitude: minimum distance between the segment and the edge.
    Sign: positive when the segment clears the wedge's faces (lit),
    negative when it crosses one of them (shadowed).
    """
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    dist = _segment_segment_distance(p, q, wedge.e0, wedge.e1)
    tris = [wedge.tri_a] + ([wedge.tri_b] if wedge.tri_b is not None else [])
    for t in tris:
        v0, v1, v2 = mesh.tri_vertices(t)
        hit = _segment_hits(p, q - p, v0[None, :], v1[None, :], v2[None, :],
                            1e-9, 1.0 - 1e-9)
        if hit[0]:
            return -dist
    return dist


# -- OBJ subset ----------------------------------------------------------------

def load_obj(path, default_material: str = "vacuum") -> Mesh:
    """Minimal OBJ reader: ``v x y z``, ``f i j k`` (1-based, triangles
    only), ``usemtl NAME``.  Faces with more or fewer than three vertices
    are rejected with the offending line number.  Other keywords are
    ignored.
    """
    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    mat_ids: list[int] = []
    names: list[str] = [default_material]
    current = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kw = parts[0]
            if kw == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: malformed vertex")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif kw == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise ValueError(
                        f"{path}:{lineno}: face with {len(refs)} vertices; "
                        "only triangles are supported")
                idx = []
                for r in refs:
                    s = r.split("/", 1)[0]
                    i = int(s)
                    if i < 1:
                        raise ValueError(
                            f"{path}:{lineno}: only positive 1-based "
                            "indices are supported")
                    idx.append(i - 1)
                triangles.append(idx)
                mat_ids.append(current)
            elif kw == "usemtl":
                if len(parts) < 2:
                    raise ValueError(f"{path}:{lineno}: usemtl without a name")
                name = parts[1]
                if name not in names:
                    names.append(name)
                current = names.index(name)
            # vn/vt/o/g/s/mtllib etc. are outside the subset: skipped
    return Mesh(np.asarray(vertices, dtype=float).reshape(-1, 3),
                np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
                np.asarray(mat_ids, dtype=np.int64), names)


def save_obj(path, mesh: Mesh) -> None:
    """Write the mesh in the same OBJ subset that load_obj reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        last = None
        for t, tri in enumerate(mesh.triangles):
            mid = int(mesh.material_ids[t])
            if mid != last:
                fh.write(f"usemtl {mesh.material_names[mid]}\n")
                last = mid
            fh.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
