"""Geometric kernels: Chamfer distance, hidden point removal, convex hulls,
mesh penetration depth, capsule overlap, and similarity Procrustes alignment.

Point clouds are plain float64 arrays of shape (N, 3) in meters. Nearest
neighbor queries go through a KD-tree but are exact (identical to exhaustive
search); nothing here is approximate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import ValidationError


def as_cloud(points, *, allow_empty: bool = False) -> np.ndarray:
    """Validate and return an (N, 3) float64 point array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"point cloud must be (N, 3), got {pts.shape}")
    if pts.shape[0] == 0 and not allow_empty:
        raise ValidationError("point cloud is empty")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class Capsule:
    """Line-segment-with-radius volume; endpoints in meters."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=np.float64)
        p1 = np.asarray(self.p1, dtype=np.float64)
        if p0.shape != (3,) or p1.shape != (3,):
            raise ValidationError("capsule endpoints must be 3-vectors")
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            raise ValidationError("capsule endpoints must be finite")
        if not (self.radius > 0):
            raise ValidationError("capsule radius must be positive")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh with per-triangle outward unit normals."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        n = np.asarray(self.normals, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError("mesh vertices must be (N, 3)")
        if t.ndim != 2 or t.shape[1] != 3 or t.shape[0] < 1:
            raise ValidationError("mesh triangles must be (M, 3) with M >= 1")
        if t.min() < 0 or t.max() >= v.shape[0]:
            raise ValidationError("triangle index out of range")
        if n.shape != (t.shape[0], 3):
            raise ValidationError("need one normal per triangle")
        if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-9):
            raise ValidationError("normals must be unit length within 1e-9")
        for name, arr in (("vertices", v), ("triangles", t), ("normals", n)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triangles(cls, vertices, triangles) -> "TriangleMesh":
        """Build a mesh computing normals from the right-handed winding."""
        v = np.asarray(vertices, dtype=np.float64)
        t = np.asarray(triangles, dtype=np.int64)
        if t.ndim != 2 or t.shape[1] != 3 or t.shape[0] < 1:
            raise ValidationError("mesh triangles must be (M, 3) with M >= 1")
        if t.min() < 0 or t.max() >= v.shape[0]:
            raise ValidationError("triangle index out of range")
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        n = np.cross(b - a, c - a)
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        if np.any(lengths < 1e-12):
            raise ValidationError("mesh has a degenerate (zero-area) triangle")
        return cls(v, t, n / lengths)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriangleMesh":
        """Rigidly transformed copy (rotation then translation)."""
        R = np.asarray(rotation, dtype=np.float64)
        return TriangleMesh(self.vertices @ R.T + translation, self.triangles, self.normals @ R.T)


def ground_plane(half_extent: float = 20.0, z: float = 0.0) -> TriangleMesh:
    """Square ground patch at height z with +z normals."""
    e = float(half_extent)
    vertices = np.array([[-e, -e, z], [e, -e, z], [e, e, z], [-e, e, z]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh.from_triangles(vertices, triangles)


def box_mesh(center, size) -> TriangleMesh:
    """Axis-aligned box with outward normals; size gives full edge lengths."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2.0
    corner = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
    )
    vertices = c + corner * h
    # Each face wound counter-clockwise seen from outside.
    faces = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    triangles = []
    for a, b, cc, d in faces:
        triangles.append((a, b, cc))
        triangles.append((a, cc, d))
    return TriangleMesh.from_triangles(vertices, np.asarray(triangles))


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    if not meshes:
        raise ValidationError("no meshes to merge")
    verts, tris, norms = [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        norms.append(m.normals)
        offset += m.vertices.shape[0]
    return TriangleMesh(np.vstack(verts), np.vstack(tris), np.vstack(norms))


# ---------------------------------------------------------------------------
# Chamfer distance
# ---------------------------------------------------------------------------


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance in m^2.

    Mean of squared nearest-neighbor distances from a to b plus the mean from
    b to a. The KD-tree only selects the (exact) nearest neighbors; distances
    are then recomputed from coordinates, so the result is bit-identical to an
    exhaustive evaluation.
    """
    pa = as_cloud(a)
    pb = as_cloud(b)
    _, idx_ab = cKDTree(pb).query(pa, k=1)
    _, idx_ba = cKDTree(pa).query(pb, k=1)
    d_ab = np.sum((pa - pb[idx_ab]) ** 2, axis=1)
    d_ba = np.sum((pb - pa[idx_ba]) ** 2, axis=1)
    return float(np.mean(d_ab) + np.mean(d_ba))


# ---------------------------------------------------------------------------
# Convex hull and hidden point removal
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HullResult:
    """Convex hull output; ``degenerate`` marks reduced-dimension inputs."""

    vertices: np.ndarray  # sorted indices into the input
    faces: np.ndarray     # (M, 3) triangles, empty when degenerate
    degenerate: bool


def _degenerate_hull(points: np.ndarray) -> HullResult:
    """Hull of a flat/collinear/coincident point set in its spanned subspace."""
    n = points.shape[0]
    centered = points - points.mean(axis=0)
    # Principal axes of the spanned subspace.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = 1e-9 * max(1.0, float(s[0]) if s.size else 1.0)
    rank = int(np.sum(s > tol))
    empty = np.zeros((0, 3), dtype=np.int64)
    if rank == 0:
        return HullResult(np.array([0], dtype=np.int64), empty, True)
    if rank == 1:
        proj = centered @ vt[0]
        idx = np.unique([int(np.argmin(proj)), int(np.argmax(proj))])
        return HullResult(np.sort(idx).astype(np.int64), empty, True)
    proj = centered @ vt[:2].T
    try:
        hull2d = ConvexHull(proj)
        idx = np.sort(hull2d.vertices)
    except QhullError:
        proj1 = centered @ vt[0]
        idx = np.unique([int(np.argmin(proj1)), int(np.argmax(proj1))])
    return HullResult(np.sort(np.asarray(idx, dtype=np.int64)), empty, True)


def convex_hull_3d(points) -> HullResult:
    """3D convex hull; every input point lies inside or on the returned faces.

    Degenerate inputs (under 4 points, or a coplanar/collinear/coincident set)
    fall back to the hull of the spanned subspace and are flagged.
    """
    pts = as_cloud(points)
    if pts.shape[0] < 4:
        return _degenerate_hull(pts)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return _degenerate_hull(pts)
    return HullResult(
        np.sort(hull.vertices.astype(np.int64)),
        hull.simplices.astype(np.int64),
        False,
    )


def hidden_point_removal(cloud, viewpoint, gamma: float = 2.0) -> np.ndarray:
    """Indices of points visible from ``viewpoint`` via spherical flipping.

    Points are moved to the viewpoint's frame and reflected outward across a
    sphere of radius ``10**gamma * max_distance``; the points whose flipped
    images land on the convex hull of the flipped set plus the origin are the
    visible ones. The cloud is pre-normalized by its max distance, which
    leaves the result unchanged (the construction is scale invariant) and
    keeps the hull numerically well conditioned.
    """
    pts = as_cloud(cloud)
    view = np.asarray(viewpoint, dtype=np.float64)
    if view.shape != (3,):
        raise ValidationError("viewpoint must be a 3-vector")
    rel = pts - view
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms < 1e-12):
        raise ValidationError("viewpoint coincides with a cloud point")
    d_max = norms.max()
    rel = rel / d_max
    norms = norms / d_max
    radius = 10.0**gamma
    flipped = rel * (2.0 * radius / norms - 1.0)[:, None]
    augmented = np.vstack([flipped, np.zeros(3)])
    hull = convex_hull_3d(augmented)
    origin_index = pts.shape[0]
    visible = hull.vertices[hull.vertices != origin_index]
    return np.sort(visible)


# ---------------------------------------------------------------------------
# Penetration depth
# ---------------------------------------------------------------------------


def _closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Closest point on each triangle for each query point.

    p: (P, 3); a, b, c: (T, 3). Returns (P, T, 3). Standard barycentric
    region classification, fully vectorized.
    """
    P = p.shape[0]
    T = a.shape[0]
    p = p[:, None, :]
    a = a[None, :, :]
    b = b[None, :, :]
    c = c[None, :, :]

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def safe_div(num, den):
        return num / np.where(np.abs(den) < 1e-300, 1.0, den)

    # Interior (barycentric) solution as the default.
    denom = va + vb + vc
    v = safe_div(vb, denom)[..., None]
    w = safe_div(vc, denom)[..., None]
    out = a + ab * v + ac * w

    # Edge BC region.
    t_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))[..., None]
    on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    out = np.where(on_bc[..., None], b + t_bc * (c - b), out)

    # Edge AC region.
    t_ac = safe_div(d2, d2 - d6)[..., None]
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(on_ac[..., None], a + t_ac * ac, out)

    # Edge AB region.
    t_ab = safe_div(d1, d1 - d3)[..., None]
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(on_ab[..., None], a + t_ab * ab, out)

    # Vertex regions override edges.
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], np.broadcast_to(c, (P, T, 3)), out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], np.broadcast_to(b, (P, T, 3)), out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], np.broadcast_to(a, (P, T, 3)), out)
    return out


def signed_depths(points, scene: TriangleMesh) -> np.ndarray:
    """Signed penetration against an oriented mesh: positive inside.

    For each point the closest surface point c and its triangle normal n give
    -(p - c) . n, so points on the outward side report their negative
    clearance along the local normal. Ties between equidistant triangles
    resolve to the lowest triangle index.
    """
    pts = as_cloud(points, allow_empty=True)
    if pts.shape[0] == 0:
        return np.zeros(0)
    tri = scene.triangles
    a, b, c = scene.vertices[tri[:, 0]], scene.vertices[tri[:, 1]], scene.vertices[tri[:, 2]]
    closest = _closest_points_on_triangles(pts, a, b, c)  # (P, T, 3)
    d2 = np.sum((pts[:, None, :] - closest) ** 2, axis=-1)
    best = np.argmin(d2, axis=1)
    rows = np.arange(pts.shape[0])
    cbest = closest[rows, best]
    nbest = scene.normals[best]
    return -np.sum((pts - cbest) * nbest, axis=1)


def penetration_depths(points, scene: TriangleMesh) -> np.ndarray:
    """Per-point penetration depth (>= 0, meters): clamped signed depth."""
    return np.maximum(signed_depths(points, scene), 0.0)


# ---------------------------------------------------------------------------
# Capsule overlap
# ---------------------------------------------------------------------------


def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Minimum distance between segments p1-q1 and p2-q2; broadcasts (..., 3)."""
    p1 = np.asarray(p1, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)

    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    denom = a * e - b * b

    safe = lambda x: np.where(np.abs(x) < 1e-300, 1.0, x)
    s = np.where(denom > 1e-14 * np.maximum(a * e, 1e-300),
                 np.clip((b * f - c * e) / safe(denom), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe(e)
    s = np.where(t < 0, np.clip(-c / safe(a), 0.0, 1.0), s)
    s = np.where(t > 1, np.clip((b - c) / safe(a), 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # Degenerate segments collapse to points.
    s = np.where(a < 1e-300, 0.0, s)
    t = np.where(e < 1e-300, 0.0, t)
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def capsule_overlap(a: Capsule, b: Capsule) -> float:
    """Overlap depth (>= 0, meters): radii sum minus the axis distance."""
    d = float(segment_segment_distance(a.p0, a.p1, b.p0, b.p1))
    return max(0.0, (a.radius + b.radius) - d)


# ---------------------------------------------------------------------------
# Procrustes alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityTransform:
    """Similarity map p -> scale * rotation @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual: float

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def procrustes_align(x, y) -> SimilarityTransform:
    """Least-squares similarity aligning x onto y (closed form).

    Minimizes sum_i ||s R x_i + t - y_i||^2 over scale s > 0, rotation R
    (det +1 enforced, reflections guarded), translation t. The reported
    residual is that sum at the optimum.
    """
    px = as_cloud(x)
    py = as_cloud(y)
    if px.shape != py.shape:
        raise ValidationError("point sets must have matching shapes")
    k = px.shape[0]
    if k < 3:
        raise ValidationError("need at least 3 point pairs")
    mu_x = px.mean(axis=0)
    mu_y = py.mean(axis=0)
    xc = px - mu_x
    yc = py - mu_y
    var_x = float(np.mean(np.sum(xc**2, axis=1)))
    if var_x < 1e-18:
        raise ValidationError("source points are all coincident")

    cov = (yc.T @ xc) / k
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_x)
    t = mu_y - s * R @ mu_x
    residual = float(np.sum((s * px @ R.T + t - py) ** 2))
    return SimilarityTransform(s, R, t, residual)


# ---------------------------------------------------------------------------
# ASCII PLY I/O
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_ply_cloud(points, path: str | Path) -> None:
    pts = as_cloud(points, allow_empty=True)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    for p in pts:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_ply_mesh(mesh: TriangleMesh, path: str | Path) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.vertices.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.triangles.shape[0]}",
        "property list uchar int vertex_indices",
        "property double nx",
        "property double ny",
        "property double nz",
        "end_header",
    ]
    for p in mesh.vertices:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    for tri, n in zip(mesh.triangles, mesh.normals):
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]} {_fmt(n[0])} {_fmt(n[1])} {_fmt(n[2])}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_ply_header(lines: list[str]):
    if not lines or lines[0].strip() != "ply":
        raise ValidationError("not a PLY file")
    elements = []  # (name, count)
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "end_header":
            return elements, i + 1
        if tok[0] == "format" and tok[1] != "ascii":
            raise ValidationError("only ascii PLY is supported")
        if tok[0] == "element":
            elements.append((tok[1], int(tok[2])))
        i += 1
    raise ValidationError("PLY header is not terminated")


def read_ply_cloud(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    elements, start = _parse_ply_header(lines)
    counts = dict(elements)
    n = counts.get("vertex", 0)
    rows = [tuple(map(float, lines[start + i].split()[:3])) for i in range(n)]
    return np.asarray(rows, dtype=np.float64).reshape(n, 3)


def read_ply_mesh(path: str | Path) -> TriangleMesh:
    lines = Path(path).read_text().splitlines()
    elements, start = _parse_ply_header(lines)
    counts = dict(elements)
    nv = counts.get("vertex", 0)
    nf = counts.get("face", 0)
    verts = np.asarray(
        [tuple(map(float, lines[start + i].split()[:3])) for i in range(nv)], dtype=np.float64
    ).reshape(nv, 3)
    tris = np.zeros((nf, 3), dtype=np.int64)
    normals = np.zeros((nf, 3))
    have_normals = True
    for i in range(nf):
        tok = lines[start + nv + i].split()
        if int(tok[0]) != 3:
            raise ValidationError("only triangle faces are supported")
        tris[i] = [int(tok[1]), int(tok[2]), int(tok[3])]
        if len(tok) >= 7:
            normals[i] = [float(tok[4]), float(tok[5]), float(tok[6])]
        else:
            have_normals = False
    if have_normals and nf > 0:
        return TriangleMesh(verts, tris, normals)
    return TriangleMesh.from_triangles(verts, tris)
