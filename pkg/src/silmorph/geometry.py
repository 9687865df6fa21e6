"""Triangle meshes, STL I/O, rigid transforms, and exact closest-surface queries.

All coordinates are millimeters. Meshes are immutable after construction;
the spatial index supports unlimited concurrent read-only queries.
"""

from __future__ import annotations

import json
import struct
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyMeshError,
    MeshError,
    MeshLoadError,
    NonOrientableMeshError,
)

WELD_TOLERANCE_MM = 1e-6
MIN_TRIANGLE_AREA_MM2 = 1e-12
_ORTHO_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle surface with derived unit vertex normals."""

    vertices: np.ndarray       # (n, 3) float64, mm
    triangles: np.ndarray      # (m, 3) int32, counterclockwise = outward
    vertex_normals: np.ndarray  # (n, 3) float64, unit

    def __post_init__(self):
        v, t, n = self.vertices, self.triangles, self.vertex_normals
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("vertices must be (n,3) and triangles (m,3)")
        if len(v) == 0 or len(t) == 0:
            raise EmptyMeshError("mesh has no vertices or no triangles")
        if not np.isfinite(v).all():
            raise MeshError("non-finite vertex coordinates")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        areas = triangle_areas(v, t)
        if (areas <= MIN_TRIANGLE_AREA_MM2).any():
            k = int(np.argmin(areas))
            raise MeshError(f"degenerate triangle {k} (area {areas[k]:.3e} mm^2)")
        norms = np.linalg.norm(n, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise MeshError("vertex normals are not unit length")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "triangles", _freeze(t))
        object.__setattr__(self, "vertex_normals", _freeze(n))

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "TriMesh":
        """Build a mesh, deriving area-weighted unit vertex normals."""
        v = np.asarray(vertices, dtype=np.float64)
        t = np.asarray(triangles, dtype=np.int32)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        return cls(v, t, vertex_normals_from(v, t))

    def with_vertices(self, vertices) -> "TriMesh":
        """Same topology with replaced vertex positions (normals recomputed)."""
        return TriMesh.from_arrays(vertices, self.triangles)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def triangle_corners(self) -> np.ndarray:
        """(m, 3, 3) array of triangle vertex positions."""
        return self.vertices[self.triangles]


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box in mm."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if (lo > hi).any():
            raise MeshError("Aabb min corner exceeds max corner")
        object.__setattr__(self, "min_corner", _freeze(lo))
        object.__setattr__(self, "max_corner", _freeze(hi))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))


@dataclass(frozen=True)
class SurfaceHit:
    """Result of a closest-point-on-surface query."""

    point: np.ndarray        # closest point on the surface, mm
    triangle_index: int
    distance: float          # unsigned, mm
    signed_distance: float   # positive outside per the triangle's normal


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: rotation then translation."""

    rotation: np.ndarray     # (3, 3) proper orthonormal
    translation: np.ndarray  # (3,) mm

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise MeshError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise MeshError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


# ---------------------------------------------------------------------------
# rotation helpers


def rot_x_deg(angle: float) -> np.ndarray:
    a = np.deg2rad(angle)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y_deg(angle: float) -> np.ndarray:
    a = np.deg2rad(angle)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z_deg(angle: float) -> np.ndarray:
    a = np.deg2rad(angle)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix (Shepperd's method)."""
    r = np.asarray(r, dtype=np.float64)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                      (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                      0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def pose_to_json(pose: RigidTransform) -> dict:
    q = quat_from_matrix(pose.rotation)
    return {"rotation_quat_wxyz": [float(c) for c in q],
            "translation_mm": [float(c) for c in pose.translation]}


def pose_from_json(doc: dict) -> RigidTransform:
    r = matrix_from_quat(np.asarray(doc["rotation_quat_wxyz"], dtype=np.float64))
    # renormalize against quantization from the JSON round trip
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return RigidTransform(r, np.asarray(doc["translation_mm"], dtype=np.float64))


def save_pose(pose: RigidTransform, path) -> None:
    with open(path, "w") as f:
        json.dump(pose_to_json(pose), f, indent=2, sort_keys=True)
        f.write("\n")


def load_pose(path) -> RigidTransform:
    with open(path) as f:
        return pose_from_json(json.load(f))


# ---------------------------------------------------------------------------
# derived quantities


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def triangle_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Unit geometric normals (counterclockwise winding = outward)."""
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    lens = np.linalg.norm(n, axis=1, keepdims=True)
    return n / lens


def vertex_normals_from(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    face = np.cross(b - a, c - a)  # length = 2 * area
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    lens = np.linalg.norm(acc, axis=1)
    if (lens < 1e-20).any():
        raise MeshError("vertex normal vanished (opposing or missing faces)")
    return acc / lens[:, None]


def bounding_box(mesh: TriMesh) -> Aabb:
    """Tight componentwise bounds of the vertex set."""
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def transform_mesh(mesh: TriMesh, t: RigidTransform) -> TriMesh:
    """Map every vertex by rotation then translation; rotate normals."""
    return TriMesh(
        t.apply(mesh.vertices),
        mesh.triangles,
        mesh.vertex_normals @ t.rotation.T,
    )


def scale_mesh(mesh: TriMesh, factor: float, center=None) -> TriMesh:
    """Scale uniformly about `center` (default: mesh centroid)."""
    if factor <= 0:
        raise MeshError(f"scale factor must be positive, got {factor}")
    c = mesh.centroid if center is None else np.asarray(center, dtype=np.float64)
    return TriMesh(
        c + factor * (mesh.vertices - c),
        mesh.triangles,
        mesh.vertex_normals,
    )


# ---------------------------------------------------------------------------
# STL I/O

_BINARY_FACET = struct.Struct("<12fH")


def load_mesh(path) -> TriMesh:
    """Read a text or binary STL file.

    Duplicate vertices are welded at 1e-6 mm, degenerate facets dropped,
    winding is repaired to a consistent orientation per connected component
    (majority vote), and area-weighted normals are recomputed.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise MeshLoadError(f"cannot read {path}: {e}") from e
    if len(raw) == 0:
        raise MeshLoadError(f"{path}: empty file")
    facets = _parse_stl(raw, str(path))
    if len(facets) == 0:
        raise EmptyMeshError(f"{path}: STL contains no facets")
    vertices, triangles = _weld(facets.reshape(-1, 3))
    triangles = _drop_degenerate(vertices, triangles)
    if len(triangles) == 0:
        raise EmptyMeshError(f"{path}: all facets degenerate after welding")
    vertices, triangles = _compact(vertices, triangles)
    triangles = _orient_consistently(triangles)
    return TriMesh.from_arrays(vertices, triangles)


def save_mesh(mesh: TriMesh, path, binary: bool = True) -> None:
    """Write STL (binary by default). Rejects invalid meshes before writing."""
    if not np.isfinite(mesh.vertices).all():
        raise MeshError("refusing to write mesh with non-finite vertices")
    corners = mesh.triangle_corners()
    normals = triangle_normals(mesh.vertices, mesh.triangles)
    try:
        if binary:
            _write_binary_stl(corners, normals, path)
        else:
            _write_text_stl(corners, normals, path)
    except OSError as e:
        raise MeshLoadError(f"cannot write {path}: {e}") from e


def _parse_stl(raw: bytes, name: str) -> np.ndarray:
    """Return (m, 3, 3) float64 facet corners from text or binary STL bytes."""
    if raw[:5] == b"solid":
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError:
            text = None
        if text is not None and "facet" in text[:4096].lower():
            return _parse_text_stl(text, name)
        if text is not None and "endsolid" in text.lower():
            return np.zeros((0, 3, 3))  # well-formed but facet-free
    return _parse_binary_stl(raw, name)


def _parse_text_stl(text: str, name: str) -> np.ndarray:
    tokens = text.split()
    tri = []
    i = 0
    n = len(tokens)
    try:
        while i < n:
            tok = tokens[i].lower()
            if tok == "vertex":
                tri.append([float(tokens[i + 1]), float(tokens[i + 2]),
                            float(tokens[i + 3])])
                i += 4
            else:
                i += 1
    except (ValueError, IndexError) as e:
        raise MeshLoadError(f"{name}: malformed text STL: {e}") from e
    if len(tri) % 3 != 0:
        raise MeshLoadError(f"{name}: vertex count not a multiple of 3")
    return np.asarray(tri, dtype=np.float64).reshape(-1, 3, 3)


def _parse_binary_stl(raw: bytes, name: str) -> np.ndarray:
    if len(raw) < 84:
        raise MeshLoadError(f"{name}: binary STL shorter than header")
    (count,) = struct.unpack_from("<I", raw, 80)
    expected = 84 + 50 * count
    if len(raw) < expected:
        raise MeshLoadError(
            f"{name}: binary STL truncated ({len(raw)} bytes, expected {expected})")
    rec = np.frombuffer(raw, dtype=np.dtype("(4,3)<f4, <u2"), count=count, offset=84)
    return rec["f0"][:, 1:, :].astype(np.float64)


def _write_binary_stl(corners: np.ndarray, normals: np.ndarray, path) -> None:
    m = len(corners)
    rec = np.zeros(m, dtype=np.dtype("(4,3)<f4, <u2"))
    rec["f0"][:, 0, :] = normals.astype(np.float32)
    rec["f0"][:, 1:, :] = corners.astype(np.float32)
    with open(path, "wb") as f:
        f.write(b"silmorph binary stl".ljust(80, b"\x00"))
        f.write(struct.pack("<I", m))
        f.write(rec.tobytes())


def _write_text_stl(corners: np.ndarray, normals: np.ndarray, path) -> None:
    with open(path, "w") as f:
        f.write("solid silmorph\n")
        for (a, b, c), n in zip(corners, normals):
            f.write(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}\n")
            f.write("    outer loop\n")
            for v in (a, b, c):
                f.write(f"      vertex {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            f.write("    endloop\n  endfacet\n")
        f.write("endsolid silmorph\n")


def _weld(points: np.ndarray):
    keys = np.round(points / WELD_TOLERANCE_MM).astype(np.int64)
    view = np.ascontiguousarray(keys).view(
        np.dtype((np.void, keys.dtype.itemsize * 3))).ravel()
    _, first, inverse = np.unique(view, return_index=True, return_inverse=True)
    vertices = points[first]
    triangles = inverse.astype(np.int32).reshape(-1, 3)
    return vertices, triangles


def _drop_degenerate(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    distinct = (
        (triangles[:, 0] != triangles[:, 1])
        & (triangles[:, 1] != triangles[:, 2])
        & (triangles[:, 0] != triangles[:, 2])
    )
    triangles = triangles[distinct]
    if len(triangles) == 0:
        return triangles
    return triangles[triangle_areas(vertices, triangles) > MIN_TRIANGLE_AREA_MM2]


def _compact(vertices: np.ndarray, triangles: np.ndarray):
    used, inverse = np.unique(triangles, return_inverse=True)
    return vertices[used], inverse.astype(np.int32).reshape(-1, 3)


def _orient_consistently(triangles: np.ndarray) -> np.ndarray:
    """Flood-fill winding repair; per component, majority winding wins.

    Raises NonOrientableMeshError when a contradiction is found (the surface
    cannot be consistently oriented). Edges shared by more than two triangles
    are not propagated across.
    """
    m = len(triangles)
    edge_map = defaultdict(list)
    for t in range(m):
        a, b, c = triangles[t]
        for u, v in ((a, b), (b, c), (c, a)):
            edge_map[(min(u, v), max(u, v))].append((t, u < v))
    flip = np.zeros(m, dtype=bool)
    visited = np.zeros(m, dtype=bool)
    adjacency = defaultdict(list)
    for entries in edge_map.values():
        if len(entries) == 2:
            (t1, d1), (t2, d2) = entries
            adjacency[t1].append((t2, d1 != d2))
            adjacency[t2].append((t1, d1 != d2))
    result = triangles.copy()
    for seed in range(m):
        if visited[seed]:
            continue
        component = [seed]
        visited[seed] = True
        queue = deque([seed])
        while queue:
            t = queue.popleft()
            for nb, consistent in adjacency[t]:
                required = flip[t] if consistent else not flip[t]
                if visited[nb]:
                    if flip[nb] != required:
                        raise NonOrientableMeshError(
                            "mesh winding cannot be made consistent")
                else:
                    flip[nb] = required
                    visited[nb] = True
                    component.append(nb)
                    queue.append(nb)
        comp = np.asarray(component)
        if flip[comp].sum() * 2 > len(comp):
            flip[comp] = ~flip[comp]
    result[flip] = result[flip][:, [0, 2, 1]]
    return result


# ---------------------------------------------------------------------------
# closest-point-on-surface queries


def closest_point_on_triangles(corners: np.ndarray, points: np.ndarray):
    """Closest point on each triangle to its paired query point.

    corners: (k, 3, 3), points: (k, 3). Returns (closest (k,3), squared
    distance (k,)). Region method from Ericson, vectorized over rows; the
    arithmetic is elementwise, so results are identical for any batching of
    the same (triangle, point) pairs.
    """
    a = corners[:, 0, :]
    b = corners[:, 1, :]
    c = corners[:, 2, :]
    p = points

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)

    result = np.empty_like(p)
    remain = np.ones(len(p), dtype=bool)

    is_a = (d1 <= 0.0) & (d2 <= 0.0)
    result[is_a] = a[is_a]
    remain &= ~is_a

    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    is_b = (d3 >= 0.0) & (d4 <= d3) & remain
    result[is_b] = b[is_b]
    remain &= ~is_b

    vc = d1 * d4 - d3 * d2
    is_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0) & remain
    if is_ab.any():
        v = (d1[is_ab] / (d1[is_ab] - d3[is_ab]))[:, None]
        result[is_ab] = a[is_ab] + v * ab[is_ab]
        remain &= ~is_ab

    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    is_c = (d6 >= 0.0) & (d5 <= d6) & remain
    result[is_c] = c[is_c]
    remain &= ~is_c

    vb = d5 * d2 - d1 * d6
    is_ac = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0) & remain
    if is_ac.any():
        w = (d2[is_ac] / (d2[is_ac] - d6[is_ac]))[:, None]
        result[is_ac] = a[is_ac] + w * ac[is_ac]
        remain &= ~is_ac

    va = d3 * d6 - d5 * d4
    is_bc = (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0) & remain
    if is_bc.any():
        d43 = d4[is_bc] - d3[is_bc]
        w = (d43 / (d43 + d5[is_bc] - d6[is_bc]))[:, None]
        result[is_bc] = b[is_bc] + w * (c[is_bc] - b[is_bc])
        remain &= ~is_bc

    if remain.any():
        denom = 1.0 / (va[remain] + vb[remain] + vc[remain])
        v = (vb[remain] * denom)[:, None]
        w = (vc[remain] * denom)[:, None]
        result[remain] = a[remain] + ab[remain] * v + ac[remain] * w

    diff = result - p
    return result, np.einsum("ij,ij->i", diff, diff)


class MeshIndex:
    """Spatial index over mesh triangles for exact closest-point queries.

    Candidate triangles are prefiltered with a centroid k-d tree; a radius
    bound guarantees every triangle that could attain the minimum (including
    ties) is evaluated, so results match an exhaustive scan exactly,
    with ties broken toward the lowest triangle index.
    """

    def __init__(self, mesh: TriMesh):
        if len(mesh.triangles) == 0:
            raise EmptyMeshError("cannot index an empty mesh")
        self.mesh = mesh
        self._corners = mesh.triangle_corners()
        self._centroids = self._corners.mean(axis=1)
        self._radii = np.linalg.norm(
            self._corners - self._centroids[:, None, :], axis=2).max(axis=1)
        self._radius_max = float(self._radii.max())
        self._tree = cKDTree(self._centroids)
        self._geom_normals = triangle_normals(mesh.vertices, mesh.triangles)

    def closest_points(self, queries: np.ndarray):
        """Batch query: (points (n,3), triangle indices (n,), signed (n,)).

        Signed distance takes its sign from the winning triangle's geometric
        normal (positive outside).
        """
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(q)
        m = len(self._centroids)
        k = min(8, m)
        _, knn = self._tree.query(q, k=k)
        knn = knn.reshape(n, k)
        # exact distance to the k nearest-centroid triangles -> upper bound
        flat_tri = knn.ravel()
        _, d2 = closest_point_on_triangles(
            self._corners[flat_tri], np.repeat(q, k, axis=0))
        upper = np.sqrt(d2.reshape(n, k).min(axis=1))
        radii = upper + self._radius_max + 1e-12
        candidate_lists = self._tree.query_ball_point(q, radii)
        pair_tri = []
        offsets = np.empty(n + 1, dtype=np.int64)
        offsets[0] = 0
        for i, lst in enumerate(candidate_lists):
            lst.sort()
            pair_tri.append(lst)
            offsets[i + 1] = offsets[i] + len(lst)
        tri_idx = np.concatenate(
            [np.asarray(lst, dtype=np.int64) for lst in pair_tri])
        q_rep = np.repeat(q, np.diff(offsets), axis=0)
        pts, d2 = closest_point_on_triangles(self._corners[tri_idx], q_rep)
        d = np.sqrt(d2)
        starts = offsets[:-1]
        dmin = np.minimum.reduceat(d, starts)
        pos = np.arange(len(d), dtype=np.int64)
        masked = np.where(d == np.repeat(dmin, np.diff(offsets)), pos, len(d))
        best_pos = np.minimum.reduceat(masked, starts)
        best_tri = tri_idx[best_pos].astype(np.int64)
        best_pts = pts[best_pos]
        outward = np.einsum(
            "ij,ij->i", q - best_pts, self._geom_normals[best_tri])
        signed = np.where(outward >= 0.0, dmin, -dmin)
        return best_pts, best_tri, signed

    def closest_point(self, query) -> SurfaceHit:
        pts, tris, signed = self.closest_points(np.asarray(query, dtype=np.float64))
        return SurfaceHit(
            point=pts[0],
            triangle_index=int(tris[0]),
            distance=float(abs(signed[0])),
            signed_distance=float(signed[0]),
        )


def build_spatial_index(mesh: TriMesh) -> MeshIndex:
    return MeshIndex(mesh)


def closest_point_on_surface(index: MeshIndex, query) -> SurfaceHit:
    """Globally minimal unsigned distance; ties go to the lowest triangle index."""
    return index.closest_point(query)
