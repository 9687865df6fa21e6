"""Synthetic closed-surface generators for validation cases and tests."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh

_PHI = (1.0 + np.sqrt(5.0)) / 2.0


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere, outward winding."""
    v = np.array([
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    verts = [tuple(p) for p in v]
    faces = f.tolist()
    for _ in range(subdivisions):
        cache: dict = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = np.asarray(verts[i]) + np.asarray(verts[j])
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    vertices = np.asarray(verts, dtype=np.float64) * radius
    triangles = np.asarray(faces, dtype=np.int32)
    return _oriented_outward(vertices, triangles)


def superellipsoid(semi_axes=(30.0, 25.0, 20.0), exponent: float = 4.0,
                   subdivisions: int = 3) -> TriMesh:
    """Convex rounded-box surface |x/a|^p + |y/b|^p + |z/c|^p = 1 (mm).

    Sampled by radially mapping an icosphere, which keeps the vertex
    distribution close to uniform.
    """
    a, b, c = semi_axes
    sphere = icosphere(subdivisions=subdivisions, radius=1.0)
    n = sphere.vertices
    p = exponent
    s = (np.abs(n[:, 0] / a) ** p + np.abs(n[:, 1] / b) ** p
         + np.abs(n[:, 2] / c) ** p)
    r = s ** (-1.0 / p)
    return TriMesh.from_arrays(n * r[:, None], sphere.triangles)


def ellipsoid(semi_axes=(35.0, 22.0, 25.0), subdivisions: int = 3) -> TriMesh:
    return superellipsoid(semi_axes=semi_axes, exponent=2.0,
                          subdivisions=subdivisions)


def box(size=(20.0, 20.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box (12 triangles), outward winding."""
    sx, sy, sz = (s / 2.0 for s in size)
    cx, cy, cz = center
    corners = np.array([
        [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
        [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
    ]) + np.array([cx, cy, cz])
    quads = [
        [0, 3, 2, 1],  # -z
        [4, 5, 6, 7],  # +z
        [0, 1, 5, 4],  # -y
        [2, 3, 7, 6],  # +y
        [1, 2, 6, 5],  # +x
        [3, 0, 4, 7],  # -x
    ]
    tris = []
    for q in quads:
        tris.append([q[0], q[1], q[2]])
        tris.append([q[0], q[2], q[3]])
    return _oriented_outward(corners, np.asarray(tris, dtype=np.int32))


def _oriented_outward(vertices: np.ndarray, triangles: np.ndarray) -> TriMesh:
    # flip all faces if the signed volume comes out negative
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    volume = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
    if volume < 0:
        triangles = triangles[:, [0, 2, 1]]
    return TriMesh.from_arrays(vertices, triangles)
