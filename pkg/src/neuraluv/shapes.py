"""Synthetic test geometry: planar grids, open cylinders, icospheres."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh

__all__ = ["plane_grid", "open_cylinder", "icosphere"]


def plane_grid(nu: int, nv: int, width: float = 2.0, height: float = 2.0) -> TriMesh:
    """Rectangular grid mesh in the z = 0 plane, centered at the origin."""
    if nu < 2 or nv < 2:
        raise ValueError("grid needs at least 2 samples per axis")
    u = np.linspace(-width / 2.0, width / 2.0, nu)
    v = np.linspace(-height / 2.0, height / 2.0, nv)
    uu, vv = np.meshgrid(u, v)
    vertices = np.column_stack([uu.ravel(), vv.ravel(), np.zeros(nu * nv)])
    faces = _grid_faces(nu, nv, wrap_u=False)
    return TriMesh(vertices, faces)


def open_cylinder(
    n_theta: int, n_z: int, radius: float = 1.0, height: float = 2.0
) -> TriMesh:
    """Capless cylinder closed around its axis, open at both ends."""
    if n_theta < 3 or n_z < 2:
        raise ValueError("cylinder needs >= 3 angular and >= 2 axial samples")
    theta = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    z = np.linspace(-height / 2.0, height / 2.0, n_z)
    tt, zz = np.meshgrid(theta, z)
    vertices = np.column_stack(
        [radius * np.cos(tt.ravel()), radius * np.sin(tt.ravel()), zz.ravel()]
    )
    faces = _grid_faces(n_theta, n_z, wrap_u=True)
    return TriMesh(vertices, faces)


def _grid_faces(nu: int, nv: int, wrap_u: bool) -> np.ndarray:
    cols = nu if wrap_u else nu - 1
    quads = []
    for j in range(nv - 1):
        for i in range(cols):
            i1 = (i + 1) % nu
            a = j * nu + i
            b = j * nu + i1
            c = (j + 1) * nu + i1
            d = (j + 1) * nu + i
            quads.append((a, b, c))
            quads.append((a, c, d))
    return np.asarray(quads, dtype=np.int64)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Unit icosahedron subdivided ``subdivisions`` times, projected to a sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True) * radius
    return TriMesh(verts, faces)


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    midpoint: dict = {}
    verts_list = [v for v in verts]

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            verts_list.append(0.5 * (verts_list[a] + verts_list[b]))
            midpoint[key] = len(verts_list) - 1
        return midpoint[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.asarray(verts_list), np.asarray(out, dtype=np.int64)
