import numpy as np
import pytest

from neuraluv.geometry import vertex_normals
from neuraluv.shapes import icosphere, open_cylinder, plane_grid


class TestPlaneGrid:
    def test_counts(self):
        mesh = plane_grid(50, 50)
        assert mesh.n_vertices == 2500
        assert mesh.n_faces == 2 * 49 * 49

    def test_flat_and_centered(self):
        mesh = plane_grid(7, 5)
        assert np.all(mesh.vertices[:, 2] == 0)
        np.testing.assert_allclose(mesh.vertices.mean(axis=0), 0, atol=1e-12)

    def test_consistent_winding(self):
        normals, valid = vertex_normals(plane_grid(6, 6))
        assert valid.all()
        np.testing.assert_allclose(normals[:, 2], 1.0, atol=1e-12)


class TestOpenCylinder:
    def test_closed_around_axis(self):
        mesh = open_cylinder(16, 4, radius=2.0)
        assert mesh.n_vertices == 64
        assert mesh.n_faces == 2 * 16 * 3
        radii = np.linalg.norm(mesh.vertices[:, :2], axis=1)
        np.testing.assert_allclose(radii, 2.0, atol=1e-12)

    def test_open_ends_have_boundary(self):
        mesh = open_cylinder(12, 3)
        # boundary edges appear in exactly one face
        edges = {}
        for f in mesh.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        boundary = [e for e, c in edges.items() if c == 1]
        assert len(boundary) == 2 * 12  # top and bottom rings


class TestIcosphere:
    @pytest.mark.parametrize("level,faces", [(0, 20), (1, 80), (2, 320)])
    def test_subdivision_counts(self, level, faces):
        assert icosphere(level).n_faces == faces

    def test_unit_radius(self):
        mesh = icosphere(3)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        np.testing.assert_allclose(radii, 1.0, atol=1e-12)

    def test_closed_manifold(self):
        mesh = icosphere(2)
        edges = {}
        for f in mesh.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        assert all(c == 2 for c in edges.values())
