import numpy as np
import pytest

from neuraluv.geometry import (
    PointSet,
    TriMesh,
    add_gaussian_noise,
    chamfer_distance,
    knn,
    normalize_points,
    sample_vertices,
    triangle_angles,
    uv_bbox_side,
    vertex_normals,
)
from neuraluv.shapes import icosphere, plane_grid


def knn_oracle(query, reference, k, exclude_self=False):
    """Exhaustive O(N^2) search with the (distance, index) tie rule."""
    idx = np.empty((len(query), k), dtype=np.int64)
    dist = np.empty((len(query), k))
    for i, q in enumerate(query):
        d2 = ((q - reference) ** 2).sum(axis=1)
        if exclude_self:
            d2[i] = np.inf
        order = sorted(range(len(reference)), key=lambda j: (d2[j], j))[:k]
        idx[i] = order
        dist[i] = np.sqrt(d2[order])
    return idx, dist


def chamfer_oracle(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


class TestNormalizePoints:
    def test_two_point_symmetry(self):
        ps = PointSet(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
        out, tf = normalize_points(ps)
        np.testing.assert_allclose(out.positions, [[-1, 0, 0], [1, 0, 0]])
        assert tf.scale == pytest.approx(1.0)
        np.testing.assert_allclose(tf.centroid, [1, 0, 0])

    def test_unit_cube_is_fixed_point(self):
        corners = np.array(
            [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
            dtype=np.float64,
        )
        out, tf = normalize_points(PointSet(corners))
        np.testing.assert_allclose(out.positions, corners)
        assert tf.scale == pytest.approx(1.0)
        np.testing.assert_allclose(tf.centroid, np.zeros(3), atol=1e-15)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        pos = rng.normal(size=(100, 3)) * 7.5 + 40.0
        out, tf = normalize_points(PointSet(pos))
        back = tf.invert(out.positions)
        assert np.abs(back - pos).max() < 1e-9

    def test_output_frame(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            pos = rng.normal(size=(50, 3)) * rng.uniform(0.1, 100)
            out, _ = normalize_points(PointSet(pos))
            assert np.abs(out.positions.mean(axis=0)).max() < 1e-9
            extent = out.positions.max(axis=0) - out.positions.min(axis=0)
            assert abs(extent.max() - 2.0) < 1e-9

    def test_zero_extent(self):
        with pytest.raises(ValueError, match="zero extent"):
            normalize_points(PointSet(np.ones((5, 3))))

    def test_normals_pass_through(self):
        normals = np.tile([0.0, 0.0, 1.0], (4, 1))
        ps = PointSet(np.diag([1.0, 2.0, 3.0, 4.0])[:, :3], normals=normals)
        out, _ = normalize_points(ps)
        np.testing.assert_array_equal(out.normals, normals)


class TestSampleVertices:
    def test_exhaustive_draw_is_permutation(self):
        verts = np.eye(4, 3) + np.arange(4)[:, None]
        mesh = TriMesh(verts, [[0, 1, 2]])
        ps = sample_vertices(mesh, 4, seed=11)
        got = ps.positions[np.lexsort(ps.positions.T)]
        want = verts[np.lexsort(verts.T)]
        np.testing.assert_array_equal(got, want)

    def test_full_draw_without_replacement(self):
        rng = np.random.default_rng(0)
        verts = rng.normal(size=(10000, 3))
        mesh = TriMesh(verts, np.zeros((0, 3), dtype=np.int64))
        ps = sample_vertices(mesh, 10000, seed=5)
        got = ps.positions[np.lexsort(ps.positions.T)]
        want = verts[np.lexsort(verts.T)]
        np.testing.assert_array_equal(got, want)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        mesh = TriMesh(rng.normal(size=(100, 3)), [[0, 1, 2]])
        a = sample_vertices(mesh, 10, seed=77)
        b = sample_vertices(mesh, 10, seed=77)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_oversample_with_replacement(self):
        mesh = TriMesh(np.eye(3), [[0, 1, 2]])
        ps = sample_vertices(mesh, 10, seed=2)
        assert len(ps) == 10

    def test_zero_count_rejected(self):
        mesh = TriMesh(np.eye(3), [[0, 1, 2]])
        with pytest.raises(ValueError):
            sample_vertices(mesh, 0, seed=0)

    def test_carries_normals(self):
        mesh = plane_grid(5, 5)
        ps = sample_vertices(mesh, 10, seed=3)
        assert ps.normals is not None
        assert np.abs(np.abs(ps.normals[:, 2]) - 1.0).max() < 1e-12


class TestKnn:
    def test_single_nearest(self):
        idx, dist = knn(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [3.0, 0.0]]), 1)
        assert idx[0, 0] == 0
        assert dist[0, 0] == pytest.approx(1.0)

    def test_self_exclusion(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        idx, _ = knn(pts, pts, 1)
        assert idx[0, 0] == 1
        assert idx[1, 0] == 0  # tie with 2, lower index wins
        assert idx[2, 0] == 1

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(200, 3))
        idx, dist = knn(pts, pts, 8)
        oidx, odist = knn_oracle(pts, pts, 8, exclude_self=True)
        np.testing.assert_array_equal(idx, oidx)
        np.testing.assert_array_equal(dist, odist)

    def test_matches_oracle_many_instances(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n = int(rng.integers(5, 500))
            k = int(rng.integers(1, min(n - 1, 16) + 1))
            d = int(rng.integers(2, 4))
            ref = rng.normal(size=(n, d))
            q = rng.normal(size=(int(rng.integers(1, 50)), d))
            idx, dist = knn(q, ref, k)
            oidx, odist = knn_oracle(q, ref, k)
            np.testing.assert_array_equal(idx, oidx)
            np.testing.assert_array_equal(dist, odist)

    def test_tie_rule_on_lattice(self):
        # integer lattice has many exactly-equal distances
        g = np.stack(np.meshgrid(np.arange(7.0), np.arange(7.0)), axis=-1)
        pts = g.reshape(-1, 2)
        idx, dist = knn(pts, pts, 5)
        oidx, odist = knn_oracle(pts, pts, 5, exclude_self=True)
        np.testing.assert_array_equal(idx, oidx)
        np.testing.assert_array_equal(dist, odist)

    def test_k_too_large(self):
        pts = np.zeros((3, 2))
        with pytest.raises(ValueError):
            knn(pts, pts, 3)  # self-excluded leaves only 2


class TestChamfer:
    def test_identity_zero(self):
        rng = np.random.default_rng(12)
        ps = PointSet(rng.normal(size=(30, 3)))
        value, _, _ = chamfer_distance(ps, ps)
        assert value == 0.0

    def test_singletons(self):
        a = PointSet(np.array([[0.0, 0, 0]]))
        b = PointSet(np.array([[1.0, 0, 0]]))
        value, ia, ib = chamfer_distance(a, b)
        assert value == pytest.approx(2.0)
        assert ia[0] == 0 and ib[0] == 0

    def test_matches_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            a = rng.normal(size=(50, 3))
            b = rng.normal(size=(50, 3))
            got, _, _ = chamfer_distance(PointSet(a), PointSet(b))
            assert got == pytest.approx(chamfer_oracle(a, b), abs=1e-12)

    def test_symmetric_and_positive(self):
        rng = np.random.default_rng(14)
        a = PointSet(rng.normal(size=(20, 3)))
        b = PointSet(rng.normal(size=(25, 3)))
        ab, _, _ = chamfer_distance(a, b)
        ba, _, _ = chamfer_distance(b, a)
        assert ab == pytest.approx(ba, abs=1e-15)
        assert ab > 0


class TestVertexNormals:
    def test_flat_square(self):
        mesh = TriMesh(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]]
        )
        normals, valid = vertex_normals(mesh)
        assert valid.all()
        np.testing.assert_allclose(normals, np.tile([0, 0, 1.0], (4, 1)), atol=1e-15)

    def test_octahedron_radial(self):
        verts = np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            dtype=np.float64,
        )
        faces = [
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ]
        normals, valid = vertex_normals(TriMesh(verts, faces))
        assert valid.all()
        cos = np.einsum("ij,ij->i", normals, verts)
        np.testing.assert_allclose(cos, np.ones(6), atol=1e-12)

    def test_icosphere_within_5_degrees(self):
        mesh = icosphere(3)
        normals, valid = vertex_normals(mesh)
        assert valid.all()
        exact = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
        cos = np.clip(np.einsum("ij,ij->i", normals, exact), -1, 1)
        assert np.degrees(np.arccos(cos)).max() < 5.0

    def test_isolated_vertex_flagged(self):
        mesh = TriMesh(np.vstack([np.eye(3), [5.0, 5.0, 5.0]]), [[0, 1, 2]])
        normals, valid = vertex_normals(mesh)
        assert valid[:3].all() and not valid[3]
        np.testing.assert_array_equal(normals[3], np.zeros(3))


class TestUvBboxSide:
    def test_simple(self):
        assert uv_bbox_side(np.array([[0.0, 0], [2.0, 1]])) == pytest.approx(2.0)

    def test_lattice(self):
        assert uv_bbox_side(np.array([[-1.0, -1], [1.0, 1]])) == pytest.approx(2.0)

    def test_matches_direct_scan(self):
        rng = np.random.default_rng(21)
        q = rng.normal(size=(100, 2)) * 3
        want = max(q[:, 0].max() - q[:, 0].min(), q[:, 1].max() - q[:, 1].min())
        assert uv_bbox_side(q) == pytest.approx(want, abs=0)

    def test_translation_invariant_scale_linear(self):
        rng = np.random.default_rng(22)
        q = rng.normal(size=(50, 2))
        base = uv_bbox_side(q)
        assert uv_bbox_side(q + [100.0, -40.0]) == pytest.approx(base, rel=1e-12)
        assert uv_bbox_side(q * 3.5) == pytest.approx(3.5 * base, rel=1e-12)

    def test_zero_extent(self):
        with pytest.raises(ValueError, match="zero extent"):
            uv_bbox_side(np.zeros((4, 2)))


class TestGaussianNoise:
    def test_level_zero_identity(self):
        rng = np.random.default_rng(31)
        ps = PointSet(rng.normal(size=(40, 3)))
        out = add_gaussian_noise(ps, 0.0, seed=1)
        np.testing.assert_array_equal(out.positions, ps.positions)

    def test_empirical_stddev(self):
        rng = np.random.default_rng(32)
        pos = rng.uniform(size=(100000, 3)) / np.sqrt(3.0)  # diagonal ~= 1
        ps = PointSet(pos)
        diag = np.linalg.norm(pos.max(axis=0) - pos.min(axis=0))
        out = add_gaussian_noise(ps, 0.01, seed=2)
        sigma = (out.positions - pos).std(axis=0)
        np.testing.assert_allclose(sigma, 0.01 * diag, rtol=0.1)

    def test_deterministic(self):
        ps = PointSet(np.random.default_rng(33).normal(size=(50, 3)))
        a = add_gaussian_noise(ps, 0.02, seed=9)
        b = add_gaussian_noise(ps, 0.02, seed=9)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_normals_dropped(self):
        normals = np.tile([1.0, 0, 0], (5, 1))
        ps = PointSet(np.random.default_rng(34).normal(size=(5, 3)), normals=normals)
        assert add_gaussian_noise(ps, 0.01, seed=0).normals is None


class TestTriangleAngles:
    def test_equilateral(self):
        a = triangle_angles([0, 0], [1, 0], [0.5, np.sqrt(3) / 2])
        np.testing.assert_allclose(a, np.full(3, np.pi / 3), atol=1e-12)

    def test_right_isoceles(self):
        a = triangle_angles([0, 0], [1, 0], [0, 1])
        np.testing.assert_allclose(a, [np.pi / 2, np.pi / 4, np.pi / 4], atol=1e-12)

    def test_angle_sum_identity(self):
        rng = np.random.default_rng(41)
        count = 0
        while count < 10000:
            p = rng.normal(size=(3, 3)) * rng.uniform(0.01, 100)
            try:
                angles = triangle_angles(p[0], p[1], p[2])
            except ValueError:
                continue
            assert abs(angles.sum() - np.pi) < 1e-9
            count += 1

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            triangle_angles([0, 0, 0], [1, 0, 0], [2, 0, 0])


class TestPointSetValidation:
    def test_non_unit_normals_rejected(self):
        with pytest.raises(ValueError):
            PointSet(np.zeros((2, 3)), normals=np.full((2, 3), 0.9))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PointSet(np.array([[np.nan, 0, 0]]))


class TestTriMeshValidation:
    def test_face_index_out_of_range(self):
        with pytest.raises(ValueError):
            TriMesh(np.eye(3), [[0, 1, 3]])

    def test_repeated_index_rejected(self):
        with pytest.raises(ValueError):
            TriMesh(np.eye(3), [[0, 1, 1]])

    def test_uv_row_count(self):
        with pytest.raises(ValueError):
            TriMesh(np.eye(3), [[0, 1, 2]], uv=np.zeros((2, 2)))
