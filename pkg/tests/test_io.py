import numpy as np
import pytest

from neuraluv.geometry import PointSet, TriMesh
from neuraluv.io import (
    ParseError,
    export_obj_with_uv,
    load_obj,
    load_obj_with_uv,
    load_points,
    load_ply,
    read_loss_history,
    read_uv_rescale,
    write_loss_history,
    write_metrics_report,
    write_ply,
    write_xyz,
)
from neuraluv.metrics import MetricsReport
from neuraluv.model import LossHistory


class TestLoadObj:
    def test_minimal_triangle(self, tmp_path):
        path = tmp_path / "tri.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_obj(path)
        assert mesh.n_vertices == 3 and mesh.n_faces == 1
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])

    def test_quad_fan_triangulated(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        )
        mesh = load_obj(path)
        assert mesh.n_faces == 2
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_negative_indices_match_positive(self, tmp_path):
        pos = tmp_path / "pos.obj"
        neg = tmp_path / "neg.obj"
        body = "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
        pos.write_text(body + "f 1 2 3\n")
        neg.write_text(body + "f -3 -2 -1\n")
        a, b = load_obj(pos), load_obj(neg)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.faces, b.faces)

    def test_vt_and_vn_tolerated(self, tmp_path):
        path = tmp_path / "full.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
            "vn 0 0 1\nvt 0 0\nvt 1 0\nvt 0 1\n"
            "f 1/1/1 2/2/1 3/3/1\n"
        )
        mesh = load_obj(path)
        assert mesh.uv is None  # vt ignored by the plain loader
        assert mesh.n_faces == 1

    def test_malformed_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0\nf 1 2 3\n")
        with pytest.raises(ParseError, match=":2:"):
            load_obj(path)

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "oob.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(ParseError, match=":4:"):
            load_obj(path)

    def test_load_with_uv(self, tmp_path):
        path = tmp_path / "uv.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
            "vt 0.1 0.2\nvt 0.9 0.2\nvt 0.1 0.8\n"
            "f 1/1 2/2 3/3\n"
        )
        mesh = load_obj_with_uv(path)
        np.testing.assert_allclose(mesh.uv, [[0.1, 0.2], [0.9, 0.2], [0.1, 0.8]])


class TestLoadPoints:
    def test_three_columns_no_normals(self, tmp_path):
        path = tmp_path / "pts.xyz"
        path.write_text("0 0 0\n1 2 3\n")
        ps = load_points(path)
        assert ps.normals is None and len(ps) == 2

    def test_six_columns_renormalized(self, tmp_path):
        path = tmp_path / "pts.xyz"
        path.write_text("0 0 0 0 0 2\n1 2 3 3 0 0\n")
        ps = load_points(path)
        np.testing.assert_allclose(ps.normals, [[0, 0, 1], [1, 0, 0]])

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0 1\n")
        with pytest.raises(ParseError, match="3 or 6 columns"):
            load_points(path)

    def test_cross_format_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        pos = rng.normal(size=(40, 3))
        nrm = rng.normal(size=(40, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        ps = PointSet(pos, normals=nrm)
        xyz = tmp_path / "c.xyz"
        ply_a = tmp_path / "c_ascii.ply"
        ply_b = tmp_path / "c_bin.ply"
        write_xyz(xyz, ps)
        write_ply(ply_a, pos, normals=nrm, binary=False)
        write_ply(ply_b, pos, normals=nrm, binary=True)
        from_xyz = load_points(xyz)
        from_ascii = load_points(ply_a)
        from_bin = load_points(ply_b)
        np.testing.assert_allclose(from_ascii.positions, from_xyz.positions,
                                   atol=1e-12)
        np.testing.assert_array_equal(from_bin.positions, from_ascii.positions)
        np.testing.assert_allclose(from_bin.normals, from_xyz.normals, atol=1e-12)

    def test_ply_with_color_and_faces_skipped(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_bytes(
            b"ply\nformat ascii 1.0\n"
            b"element vertex 2\n"
            b"property float x\nproperty float y\nproperty float z\n"
            b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
            b"element face 1\nproperty list uchar int vertex_indices\n"
            b"end_header\n"
            b"0 0 0 255 0 0\n1 1 1 0 255 0\n"
            b"3 0 1 0\n"
        )
        ps = load_ply(path)
        assert len(ps) == 2 and ps.normals is None


class TestExportObjWithUv:
    def test_counts_and_rescale(self, tmp_path):
        mesh = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), [[0, 1, 2]])
        uv = np.array([[-3.0, 2.0], [1.0, 2.0], [-3.0, 5.0]])
        path = tmp_path / "out.obj"
        scale, offset = export_obj_with_uv(mesh, uv, path)
        text = path.read_text()
        assert text.count("\nvt ") + text.startswith("vt ") == 3
        assert text.count("\nv ") == 3
        exported = load_obj_with_uv(path)
        assert exported.uv.min() >= 0.0 and exported.uv.max() <= 1.0
        got_scale, got_offset = read_uv_rescale(path)
        assert got_scale == scale
        recovered = exported.uv / got_scale + got_offset
        assert np.abs(recovered - uv).max() < 1e-6

    def test_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(1)
        from neuraluv.shapes import plane_grid

        mesh = plane_grid(5, 5)
        uv = rng.normal(size=(mesh.n_vertices, 2)) * 7 + 3
        path = tmp_path / "rt.obj"
        export_obj_with_uv(mesh, uv, path)
        back = load_obj_with_uv(path)
        scale, offset = read_uv_rescale(path)
        assert np.abs(back.uv / scale + offset - uv).max() < 1e-6
        np.testing.assert_array_equal(back.faces, mesh.faces)
        # raw sidecar carries the free-boundary coordinates verbatim
        sidecar = np.loadtxt(str(path) + ".rawuv.txt")
        assert np.abs(sidecar - uv).max() < 1e-12


class TestHistoryTable:
    def test_round_trip(self, tmp_path):
        hist = LossHistory()
        for i in range(5):
            hist.append(i, 0.1 * i, 0.2 * i, 0.3 * i, 0.4 * i, i)
        path = tmp_path / "hist.tsv"
        write_loss_history(path, hist)
        data = read_loss_history(path)
        np.testing.assert_allclose(data, hist.as_array())

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\tb\n1\t2\n")
        with pytest.raises(ValueError):
            read_loss_history(path)


class TestMetricsWriter:
    def test_writes_tsv_and_json(self, tmp_path):
        report = MetricsReport(0.12, 0.001, 0.002, 100, 99, 1, 7, 0.0)
        write_metrics_report(tmp_path / "metrics", report)
        tsv = (tmp_path / "metrics.tsv").read_text().splitlines()
        assert tsv[0] == MetricsReport.header()
        import json

        data = json.loads((tmp_path / "metrics.json").read_text())
        assert data["conformality"] == pytest.approx(0.12)
        assert data["seam_count"] == 7
