import numpy as np
import pytest

from neuraluv.cli import cli_main
from neuraluv.io import export_obj_with_uv, load_obj_with_uv, read_loss_history
from neuraluv.shapes import plane_grid


FAST = [
    "--n-points", "16", "--iters", "6", "--hidden-width", "8",
    "--latent-width", "4", "--no-early-stop", "--k-unwrap", "3",
]


@pytest.fixture()
def plane_obj(tmp_path):
    mesh = plane_grid(5, 5)
    path = tmp_path / "plane.obj"
    lines = [f"v {v[0]} {v[1]} {v[2]}" for v in mesh.vertices]
    lines += [f"f {f[0]+1} {f[1]+1} {f[2]+1}" for f in mesh.faces]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture()
def points_xyz(tmp_path):
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(30, 3))
    path = tmp_path / "cloud.xyz"
    np.savetxt(path, pts)
    return path


class TestTrainCommand:
    def test_full_pipeline_outputs(self, plane_obj, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli_main(
            ["train", "--input", str(plane_obj), "--out", str(out),
             "--seed", "7", *FAST]
        )
        assert code == 0
        for name in ("checkpoint.nuv", "loss_history.tsv", "uv.obj",
                     "uv.obj.rawuv.txt", "checker.ply", "seams.txt",
                     "seams.obj", "metrics.tsv", "metrics.json", "layout.png"):
            assert (out / name).exists(), name
        stdout = capsys.readouterr().out
        assert "conformality" in stdout

    def test_byte_identical_histories_under_seed(self, plane_obj, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert cli_main(
                ["train", "--input", str(plane_obj), "--out", str(out),
                 "--seed", "7", *FAST]
            ) == 0
        assert (out_a / "loss_history.tsv").read_bytes() == \
            (out_b / "loss_history.tsv").read_bytes()
        assert (out_a / "layout.png").read_bytes() == \
            (out_b / "layout.png").read_bytes()

    def test_point_cloud_input(self, points_xyz, tmp_path):
        out = tmp_path / "ptsrun"
        code = cli_main(
            ["train", "--input", str(points_xyz), "--out", str(out),
             "--seed", "3", *FAST]
        )
        assert code == 0
        assert (out / "raw_uv.txt").exists()
        assert (out / "points.xyz").exists()

    def test_history_matches_table_format(self, plane_obj, tmp_path):
        out = tmp_path / "fmt"
        cli_main(["train", "--input", str(plane_obj), "--out", str(out),
                  "--seed", "1", *FAST])
        data = read_loss_history(out / "loss_history.tsv")
        assert data.shape == (6, 6)
        np.testing.assert_array_equal(data[:, 0], np.arange(6))


class TestAblateCommand:
    @pytest.mark.parametrize("mode", ["no-branch-a", "no-branch-b", "no-cut-net"])
    def test_modes_run(self, plane_obj, tmp_path, mode):
        out = tmp_path / mode
        code = cli_main(
            ["ablate", "--input", str(plane_obj), "--out", str(out),
             "--mode", mode, "--seed", "2", *FAST]
        )
        assert code == 0
        assert (out / "loss_history.tsv").exists()


class TestUnwrapCommand:
    def test_checkpoint_reuse(self, plane_obj, tmp_path):
        out = tmp_path / "train"
        assert cli_main(["train", "--input", str(plane_obj), "--out", str(out),
                         "--seed", "5", *FAST]) == 0
        new_pts = tmp_path / "new.xyz"
        rng = np.random.default_rng(8)
        np.savetxt(new_pts, rng.uniform(-1, 1, size=(12, 3)))
        out2 = tmp_path / "unwrap"
        code = cli_main(
            ["unwrap", "--checkpoint", str(out / "checkpoint.nuv"),
             "--input", str(new_pts), "--out", str(out2)]
        )
        assert code == 0
        uv = np.loadtxt(out2 / "raw_uv.txt")
        assert uv.shape == (12, 2) and np.isfinite(uv).all()


class TestMetricsCommand:
    def test_flat_similarity_map_scores_zero(self, tmp_path, capsys):
        mesh = plane_grid(4, 4)
        uv = mesh.vertices[:, :2] * 2.5 + 1.0
        path = tmp_path / "flat.obj"
        export_obj_with_uv(mesh, uv, path)
        code = cli_main(["metrics", "--input", str(path)])
        assert code == 0
        stdout = capsys.readouterr().out
        lines = [l for l in stdout.splitlines() if l and not l.startswith("conf")]
        value = float(lines[-1].split("\t")[0])
        assert value == pytest.approx(0.0, abs=1e-9)

    def test_written_report(self, tmp_path):
        mesh = plane_grid(4, 4)
        path = tmp_path / "flat.obj"
        export_obj_with_uv(mesh, mesh.vertices[:, :2], path)
        out = tmp_path / "m"
        assert cli_main(["metrics", "--input", str(path),
                         "--out", str(out)]) == 0
        assert (out / "metrics.json").exists()


class TestNoiseCommand:
    def test_levels_table(self, plane_obj, tmp_path):
        out = tmp_path / "noise"
        code = cli_main(
            ["noise", "--input", str(plane_obj), "--out", str(out),
             "--levels", "0.0", "0.01", "--seed", "4", *FAST]
        )
        assert code == 0
        lines = (out / "noise_metrics.tsv").read_text().splitlines()
        assert len(lines) == 3  # header + 2 levels


class TestRenderCommand:
    def test_render_obj_with_uv(self, tmp_path):
        mesh = plane_grid(4, 4)
        path = tmp_path / "flat.obj"
        export_obj_with_uv(mesh, mesh.vertices[:, :2], path)
        img = tmp_path / "layout.png"
        assert cli_main(["render", "--input", str(path),
                         "--out", str(img)]) == 0
        assert img.exists()

    def test_render_points_with_uv_file(self, points_xyz, tmp_path):
        uv_file = tmp_path / "uv.txt"
        rng = np.random.default_rng(9)
        np.savetxt(uv_file, rng.normal(size=(30, 2)))
        img = tmp_path / "pts.svg"
        assert cli_main(
            ["render", "--input", str(points_xyz), "--kind", "points",
             "--uv-file", str(uv_file), "--out", str(img), "--checker"]
        ) == 0
        assert img.exists()


class TestErrorPaths:
    def test_missing_input_file(self, tmp_path, capsys):
        code = cli_main(["train", "--input", str(tmp_path / "nope.obj"),
                         "--out", str(tmp_path / "o"), *FAST])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_workers_env(self, plane_obj, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("NEURALUV_WORKERS", "banana")
        code = cli_main(["metrics", "--input", str(plane_obj)])
        assert code == 1
        assert "NEURALUV_WORKERS" in capsys.readouterr().err

    def test_train_requires_out(self, plane_obj):
        assert cli_main(["train", "--input", str(plane_obj), *FAST]) == 1
