"""Command-line surface: train / unwrap / metrics / ablate / noise / render.

Every subcommand is deterministic under a fixed ``--seed``. The
``NEURALUV_WORKERS`` environment variable caps BLAS threading where the
runtime supports it (computation is otherwise identical).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import PointSet, TriMesh, normalize_points, NormalizationTransform
from .io import (
    export_obj_with_uv,
    load_obj,
    load_obj_with_uv,
    load_points,
    write_loss_history,
    write_metrics_report,
    write_ply,
    write_xyz,
)
from .metrics import evaluate_mesh, noise_robustness_run
from .model import (
    ABLATION_MODES,
    CycleMapper,
    TrainConfig,
    evaluate_branches,
    extract_seams_auto,
    make_grid,
    match_uv_by_nn,
    parameterize,
    train,
)
from .render import assign_checker_colors, render_uv_layout

__all__ = ["RunConfig", "cli_main", "main"]


@dataclass
class RunConfig:
    """Everything one pipeline invocation needs."""

    input_path: str
    output_dir: Optional[str] = None
    input_kind: str = "auto"  # mesh | points | auto
    ablation: str = "full"
    noise_levels: tuple = ()
    seed: int = 0
    hidden_width: int = 512
    latent_width: int = 64
    checker_period: float = 0.05
    image_size: int = 800
    image_format: str = "png"
    train_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ablation not in ABLATION_MODES:
            raise ValueError(f"ablation must be one of {ABLATION_MODES}")
        if self.input_kind not in ("auto", "mesh", "points"):
            raise ValueError("input kind must be auto, mesh, or points")
        if self.image_format not in ("png", "svg"):
            raise ValueError("image format must be png or svg")

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, ablation=self.ablation,
                           **self.train_overrides)


def _configure_workers() -> None:
    value = os.environ.get("NEURALUV_WORKERS")
    if not value:
        return
    try:
        n = max(1, int(value))
    except ValueError:
        raise ValueError(f"NEURALUV_WORKERS must be an integer, got {value!r}")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass  # single-threaded BLAS; the setting is a cap, not a demand


def _load_source(rc: RunConfig):
    path = Path(rc.input_path)
    kind = rc.input_kind
    if kind == "auto":
        kind = "mesh" if path.suffix.lower() == ".obj" else "points"
    if kind == "mesh":
        return load_obj(path)
    return load_points(path)


def _ensure_outdir(rc: RunConfig) -> Path:
    if rc.output_dir is None:
        raise ValueError("this subcommand needs --out")
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("ok")  # fail before training, not after
    probe.unlink()
    return out


def _normalized(source):
    if isinstance(source, TriMesh):
        ps, transform = normalize_points(PointSet(source.vertices))
        return TriMesh(ps.positions, source.faces), transform
    ps, transform = normalize_points(source)
    return ps, transform


def run_training_pipeline(rc: RunConfig) -> dict:
    """load -> normalize -> train -> parameterize -> seams -> metrics -> export."""
    out = _ensure_outdir(rc)
    source = _load_source(rc)
    normalized, transform = _normalized(source)
    cfg = rc.train_config()
    model = CycleMapper(hidden_width=rc.hidden_width,
                        latent_width=rc.latent_width, seed=rc.seed)
    model, history = train(model, normalized, cfg)

    if isinstance(normalized, TriMesh):
        eval_points = normalized.vertices
        normals = source.vertex_normals_cached()[0] if source.n_faces else None
    else:
        eval_points = normalized.positions
        normals = normalized.normals
    skip_cut = cfg.ablation == "no-cut-net"
    if cfg.ablation == "no-branch-b":
        grid = make_grid(cfg.n_points)
        branches = evaluate_branches(model, eval_points, grid, skip_cut=skip_cut)
        uv = match_uv_by_nn(eval_points, branches.phat, branches.qhat)
    else:
        uv = parameterize(model, eval_points, skip_cut=skip_cut)
    seams = extract_seams_auto(eval_points, uv, cfg)

    paths = {}
    ckpt = out / "checkpoint.nuv"
    model.save(
        ckpt,
        step=len(history),
        extra={
            "train_config": {k: (list(v) if isinstance(v, tuple) else v)
                             for k, v in cfg.__dict__.items()},
            "normalization": {"centroid": transform.centroid.tolist(),
                              "scale": transform.scale},
        },
    )
    paths["checkpoint"] = ckpt
    hist_path = out / "loss_history.tsv"
    write_loss_history(hist_path, history)
    paths["history"] = hist_path

    raw_positions = transform.invert(eval_points)
    if isinstance(source, TriMesh) and source.n_faces:
        obj_path = out / "uv.obj"
        export_obj_with_uv(TriMesh(raw_positions, source.faces), uv, obj_path)
        paths["obj"] = obj_path
        report = evaluate_mesh(source.with_uv(uv), seam_count=len(seams))
        write_metrics_report(out / "metrics", report)
        paths["metrics"] = out / "metrics.tsv"
        print(f"conformality: {report.conformality:.6f} rad")
        print(f"self-intersection rate: {report.self_intersection_rate:.6f}")
    else:
        write_xyz(out / "points.xyz", PointSet(raw_positions))
        np.savetxt(out / "raw_uv.txt", uv, fmt="%.17g",
                   header="u v, one row per input point")
        paths["uv"] = out / "raw_uv.txt"

    checker = assign_checker_colors(uv, rc.checker_period)
    ply_path = out / "checker.ply"
    write_ply(ply_path, raw_positions, normals=normals, colors=checker)
    paths["checker"] = ply_path

    seam_idx_path = out / "seams.txt"
    with open(seam_idx_path, "w", encoding="ascii") as fh:
        for idx in seams.indices:
            fh.write(f"{int(idx)}\n")
    seam_obj_path = out / "seams.obj"
    with open(seam_obj_path, "w", encoding="ascii") as fh:
        fh.write("# seam points as point records\n")
        for idx in seams.indices:
            x, y, z = raw_positions[int(idx)]
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for i in range(len(seams)):
            fh.write(f"p {i + 1}\n")
    paths["seams"] = seam_idx_path

    layout_path = out / f"layout.{rc.image_format}"
    render_uv_layout(uv, layout_path, normals=normals,
                     seam_indices=seams.indices, size=rc.image_size)
    paths["layout"] = layout_path

    print(f"trained {len(history)} iterations; "
          f"{len(seams)} seam points; outputs in {out}")
    return paths


def run_unwrap(rc: RunConfig, checkpoint: str) -> dict:
    out = _ensure_outdir(rc)
    model, _, _, extra = CycleMapper.load(checkpoint)
    source = _load_source(rc)
    positions = source.vertices if isinstance(source, TriMesh) else source.positions
    norm = extra.get("normalization")
    if norm:
        transform = NormalizationTransform(
            centroid=np.asarray(norm["centroid"]), scale=float(norm["scale"])
        )
        positions_n = transform.apply(positions)
    else:
        positions_n = positions
    cfg_extra = extra.get("train_config", {})
    skip_cut = cfg_extra.get("ablation") == "no-cut-net"
    uv = parameterize(model, positions_n, skip_cut=skip_cut)
    np.savetxt(out / "raw_uv.txt", uv, fmt="%.17g",
               header="u v, one row per input point")
    layout = out / f"layout.{rc.image_format}"
    render_uv_layout(uv, layout, size=rc.image_size)
    print(f"unwrapped {positions.shape[0]} points; outputs in {out}")
    return {"uv": out / "raw_uv.txt", "layout": layout}


def run_metrics(rc: RunConfig) -> dict:
    mesh = load_obj_with_uv(rc.input_path)
    report = evaluate_mesh(mesh)
    print(report.header())
    print(report.to_delimited())
    paths = {}
    if rc.output_dir is not None:
        out = _ensure_outdir(rc)
        write_metrics_report(out / "metrics", report)
        paths["metrics"] = out / "metrics.tsv"
    return paths


def run_noise(rc: RunConfig) -> dict:
    out = _ensure_outdir(rc)
    source = _load_source(rc)
    if not isinstance(source, TriMesh) or source.n_faces == 0:
        raise ValueError("noise harness needs a mesh input for evaluation")
    cfg = rc.train_config()
    reports = noise_robustness_run(
        source, list(rc.noise_levels), cfg,
        model_kwargs=dict(hidden_width=rc.hidden_width,
                          latent_width=rc.latent_width),
    )
    table = out / "noise_metrics.tsv"
    with open(table, "w", encoding="ascii") as fh:
        fh.write(reports[0].header() + "\n")
        for report in reports:
            fh.write(report.to_delimited() + "\n")
    print(reports[0].header())
    for report in reports:
        print(report.to_delimited())
    return {"table": table}


def run_render(rc: RunConfig, checker: bool, uv_file: Optional[str]) -> dict:
    path = Path(rc.input_path)
    if uv_file is not None:
        source = _load_source(rc)
        pts = source.vertices if isinstance(source, TriMesh) else source.positions
        uv = np.loadtxt(uv_file, ndmin=2)
        if uv.shape != (pts.shape[0], 2):
            raise ValueError("uv file rows must match the input point count")
        normals = None
    else:
        mesh = load_obj_with_uv(path)
        uv = mesh.uv
        normals = mesh.vertex_normals_cached()[0] if mesh.n_faces else None
    out_path = rc.output_dir
    if out_path is None:
        raise ValueError("render needs --out <imagefile>")
    colors = assign_checker_colors(uv, rc.checker_period) if checker else None
    render_uv_layout(uv, out_path, normals=normals, colors=colors,
                     size=rc.image_size)
    print(f"wrote {out_path}")
    return {"image": Path(out_path)}


def _add_common(p: argparse.ArgumentParser, needs_input=True):
    if needs_input:
        p.add_argument("--input", required=True, help="input mesh/point file")
        p.add_argument("--kind", default="auto", choices=("auto", "mesh", "points"),
                       help="how to interpret the input file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="global deterministic seed")
    p.add_argument("--image-size", type=int, default=800)
    p.add_argument("--image-format", default="png", choices=("png", "svg"))
    p.add_argument("--checker-period", type=float, default=0.05,
                   help="UV checker cell size")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--n-points", type=int, default=10000,
                   help="sample size per iteration (perfect square)")
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden-width", type=int, default=512,
                   help="interior MLP width (512 reproduces the reference nets)")
    p.add_argument("--latent-width", type=int, default=64)
    p.add_argument("--k-unwrap", type=int, default=8)
    p.add_argument("--k-cut", type=int, default=3)
    p.add_argument("--eps-factor", type=float, default=0.2)
    p.add_argument("--t-cut-factor", type=float, default=0.02)
    p.add_argument("--t-cut-floor", type=float, default=2.0,
                   help="median-eta multiple flooring the seam threshold; 0 disables")
    p.add_argument("--w-unwrap", type=float, default=0.01)
    p.add_argument("--w-wrap", type=float, default=1.0)
    p.add_argument("--w-cycle", type=float, default=0.01)
    p.add_argument("--w-conf", type=float, default=0.01)
    p.add_argument("--no-normals", action="store_true",
                   help="ignore normals even when the source provides them")
    p.add_argument("--sum-reductions", action="store_true",
                   help="pure-sum hinge/conformal reductions")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--plateau-window", type=int, default=200)
    p.add_argument("--plateau-tol", type=float, default=1e-4)
    p.add_argument("--conformal-points", type=int, default=None,
                   help="subsample size for the conformality term")


def _overrides_from(args) -> dict:
    over = dict(
        n_points=args.n_points,
        iterations=args.iters,
        lr=args.lr,
        k_unwrap=args.k_unwrap,
        k_cut=args.k_cut,
        eps_factor=args.eps_factor,
        t_cut_factor=args.t_cut_factor,
        t_cut_median_floor=args.t_cut_floor,
        w_unwrap=args.w_unwrap,
        w_wrap=args.w_wrap,
        w_cycle=args.w_cycle,
        w_conf=args.w_conf,
        sum_reductions=args.sum_reductions,
        early_stop=not args.no_early_stop,
        plateau_window=args.plateau_window,
        plateau_tol=args.plateau_tol,
        conformal_points=args.conformal_points,
    )
    if args.no_normals:
        over["use_normals"] = False
    return over


def _rc_from(args, ablation="full", levels=()) -> RunConfig:
    return RunConfig(
        input_path=args.input,
        output_dir=args.out,
        input_kind=getattr(args, "kind", "auto"),
        ablation=ablation,
        noise_levels=tuple(levels),
        seed=args.seed,
        hidden_width=getattr(args, "hidden_width", 512),
        latent_width=getattr(args, "latent_width", 64),
        checker_period=args.checker_period,
        image_size=args.image_size,
        image_format=args.image_format,
        train_overrides=_overrides_from(args) if hasattr(args, "iters") else {},
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuraluv",
        description="Global free-boundary neural UV parameterization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="full pipeline: train, unwrap, export")
    _add_common(p)
    _add_train_flags(p)

    p = sub.add_parser("ablate", help="train under an ablation mode")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--mode", required=True,
                   choices=[m for m in ABLATION_MODES if m != "full"])

    p = sub.add_parser("unwrap", help="apply an existing checkpoint to new points")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("metrics", help="evaluate an OBJ that carries UVs")
    _add_common(p)

    p = sub.add_parser("noise", help="noise-robustness harness")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--levels", type=float, nargs="+", default=[0.01, 0.02, 0.04])

    p = sub.add_parser("render", help="render a UV layout image")
    _add_common(p)
    p.add_argument("--uv-file", default=None,
                   help="text file of per-point u v rows (for point inputs)")
    p.add_argument("--checker", action="store_true",
                   help="color by checker parity instead of normals")
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns a process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _configure_workers()
        if args.command == "train":
            run_training_pipeline(_rc_from(args))
        elif args.command == "ablate":
            run_training_pipeline(_rc_from(args, ablation=args.mode))
        elif args.command == "unwrap":
            run_unwrap(_rc_from(args), args.checkpoint)
        elif args.command == "metrics":
            run_metrics(_rc_from(args))
        elif args.command == "noise":
            run_noise(_rc_from(args, levels=args.levels))
        elif args.command == "render":
            run_render(_rc_from(args), args.checker, args.uv_file)
        else:  # pragma: no cover
            parser.error(f"unknown command {args.command}")
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:  # console-script entry
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
