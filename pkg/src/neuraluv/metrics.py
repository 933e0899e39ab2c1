"""Parameterization quality metrics.

Conformality (mean absolute corner-angle difference between 3D faces
and their UV images), the UV self-intersection rate over triangle
pairs, and the noise-robustness harness that retrains on perturbed
point clouds and evaluates against the clean mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import PointSet, TriMesh, _angles_batch, add_gaussian_noise, \
    normalize_points
from .model import CycleMapper, TrainConfig, extract_seams_auto, parameterize, train

__all__ = [
    "MetricsReport",
    "conformality_metric",
    "self_intersection_rate",
    "self_intersection_counts",
    "noise_robustness_run",
]


@dataclass
class MetricsReport:
    """Evaluation summary for one parameterized mesh."""

    conformality: float
    self_intersection_rate: float
    self_intersection_rate_nonadjacent: float
    triangle_count: int
    evaluated_count: int
    degenerate_count: int
    seam_count: int = 0
    noise_level: float = 0.0

    FIELDS = (
        "conformality",
        "self_intersection_rate",
        "self_intersection_rate_nonadjacent",
        "triangle_count",
        "evaluated_count",
        "degenerate_count",
        "seam_count",
        "noise_level",
    )

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def to_delimited(self, sep: str = "\t") -> str:
        return sep.join(str(getattr(self, name)) for name in self.FIELDS)

    @classmethod
    def header(cls, sep: str = "\t") -> str:
        return sep.join(cls.FIELDS)


def _face_corner_points(mesh: TriMesh):
    v, f = mesh.vertices, mesh.faces
    return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


def _uv_corner_points(mesh: TriMesh):
    q, f = mesh.uv, mesh.faces
    return q[f[:, 0]], q[f[:, 1]], q[f[:, 2]]


def conformality_metric(mesh: TriMesh) -> float:
    """Mean |3D corner angle - UV corner angle| in radians.

    Faces degenerate in either domain are excluded (use
    :func:`conformality_details` for the counts). Raises when every
    face is degenerate.
    """
    value, _, _ = conformality_details(mesh)
    return value


def conformality_details(mesh: TriMesh):
    """(metric, evaluated_count, degenerate_count)."""
    if mesh.uv is None:
        raise ValueError("mesh has no uv")
    if mesh.n_faces < 1:
        raise ValueError("mesh has no faces")
    a3 = _angles_batch(*_face_corner_points(mesh))
    a2 = _angles_batch(*_uv_corner_points(mesh))
    valid = ~(np.isnan(a3).any(axis=1) | np.isnan(a2).any(axis=1))
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("all faces degenerate")
    diff = np.abs(a3[valid] - a2[valid])
    return float(diff.mean()), n_valid, int(mesh.n_faces - n_valid)


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Twice the signed area of (a, b, c); shape-(P,) for (P, 2) inputs."""
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (
        b[:, 1] - a[:, 1]
    ) * (c[:, 0] - a[:, 0])


def triangles_overlap(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Positive-area interior intersection test for UV triangle pairs.

    Separating-axis test expressed through orientation predicates: an
    edge of either triangle separates the pair when the other triangle
    lies entirely in the closed outer half-plane. Touching at vertices
    or along edges therefore does not count as overlap. Inputs are
    (P, 3, 2) stacks of non-degenerate triangles.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if t1.ndim == 2:
        t1 = t1[None]
    if t2.ndim == 2:
        t2 = t2[None]
    p = t1.shape[0]
    separated = np.zeros(p, dtype=bool)
    for tri, other in ((t1, t2), (t2, t1)):
        for i in range(3):
            a = tri[:, i]
            b = tri[:, (i + 1) % 3]
            c = tri[:, (i + 2) % 3]
            ref = np.sign(_orient(a, b, c))
            outside = np.ones(p, dtype=bool)
            for j in range(3):
                side = _orient(a, b, other[:, j]) * ref
                outside &= side <= 0.0
            separated |= outside
    return ~separated


def _degenerate_uv_mask(mesh: TriMesh) -> np.ndarray:
    a3 = _angles_batch(*_face_corner_points(mesh))
    a2 = _angles_batch(*_uv_corner_points(mesh))
    return np.isnan(a3).any(axis=1) | np.isnan(a2).any(axis=1)


def self_intersection_counts(mesh: TriMesh, chunk: int = 512):
    """(overlaps, total_pairs, nonadjacent_pairs, degenerate_faces).

    Pairs of faces sharing a mesh vertex are exempt from the overlap
    count; degenerate faces are excluded from pair enumeration. Bounding
    boxes prune before the exact orientation test.
    """
    if mesh.uv is None:
        raise ValueError("mesh has no uv")
    if mesh.n_faces < 2:
        raise ValueError("need at least two faces")
    degenerate = _degenerate_uv_mask(mesh)
    keep = np.flatnonzero(~degenerate)
    faces = mesh.faces[keep]
    uv = mesh.uv
    tri = uv[faces]  # (F, 3, 2)
    f = tri.shape[0]
    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    total_pairs = f * (f - 1) // 2
    nonadjacent = 0
    overlaps = 0
    for start in range(0, f - 1, chunk):
        stop = min(start + chunk, f - 1)
        for i in range(start, stop):
            js = np.arange(i + 1, f)
            bbox = (
                (lo[i, 0] < hi[js, 0]) & (lo[js, 0] < hi[i, 0])
                & (lo[i, 1] < hi[js, 1]) & (lo[js, 1] < hi[i, 1])
            )
            adj = np.zeros(js.shape[0], dtype=bool)
            for a in range(3):
                for b in range(3):
                    adj |= faces[js, b] == faces[i, a]
            nonadjacent += int(js.shape[0] - adj.sum())
            cand = js[bbox & ~adj]
            if cand.size == 0:
                continue
            hits = triangles_overlap(
                np.broadcast_to(tri[i], (cand.size, 3, 2)), tri[cand]
            )
            overlaps += int(hits.sum())
    return overlaps, total_pairs, nonadjacent, int(degenerate.sum())


def self_intersection_rate(mesh: TriMesh) -> float:
    """Fraction of overlapping UV triangle pairs over all face pairs."""
    overlaps, total_pairs, _, _ = self_intersection_counts(mesh)
    return overlaps / total_pairs if total_pairs else 0.0


def evaluate_mesh(mesh: TriMesh, seam_count: int = 0,
                  noise_level: float = 0.0) -> MetricsReport:
    """Full MetricsReport for a mesh that already carries UVs."""
    conf, evaluated, degenerate = conformality_details(mesh)
    overlaps, total_pairs, nonadj_pairs, _ = self_intersection_counts(mesh)
    return MetricsReport(
        conformality=conf,
        self_intersection_rate=overlaps / total_pairs if total_pairs else 0.0,
        self_intersection_rate_nonadjacent=(
            overlaps / nonadj_pairs if nonadj_pairs else 0.0
        ),
        triangle_count=mesh.n_faces,
        evaluated_count=evaluated,
        degenerate_count=degenerate,
        seam_count=seam_count,
        noise_level=noise_level,
    )


def noise_robustness_run(
    source: TriMesh,
    levels: Sequence[float],
    cfg: TrainConfig,
    model_kwargs: Optional[dict] = None,
) -> list:
    """Retrain on noise-perturbed vertices and evaluate on the clean mesh.

    For each level the mesh vertices are normalized, perturbed with
    Gaussian noise of that level, and a fresh model is trained in
    point-cloud mode (no normal supervision). The clean vertices are
    then parameterized and scored against the clean faces.
    """
    model_kwargs = dict(model_kwargs or {})
    reports = []
    clean, _ = normalize_points(PointSet(source.vertices))
    for level in levels:
        noisy = add_gaussian_noise(clean, float(level), seed=cfg.seed)
        model = CycleMapper(seed=cfg.seed, **model_kwargs)
        run_cfg = TrainConfig(**{**cfg.__dict__, "use_normals": False})
        model, _ = train(model, noisy, run_cfg)
        uv = parameterize(model, clean.positions)
        seams = extract_seams_auto(clean.positions, uv, run_cfg)
        mesh = source.with_uv(uv)
        reports.append(
            evaluate_mesh(mesh, seam_count=len(seams), noise_level=float(level))
        )
    return reports
