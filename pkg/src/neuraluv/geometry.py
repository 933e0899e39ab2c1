"""Non-differentiable geometry kernels.

Point sets, triangle meshes, nearest-neighbor search, vertex sampling,
normalization into [-1, 1]^3, area-weighted vertex normals, UV bounding
boxes, Gaussian perturbation, and triangle angles. Everything here is a
pure function over immutable inputs; the differentiable machinery lives
in :mod:`neuraluv.autodiff` and :mod:`neuraluv.model`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

__all__ = [
    "PointSet",
    "TriMesh",
    "NormalizationTransform",
    "normalize_points",
    "sample_vertices",
    "sample_points",
    "knn",
    "nearest_neighbor_indices",
    "nearest_matching",
    "chamfer_distance",
    "vertex_normals",
    "uv_bbox_side",
    "add_gaussian_noise",
    "triangle_angles",
]

_UNIT_TOL = 1e-6


def _as_float64(a, name: str, cols: int) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if out.ndim != 2 or out.shape[1] != cols:
        raise ValueError(f"{name} must have shape (N, {cols}), got {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite values")
    return out


@dataclass(frozen=True)
class PointSet:
    """N surface points with optional per-point unit normals.

    Attributes:
        positions: (N, 3) coordinates in model units.
        normals: optional (N, 3) unit vectors, row-aligned with positions.
    """

    positions: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = _as_float64(self.positions, "positions", 3)
        object.__setattr__(self, "positions", pos)
        if self.normals is not None:
            nrm = _as_float64(self.normals, "normals", 3)
            if nrm.shape[0] != pos.shape[0]:
                raise ValueError("normals must be row-aligned with positions")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > _UNIT_TOL):
                raise ValueError("normals must be unit length within 1e-6")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.positions.shape[0]


class TriMesh:
    """Indexed triangle mesh with optional per-vertex UV coordinates."""

    def __init__(self, vertices, faces, uv=None):
        self.vertices = _as_float64(vertices, "vertices", 3)
        faces = np.ascontiguousarray(np.asarray(faces, dtype=np.int64))
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must have shape (F, 3), got {faces.shape}")
        nv = self.vertices.shape[0]
        if faces.size and (faces.min() < 0 or faces.max() >= nv):
            raise ValueError("face index out of range")
        if faces.size:
            a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
            if np.any((a == b) | (b == c) | (a == c)):
                raise ValueError("face with repeated vertex index")
        self.faces = faces
        if uv is not None:
            uv = _as_float64(uv, "uv", 2)
            if uv.shape[0] != nv:
                raise ValueError("uv row count must equal vertex count")
        self.uv = uv
        self._vertex_normals: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_uv(self, uv) -> "TriMesh":
        return TriMesh(self.vertices, self.faces, uv=uv)

    def vertex_normals_cached(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._vertex_normals is None:
            self._vertex_normals = vertex_normals(self)
        return self._vertex_normals


@dataclass(frozen=True)
class NormalizationTransform:
    """Similarity transform recorded by :func:`normalize_points`.

    ``apply`` maps model coordinates into the centered [-1, 1]^3 frame;
    ``invert`` maps back. Round-tripping recovers inputs to 1e-9 relative
    error.
    """

    centroid: np.ndarray
    scale: float  # multiplicative factor applied after centering

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.centroid) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.centroid


def normalize_points(ps: PointSet) -> Tuple[PointSet, NormalizationTransform]:
    """Center a point set and scale it so the largest axis extent is 2.

    Normals, being directions, are unaffected by the isotropic similarity.

    Raises:
        ValueError: if all points coincide ("zero extent").
    """
    pos = ps.positions
    if pos.shape[0] == 0:
        raise ValueError("empty point set")
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ValueError("zero extent")
    centroid = pos.mean(axis=0)
    scale = 2.0 / extent
    transform = NormalizationTransform(centroid=centroid, scale=scale)
    return PointSet(transform.apply(pos), normals=ps.normals), transform


def _rng(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_vertices(
    mesh: TriMesh, n: int, seed: Union[int, np.random.Generator]
) -> PointSet:
    """Draw ``n`` mesh vertices uniformly at random.

    Without replacement when ``n <= V``, with replacement otherwise.
    Per-vertex normals are carried along when the mesh has faces to
    compute them from. Deterministic for a fixed integer seed.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    nv = mesh.n_vertices
    if nv == 0:
        raise ValueError("mesh has no vertices")
    rng = _rng(seed)
    idx = rng.choice(nv, size=n, replace=n > nv)
    normals = None
    if mesh.n_faces > 0:
        nrm, valid = mesh.vertex_normals_cached()
        if valid.all():
            normals = nrm[idx]
    return PointSet(mesh.vertices[idx], normals=normals)


def sample_points(
    ps: PointSet, n: int, seed: Union[int, np.random.Generator]
) -> PointSet:
    """Uniform subsample of a point set; replacement rules as sample_vertices."""
    if n <= 0:
        raise ValueError("n must be positive")
    total = len(ps)
    rng = _rng(seed)
    idx = rng.choice(total, size=n, replace=n > total)
    normals = ps.normals[idx] if ps.normals is not None else None
    return PointSet(ps.positions[idx], normals=normals)


def _sq_dists_gram(query: np.ndarray, reference: np.ndarray,
                   ref_sq: Optional[np.ndarray] = None) -> np.ndarray:
    """|q|^2 + |r|^2 - 2 q.r, clamped at 0; fast but rounds differently
    from the naive formula, so it is used for *selection* only."""
    d2 = query @ reference.T
    d2 *= -2.0
    d2 += np.einsum("ij,ij->i", query, query)[:, None]
    if ref_sq is None:
        ref_sq = np.einsum("ij,ij->i", reference, reference)
    d2 += ref_sq[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def _sq_dists_exact(query: np.ndarray, gathered: np.ndarray) -> np.ndarray:
    """((q - r)^2).sum(-1) with the same arithmetic as the naive oracle.

    ``gathered`` is (M, ..., D) of reference rows already selected; the
    query broadcasts over the middle axes.
    """
    expand = (slice(None),) + (None,) * (gathered.ndim - 2) + (slice(None),)
    diff = query[expand] - gathered
    np.square(diff, out=diff)
    return diff.sum(axis=-1)


def nearest_neighbor_indices(
    query: np.ndarray,
    reference: np.ndarray,
    k: int,
    exclude_self: bool = False,
) -> np.ndarray:
    """Fast k-NN index selection for inner training loops.

    Uses a KD-tree above a size threshold and the exact brute-force
    search below it. Unlike :func:`knn`, tie order among exactly
    equidistant neighbors is unspecified; training losses only need the
    index sets, and distances are re-derived differentiably.
    """
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if query.shape[0] * reference.shape[0] <= 250_000:
        idx, _ = knn(query, reference, k, exclude_self=exclude_self)
        return idx
    from scipy.spatial import cKDTree

    tree = cKDTree(reference)
    if not exclude_self:
        _, idx = tree.query(query, k=k)
        return idx.reshape(query.shape[0], k).astype(np.int64)
    d, idx = tree.query(query, k=k + 1)
    d = d.reshape(query.shape[0], k + 1)
    idx = idx.reshape(query.shape[0], k + 1).astype(np.int64)
    rows = np.arange(query.shape[0])
    d[idx == rows[:, None]] = np.inf
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(idx, order, axis=1)


def nearest_matching(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mutual nearest-row index arrays (a->b, b->a) for loss matching."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] * b.shape[0] <= 250_000:
        _, idx_ab, idx_ba = chamfer_distance(PointSet(a), PointSet(b))
        return idx_ab, idx_ba
    from scipy.spatial import cKDTree

    _, idx_ab = cKDTree(b).query(a, k=1)
    _, idx_ba = cKDTree(a).query(b, k=1)
    return idx_ab.astype(np.int64), idx_ba.astype(np.int64)


def knn(
    query: np.ndarray,
    reference: np.ndarray,
    k: int,
    exclude_self: Optional[bool] = None,
    chunk: int = 1024,
) -> Tuple[np.ndarray, np.ndarray]:
    """K-nearest neighbors by Euclidean distance, ascending.

    Ties are broken toward the lower reference index. When ``query`` and
    ``reference`` are the same array (or ``exclude_self=True``), row i of
    the query never matches reference row i.

    Args:
        query: (M, D) points, D in {2, 3}.
        reference: (N, D) points.
        k: neighbor count; requires k <= N (k <= N - 1 when self-excluded).
        exclude_self: None means "auto": exclude iff query is reference.
        chunk: query rows per block (memory control).

    Returns:
        (indices, distances): both (M, k); distances are Euclidean.
    """
    query = np.asarray(query, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if query.ndim != 2 or reference.ndim != 2 or query.shape[1] != reference.shape[1]:
        raise ValueError("query and reference must be (M, D) and (N, D)")
    if query.shape[1] not in (2, 3):
        raise ValueError("D must be 2 or 3")
    if exclude_self is None:
        exclude_self = query is reference
    n = reference.shape[0]
    avail = n - 1 if exclude_self else n
    if k <= 0 or k > avail:
        raise ValueError(f"k={k} out of range for {n} reference points")

    m = query.shape[0]
    ref_sq = np.einsum("ij,ij->i", reference, reference)
    idx_out = np.empty((m, k), dtype=np.int64)
    d_out = np.empty((m, k), dtype=np.float64)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        qc = query[start:stop]
        d2 = _sq_dists_gram(qc, reference, ref_sq)
        exclude_rows = None
        if exclude_self:
            rows = np.arange(start, stop)
            ok = rows < n
            d2[np.flatnonzero(ok), rows[ok]] = np.inf
            exclude_rows = rows
        idx_out[start:stop], d_out[start:stop] = _smallest_k(
            d2, k, qc, reference, exclude_rows
        )
    np.sqrt(d_out, out=d_out)
    return idx_out, d_out


def _smallest_k(d2, k, query, reference, exclude_rows):
    """k smallest per row: Gram distances select candidates, exact naive
    distances order them, ties break toward the lower reference index."""
    m, n = d2.shape
    pad = min(n, k + 16)
    if pad < n:
        cand = np.argpartition(d2, pad - 1, axis=1)[:, :pad]
    else:
        cand = np.broadcast_to(np.arange(n, dtype=np.int64), (m, n))
    cand_d = _sq_dists_exact(query, reference[cand])
    if exclude_rows is not None:
        cand_d[cand == exclude_rows[:, None]] = np.inf
    if pad < n:
        # ties straddling the candidate boundary need the full row
        kth = np.partition(cand_d, k - 1, axis=1)[:, k - 1]
        unsafe = np.flatnonzero(cand_d.max(axis=1) <= kth)
        if unsafe.size:
            cand = cand.copy()
            full_d = _sq_dists_exact(query[unsafe], reference[None, :, :])
            if exclude_rows is not None:
                sel = exclude_rows[unsafe]
                ok = sel < n
                full_d[np.flatnonzero(ok), sel[ok]] = np.inf
            order = np.argsort(full_d, axis=1, kind="stable")[:, :pad]
            cand[unsafe] = order
            cand_d[unsafe] = np.take_along_axis(full_d, order, axis=1)
    # lexsort: primary key exact distance, secondary key reference index
    order = np.lexsort((cand, cand_d), axis=1)[:, :k]
    idx = np.take_along_axis(cand, order, axis=1)
    val = np.take_along_axis(cand_d, order, axis=1)
    return idx.astype(np.int64), val


def chamfer_distance(
    a: PointSet, b: PointSet
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Symmetric Chamfer distance between two point sets.

    Mean (per direction) of squared distances to the nearest point of the
    other set. The two matching index arrays are returned so a training
    step can re-evaluate the same matching differentiably.

    Returns:
        (value, idx_ab, idx_ba): idx_ab[i] is a's nearest row in b,
        idx_ba[j] is b's nearest row in a.
    """
    pa = a.positions if isinstance(a, PointSet) else np.asarray(a, dtype=np.float64)
    pb = b.positions if isinstance(b, PointSet) else np.asarray(b, dtype=np.float64)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("both point sets must be non-empty")
    na, nb = pa.shape[0], pb.shape[0]
    idx_ab = np.empty(na, dtype=np.int64)
    idx_ba = np.full(nb, -1, dtype=np.int64)
    best_ba = np.full(nb, np.inf)
    b_sq = np.einsum("ij,ij->i", pb, pb)
    chunk = max(1, int(4e6) // nb)
    for start in range(0, na, chunk):
        stop = min(start + chunk, na)
        d2 = _sq_dists_gram(pa[start:stop], pb, b_sq)
        idx_ab[start:stop] = np.argmin(d2, axis=1)
        col_min = d2.min(axis=0)
        col_arg = d2.argmin(axis=0) + start
        better = col_min < best_ba  # strict: earlier chunks keep lower index
        best_ba[better] = col_min[better]
        idx_ba[better] = col_arg[better]
    # exact re-evaluation of the matched pairs (oracle arithmetic)
    min_ab = _sq_dists_exact(pa, pb[idx_ab])
    min_ba = _sq_dists_exact(pb, pa[idx_ba])
    value = float(min_ab.mean() + min_ba.mean())
    return value, idx_ab, idx_ba


def vertex_normals(mesh: TriMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Area-weighted per-vertex normals.

    Face normals (cross products, magnitude twice the face area) are
    accumulated onto their vertices and the sums renormalized, so larger
    faces contribute proportionally more.

    Returns:
        (normals, valid): (V, 3) unit normals and a (V,) bool mask; rows
        with no incident face (or a degenerate accumulation) are flagged
        False and left as zero vectors.
    """
    if mesh.n_faces == 0:
        raise ValueError("mesh has no faces")
    v = mesh.vertices
    f = mesh.faces
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    face_n = np.cross(e1, e2)
    acc = np.zeros_like(v)
    for col in range(3):
        np.add.at(acc, f[:, col], face_n)
    lengths = np.linalg.norm(acc, axis=1)
    valid = lengths > 1e-20
    out = np.zeros_like(acc)
    out[valid] = acc[valid] / lengths[valid, None]
    return out, valid


def uv_bbox_side(q: np.ndarray) -> float:
    """Side length of the square (max-extent) bounding box of 2D points."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 2 or q.shape[0] < 2:
        raise ValueError("expected at least two 2D points")
    side = float((q.max(axis=0) - q.min(axis=0)).max())
    if side <= 0.0:
        raise ValueError("zero extent")
    return side


def add_gaussian_noise(
    ps: PointSet, level: float, seed: Union[int, np.random.Generator]
) -> PointSet:
    """Perturb positions with zero-mean Gaussian noise.

    The per-coordinate standard deviation is ``level`` times the length
    of the bounding-box diagonal, so percentage levels are unit-free.
    Normals are dropped: a noisy cloud is treated as unoriented.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    pos = ps.positions
    diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    rng = _rng(seed)
    noise = rng.standard_normal(pos.shape) * (level * diag)
    return PointSet(pos + noise, normals=None)


def triangle_angles(p0, p1, p2) -> np.ndarray:
    """Interior angles (radians) of one 2D or 3D triangle, summing to pi.

    Raises:
        ValueError: when the triangle is degenerate (area below 1e-12 of
        the squared edge scale).
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    angles = _angles_batch(p0[None], p1[None], p2[None])
    if np.isnan(angles).any():
        raise ValueError("degenerate triangle")
    return angles[0]


def _angles_batch(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Vectorized triangle angles; degenerate rows come back as NaN."""
    if p0.shape[1] == 2:
        z = np.zeros((p0.shape[0], 1))
        p0 = np.hstack([p0, z])
        p1 = np.hstack([p1, z])
        p2 = np.hstack([p2, z])
    e01 = p1 - p0
    e02 = p2 - p0
    e12 = p2 - p1
    sq = (
        np.einsum("ij,ij->i", e01, e01)
        + np.einsum("ij,ij->i", e02, e02)
        + np.einsum("ij,ij->i", e12, e12)
    ) / 3.0
    cross = np.cross(e01, e02)
    area2 = np.linalg.norm(cross, axis=1)  # twice the area
    degenerate = (sq <= 0.0) | (0.5 * area2 <= 1e-12 * sq)
    out = np.empty((p0.shape[0], 3), dtype=np.float64)
    # atan2 of (parallelogram area, dot) is stabler than arccos near 0/pi
    out[:, 0] = np.arctan2(area2, np.einsum("ij,ij->i", e01, e02))
    out[:, 1] = np.arctan2(area2, np.einsum("ij,ij->i", -e01, e12))
    out[:, 2] = np.arctan2(area2, np.einsum("ij,ij->i", -e02, -e12))
    out[degenerate] = np.nan
    return out
