"""Bi-directional cycle-mapping model for global free-boundary UV maps.

Four point-wise MLP sub-networks cooperate:

* deform: warps a fixed 2D lattice into candidate UV coordinates,
* wrap: lifts UV coordinates back onto the 3D surface (plus normals),
* cut: learns a residual displacement that tears the surface open,
* unwrap: flattens cut 3D points into the UV plane.

Two branches share all parameters. The lattice branch runs
deform -> wrap -> cut -> unwrap; the surface branch runs
cut -> unwrap -> wrap on sampled surface points, and only its UV output
is the parameterization proper. Training minimizes a spacing hinge on
the UVs, a Chamfer reconstruction term, row-wise cycle-consistency
terms, and a conformality regularizer built from the eigenvalue gap of
the wrap map's first fundamental form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, backward
from .geometry import PointSet, TriMesh, chamfer_distance, knn, \
    nearest_matching, nearest_neighbor_indices, sample_points, \
    sample_vertices, uv_bbox_side
from .nets import (
    AdamState,
    ForwardCache,
    NetSpec,
    ParamStore,
    adam_step,
    init_params,
    jvp_cached,
    load_checkpoint,
    mlp_forward_cached,
    save_checkpoint,
)

__all__ = [
    "CycleMapper",
    "TrainConfig",
    "BranchOutputs",
    "SeamSet",
    "LossHistory",
    "ABLATION_MODES",
    "make_grid",
    "deform_net",
    "wrap_net",
    "cut_net",
    "unwrap_net",
    "forward_branch_a",
    "forward_branch_b",
    "loss_unwrap",
    "loss_wrap",
    "loss_cycle",
    "loss_conformal",
    "total_loss",
    "jacobian_uv",
    "eigen_gap",
    "train",
    "parameterize",
    "extract_seams",
    "match_uv_by_nn",
    "evaluate_branches",
]

ABLATION_MODES = ("full", "no-branch-a", "no-branch-b", "no-cut-net")

_NET_NAMES = (
    "deform_embed",
    "deform_out",
    "wrap_embed",
    "wrap_out",
    "cut_embed",
    "cut_out",
    "unwrap",
)


class CycleMapper:
    """The four sub-networks plus their parameter stores.

    Defaults reproduce the reference architecture: four-layer 512-wide
    stacks for deform/wrap, three-layer stacks for cut/unwrap, a
    64-channel embedding, LeakyReLU(0.01). ``hidden_width`` scales the
    interior layers down for CPU-budget experiments without touching
    the interface widths.
    """

    def __init__(self, hidden_width: int = 512, latent_width: int = 64, seed: int = 0):
        w, h = int(hidden_width), int(latent_width)
        if w < 1 or h < 1:
            raise ValueError("widths must be positive")
        self.hidden_width = w
        self.latent_width = h
        self.seed = seed
        self.specs = {
            "deform_embed": NetSpec((2, w, w, w, h)),
            "deform_out": NetSpec((h + 2, w, w, w, 2)),
            "wrap_embed": NetSpec((2, w, w, w, h)),
            "wrap_out": NetSpec((h + 2, w, w, w, 6)),
            "cut_embed": NetSpec((3, w, w, h)),
            "cut_out": NetSpec((h + 3, w, w, 3)),
            "unwrap": NetSpec((3, w, w, 2)),
        }
        # residual offset stacks start as exact identity maps
        zero_final = {"deform_out", "cut_out"}
        seeds = np.random.SeedSequence(seed).generate_state(len(_NET_NAMES))
        self.stores = {
            name: init_params(
                self.specs[name], int(seeds[i]), zero_final=name in zero_final
            )
            for i, name in enumerate(_NET_NAMES)
        }

    def param_arrays(self) -> list:
        """(name, array) pairs across all nets, in a fixed flat order."""
        out = []
        for name in _NET_NAMES:
            for pname, arr in self.stores[name].arrays():
                out.append((f"{name}.{pname}", arr))
        return out

    def make_leaves(self, tape: Tape) -> dict:
        """One leaf Node per parameter; shared by every pass on the tape."""
        leaves = {}
        for name in _NET_NAMES:
            store = self.stores[name]
            leaves[name] = [
                (tape.leaf(w), tape.leaf(b))
                for w, b in zip(store.weights, store.biases)
            ]
        return leaves

    def collect_grads(self, leaves: dict) -> list:
        grads = []
        for name in _NET_NAMES:
            for w_node, b_node in leaves[name]:
                grads.append(w_node.grad)
                grads.append(b_node.grad)
        return grads

    def layers(self, name: str, leaves: Optional[dict]):
        if leaves is not None:
            return leaves[name]
        store = self.stores[name]
        return list(zip(store.weights, store.biases))

    def save(self, path, adam: Optional[AdamState] = None, step: int = 0,
             extra: Optional[dict] = None) -> None:
        payload = {name: (self.specs[name], self.stores[name]) for name in _NET_NAMES}
        meta = {"hidden_width": self.hidden_width, "latent_width": self.latent_width,
                "seed": self.seed}
        meta.update(extra or {})
        save_checkpoint(path, payload, adam=adam, step=step, extra=meta)

    @classmethod
    def load(cls, path) -> Tuple["CycleMapper", Optional[AdamState], int, dict]:
        nets, adam, step, extra = load_checkpoint(path)
        model = cls(
            hidden_width=int(extra.get("hidden_width", 512)),
            latent_width=int(extra.get("latent_width", 64)),
            seed=int(extra.get("seed", 0)),
        )
        for name in _NET_NAMES:
            spec, store = nets[name]
            if spec != model.specs[name]:
                raise ValueError(f"checkpoint spec mismatch for {name}")
            model.stores[name] = store
        return model, adam, step, extra


@dataclass
class TrainConfig:
    """Hyperparameters of one per-model optimization run."""

    n_points: int = 10000
    k_unwrap: int = 8
    eps_factor: float = 0.2  # spacing hinge threshold: factor * L / sqrt(N)
    k_cut: int = 3
    t_cut_factor: float = 0.02  # seam threshold: factor * L
    # robust floor keeping the seam rule meaningful at low sampling density:
    # T_cut = max(t_cut_factor * L, t_cut_median_floor * median(eta)); 0 disables
    t_cut_median_floor: float = 2.0
    w_unwrap: float = 0.01
    w_wrap: float = 1.0
    w_cycle: float = 0.01
    w_conf: float = 0.01
    iterations: int = 3000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    use_normals: Optional[bool] = None  # None: use them when the source has any
    sum_reductions: bool = False  # True restores pure sums in hinge/conformal terms
    early_stop: bool = True
    plateau_window: int = 200
    plateau_tol: float = 1e-4
    ablation: str = "full"
    conformal_points: Optional[int] = None  # subsample for the Jacobian terms

    def __post_init__(self):
        for name in ("w_unwrap", "w_wrap", "w_cycle", "w_conf",
                     "eps_factor", "t_cut_factor", "t_cut_median_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.ablation not in ABLATION_MODES:
            raise ValueError(f"ablation must be one of {ABLATION_MODES}")
        if self.n_points < 4:
            raise ValueError("n_points too small")
        if self.k_unwrap < 1 or self.k_cut < 1:
            raise ValueError("neighbor counts must be positive")

    @property
    def weights(self) -> Tuple[float, float, float, float]:
        return (self.w_unwrap, self.w_wrap, self.w_cycle, self.w_conf)


@dataclass
class BranchOutputs:
    """All intermediate point sets of one forward evaluation.

    Lattice branch: qhat, phat, phat_n, phat_cut, qhat_cycle.
    Surface branch: p_cut, q, p_cycle, pn_cycle. Entries are None when
    the corresponding branch is ablated away.
    """

    qhat: Optional[np.ndarray] = None
    phat: Optional[np.ndarray] = None
    phat_n: Optional[np.ndarray] = None
    phat_cut: Optional[np.ndarray] = None
    qhat_cycle: Optional[np.ndarray] = None
    p_cut: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    p_cycle: Optional[np.ndarray] = None
    pn_cycle: Optional[np.ndarray] = None

    def all_finite(self) -> bool:
        return all(
            np.isfinite(a).all()
            for a in self.__dict__.values()
            if a is not None
        )


@dataclass(frozen=True)
class SeamSet:
    """Points flagged as lying on learned cutting seams."""

    indices: np.ndarray  # into the evaluated point set; may be empty
    eta: np.ndarray  # the flagged points' neighborhood spread values
    t_cut: float

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class LossHistory:
    """Per-iteration raw loss components and the weighted total."""

    iterations: list = field(default_factory=list)
    unwrap: list = field(default_factory=list)
    wrap: list = field(default_factory=list)
    cycle: list = field(default_factory=list)
    conformal: list = field(default_factory=list)
    total: list = field(default_factory=list)

    def append(self, it, lu, lw, lc, lf, tot):
        self.iterations.append(int(it))
        self.unwrap.append(float(lu))
        self.wrap.append(float(lw))
        self.cycle.append(float(lc))
        self.conformal.append(float(lf))
        self.total.append(float(tot))

    def as_array(self) -> np.ndarray:
        return np.column_stack(
            [self.iterations, self.unwrap, self.wrap, self.cycle,
             self.conformal, self.total]
        )

    def __len__(self) -> int:
        return len(self.iterations)


def make_grid(n: int) -> np.ndarray:
    """Row-major s x s lattice over [-1, 1]^2 with endpoints included."""
    s = math.isqrt(int(n))
    if s * s != n or s < 2:
        raise ValueError(f"n={n} is not a perfect square >= 4")
    lin = np.linspace(-1.0, 1.0, s)
    uu, vv = np.meshgrid(lin, lin)
    return np.column_stack([uu.ravel(), vv.ravel()])


def _stack_pair(model, embed_name, out_name, x, tape, leaves, residual):
    """[embed(x); x] -> out stack, optionally +x. Returns (y, caches)."""
    e, cache1 = mlp_forward_cached(
        model.specs[embed_name], model.layers(embed_name, leaves), x, tape
    )
    hx = ad.concat([e, x], axis=1)
    y, cache2 = mlp_forward_cached(
        model.specs[out_name], model.layers(out_name, leaves), hx, tape
    )
    if residual:
        y = ad.add(y, x)
    return y, (cache1, cache2)


def deform_net(model: CycleMapper, grid, tape: Optional[Tape] = None, leaves=None):
    """Lattice points -> candidate UV coordinates (residual offsets)."""
    out, _ = _stack_pair(model, "deform_embed", "deform_out", grid, tape, leaves, True)
    return out


def _wrap_full(model, uv, tape=None, leaves=None):
    out6, caches = _stack_pair(model, "wrap_embed", "wrap_out", uv, tape, leaves, False)
    pos = ad.slice_cols(out6, 0, 3)
    raw_n = ad.slice_cols(out6, 3, 6)
    sumsq = ad.reduce_sum(ad.square(raw_n), axis=1, keepdims=True)
    norm = ad.sqrt(sumsq)
    # max(norm, tiny) keeps zero rows at zero instead of dividing by 0
    tiny = 1e-20
    safe = ad.add(ad.hinge(ad.sub(norm, tiny)), tiny)
    unit_n = ad.div(raw_n, safe)
    return pos, unit_n, caches


def wrap_net(model: CycleMapper, uv, tape: Optional[Tape] = None, leaves=None):
    """UV -> (surface points, unit normals); shared by both branches."""
    pos, unit_n, _ = _wrap_full(model, uv, tape, leaves)
    return pos, unit_n


def cut_net(model: CycleMapper, points, tape: Optional[Tape] = None, leaves=None):
    """Residual displacement net; the identity map at initialization."""
    out, _ = _stack_pair(model, "cut_embed", "cut_out", points, tape, leaves, True)
    return out


def unwrap_net(model: CycleMapper, points, tape: Optional[Tape] = None, leaves=None):
    """Cut 3D points -> 2D UV coordinates."""
    out, _ = mlp_forward_cached(
        model.specs["unwrap"], model.layers("unwrap", leaves), points, tape
    )
    return out


def forward_branch_a(model: CycleMapper, grid, tape: Optional[Tape] = None,
                     leaves=None, skip_cut: bool = False):
    """Lattice branch: deform -> wrap -> cut -> unwrap.

    Returns (qhat, phat, phat_n, phat_cut, qhat_cycle, wrap_caches).
    """
    qhat = deform_net(model, grid, tape, leaves)
    phat, phat_n, caches = _wrap_full(model, qhat, tape, leaves)
    phat_cut = phat if skip_cut else cut_net(model, phat, tape, leaves)
    qhat_cycle = unwrap_net(model, phat_cut, tape, leaves)
    return qhat, phat, phat_n, phat_cut, qhat_cycle, caches


def forward_branch_b(model: CycleMapper, points, tape: Optional[Tape] = None,
                     leaves=None, skip_cut: bool = False):
    """Surface branch: cut -> unwrap -> wrap, parameters shared with A.

    Returns (p_cut, q, p_cycle, pn_cycle, wrap_caches).
    """
    p_cut = points if skip_cut else cut_net(model, points, tape, leaves)
    q = unwrap_net(model, p_cut, tape, leaves)
    p_cycle, pn_cycle, caches = _wrap_full(model, q, tape, leaves)
    return p_cut, q, p_cycle, pn_cycle, caches


def loss_unwrap(q, k: int, eps: float, neighbors: Optional[np.ndarray] = None,
                reduction: str = "sum"):
    """Hinge penalty on UV neighbor distances below ``eps``.

    Neighbor indices are found non-differentiably (recomputed by the
    caller each step); the distances themselves stay differentiable.
    """
    qv = ad.value_of(q)
    n = qv.shape[0]
    if n <= k:
        raise ValueError("need more points than neighbors")
    if neighbors is None:
        neighbors = nearest_neighbor_indices(qv, qv, k, exclude_self=True)
    gathered = ad.gather_rows(q, neighbors)  # (n, k, 2)
    center = ad.reshape(q, (n, 1, 2))
    d2 = ad.reduce_sum(ad.square(ad.sub(center, gathered)), axis=2)
    dist = ad.sqrt(d2)
    violations = ad.hinge(ad.sub(float(eps), dist))
    if reduction == "sum":
        return ad.reduce_sum(violations)
    if reduction == "mean":
        return ad.reduce_mean(violations)
    raise ValueError("reduction must be 'sum' or 'mean'")


def loss_wrap(phat, p, matching=None):
    """Chamfer distance with the matching frozen within the step."""
    pv = ad.value_of(p)
    hv = ad.value_of(phat)
    if matching is None:
        idx_ab, idx_ba = nearest_matching(hv, pv)
    else:
        idx_ab, idx_ba = matching
    to_p = pv[idx_ab]  # constant gather of the target set
    term_a = ad.reduce_mean(ad.reduce_sum(ad.square(ad.sub(phat, to_p)), axis=1))
    from_hat = ad.gather_rows(phat, idx_ba)
    term_b = ad.reduce_mean(ad.reduce_sum(ad.square(ad.sub(from_hat, p)), axis=1))
    return ad.add(term_a, term_b)


def loss_cycle(p, p_cycle, qhat, qhat_cycle, pn=None, pn_cycle=None,
               use_normals: bool = False):
    """Row-wise L1 cycle residuals plus an optional normal-alignment term.

    The normal term is 1 - cos(angle) per row so that minimizing the
    loss aligns predicted and reference normals.
    """
    terms = []
    if p is not None and p_cycle is not None:
        terms.append(ad.reduce_mean(
            ad.reduce_sum(ad.absolute(ad.sub(p_cycle, p)), axis=1)
        ))
    if qhat is not None and qhat_cycle is not None:
        terms.append(ad.reduce_mean(
            ad.reduce_sum(ad.absolute(ad.sub(qhat_cycle, qhat)), axis=1)
        ))
    if use_normals and pn is not None and pn_cycle is not None:
        cos = ad.reduce_sum(ad.mul(pn_cycle, pn), axis=1)
        terms.append(ad.reduce_mean(ad.sub(1.0, cos)))
    if not terms:
        raise ValueError("cycle loss needs at least one aligned pair")
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


_E_U = np.array([1.0, 0.0])
_E_V = np.array([0.0, 1.0])


def _wrap_jvp_columns(model, uv_value, caches, leaves, rows=None):
    """JVP columns (along e_u, e_v) of the wrap map's position channels."""
    cache_embed, cache_out = caches
    if rows is not None:
        cache_embed = ForwardCache(
            cache_embed.layers, [m[rows] for m in cache_embed.masks]
        )
        cache_out = ForwardCache(
            cache_out.layers, [m[rows] for m in cache_out.masks]
        )
        uv_value = uv_value[rows]
    m = uv_value.shape[0]
    cols = []
    for e in (_E_U, _E_V):
        t = np.broadcast_to(e, (m, 2))
        t1 = jvp_cached(model.specs["wrap_embed"], cache_embed, uv_value, t)
        t_full = ad.concat([t1, np.broadcast_to(e, (m, 2)).copy()], axis=1)
        t2 = jvp_cached(model.specs["wrap_out"], cache_out, None, t_full)
        cols.append(ad.slice_cols(t2, 0, 3))
    return cols[0], cols[1]


def jacobian_uv(model: CycleMapper, uv, which: str = "f",
                tape: Optional[Tape] = None, leaves=None, caches=None):
    """Per-point 3x2 Jacobians of the wrap map at the given UV points.

    ``which`` names the map for bookkeeping: "f" is the surface-branch
    map (UV of real points -> reconstructed points) and "g" the lattice
    branch's; both share the wrap parameters. Without a tape this
    returns a plain (M, 3, 2) array; with one it returns the two
    recorded column Nodes, ready to be differentiated further.
    """
    if which not in ("f", "g"):
        raise ValueError("which must be 'f' or 'g'")
    uv_value = ad.value_of(uv)
    if caches is None:
        _, _, caches = _wrap_full(model, uv, tape, leaves)
    ju, jv = _wrap_jvp_columns(model, uv_value, caches, leaves)
    if tape is None:
        return np.stack([ad.value_of(ju), ad.value_of(jv)], axis=2)
    return ju, jv


def eigen_gap(j: np.ndarray) -> float:
    """|lambda_1 - lambda_2| of J^T J for one 3x2 Jacobian."""
    j = np.asarray(j, dtype=np.float64)
    if j.shape != (3, 2):
        raise ValueError("expected a 3x2 Jacobian")
    a = float(j[:, 0] @ j[:, 0])
    d = float(j[:, 1] @ j[:, 1])
    b = float(j[:, 0] @ j[:, 1])
    return math.sqrt(max(0.0, (a - d) ** 2 + 4.0 * b * b))


def _gap_term(ju, jv, reduction: str):
    a = ad.reduce_sum(ad.square(ju), axis=1)
    d = ad.reduce_sum(ad.square(jv), axis=1)
    b = ad.reduce_sum(ad.mul(ju, jv), axis=1)
    disc = ad.add(ad.square(ad.sub(a, d)), ad.mul(4.0, ad.square(b)))
    gap = ad.sqrt(ad.hinge(disc))  # clamp guards negative round-off
    if reduction == "sum":
        return ad.reduce_sum(gap)
    return ad.reduce_mean(gap)


def loss_conformal(model: CycleMapper, q=None, qhat=None,
                   tape: Optional[Tape] = None, leaves=None,
                   cache_f=None, cache_g=None, reduction: str = "mean",
                   rows_f=None, rows_g=None):
    """Eigenvalue-gap penalty promoting angle-preserving wrap maps.

    One term per available UV set; each is the mean (or sum) over
    points of |lambda_1 - lambda_2| of J^T J.
    """
    terms = []
    if q is not None:
        if cache_f is None:
            _, _, cache_f = _wrap_full(model, q, tape, leaves)
        ju, jv = _wrap_jvp_columns(model, ad.value_of(q), cache_f, leaves, rows_f)
        terms.append(_gap_term(ju, jv, reduction))
    if qhat is not None:
        if cache_g is None:
            _, _, cache_g = _wrap_full(model, qhat, tape, leaves)
        ju, jv = _wrap_jvp_columns(model, ad.value_of(qhat), cache_g, leaves, rows_g)
        terms.append(_gap_term(ju, jv, reduction))
    if not terms:
        raise ValueError("conformal loss needs at least one UV set")
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def total_loss(l_unwrap, l_wrap, l_cycle, l_conf,
               weights: Sequence[float] = (0.01, 1.0, 0.01, 0.01)):
    """Weighted sum of the four objectives (defaults 0.01/1.0/0.01/0.01)."""
    parts = (l_unwrap, l_wrap, l_cycle, l_conf)
    out = None
    for part, w in zip(parts, weights):
        term = ad.mul(part, float(w))
        out = term if out is None else ad.add(out, term)
    return out


def _draw_sample(source, n, rng, use_normals):
    if isinstance(source, TriMesh):
        ps = sample_vertices(source, n, rng)
    elif isinstance(source, PointSet):
        ps = sample_points(source, n, rng)
    else:
        raise TypeError("source must be a TriMesh or PointSet")
    if not use_normals or ps.normals is None:
        return ps.positions, None
    return ps.positions, ps.normals


def _source_has_normals(source) -> bool:
    if isinstance(source, TriMesh):
        if source.n_faces == 0:
            return False
        _, valid = source.vertex_normals_cached()
        return bool(valid.all())
    return source.normals is not None


def train(model: CycleMapper, source: Union[TriMesh, PointSet], cfg: TrainConfig):
    """Per-model optimization loop.

    Each iteration resamples surface points, runs both branches on one
    tape, evaluates the four objectives (spacing thresholds recomputed
    from the current UV extent, treated as constants), reverse-sweeps,
    and applies one joint Adam step. Returns the model and the loss
    history. Raises when any component goes non-finite.
    """
    rng = np.random.default_rng(cfg.seed)
    grid = make_grid(cfg.n_points)
    use_normals = cfg.use_normals
    if use_normals is None:
        use_normals = _source_has_normals(source)
    named = model.param_arrays()
    names = [n for n, _ in named]
    arrays = [a for _, a in named]
    adam = AdamState.for_params(
        arrays, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps
    )
    history = LossHistory()
    reduction = "sum" if cfg.sum_reductions else "mean"
    branch_a = cfg.ablation != "no-branch-a"
    branch_b = cfg.ablation != "no-branch-b"
    skip_cut = cfg.ablation == "no-cut-net"

    for it in range(cfg.iterations):
        p, pn = _draw_sample(source, cfg.n_points, rng, use_normals)
        tape = Tape()
        leaves = model.make_leaves(tape)

        qhat = phat = phat_n = qhat_cycle = None
        q = p_cycle = pn_cycle = None
        cache_f = cache_g = None
        if branch_a:
            qhat, phat, phat_n, _, qhat_cycle, cache_g = forward_branch_a(
                model, grid, tape, leaves, skip_cut=skip_cut
            )
        if branch_b:
            _, q, p_cycle, pn_cycle, cache_f = forward_branch_b(
                model, p, tape, leaves, skip_cut=skip_cut
            )

        uv_primary = q if q is not None else qhat
        side = uv_bbox_side(ad.value_of(uv_primary))
        eps = cfg.eps_factor * side / math.sqrt(cfg.n_points)

        l_unwrap = loss_unwrap(uv_primary, cfg.k_unwrap, eps, reduction=reduction)
        l_wrap = loss_wrap(phat, p) if branch_a else 0.0
        l_cycle = loss_cycle(
            p if branch_b else None,
            p_cycle,
            qhat if branch_a else None,
            qhat_cycle,
            pn=pn,
            pn_cycle=pn_cycle,
            use_normals=use_normals and branch_b,
        )
        rows_f = rows_g = None
        if cfg.conformal_points is not None and cfg.conformal_points < cfg.n_points:
            if branch_b:
                rows_f = rng.choice(cfg.n_points, cfg.conformal_points, replace=False)
            if branch_a:
                rows_g = rng.choice(cfg.n_points, cfg.conformal_points, replace=False)
        l_conf = loss_conformal(
            model,
            q=q if branch_b else None,
            qhat=qhat if branch_a else None,
            tape=tape,
            leaves=leaves,
            cache_f=cache_f,
            cache_g=cache_g,
            reduction=reduction,
            rows_f=rows_f,
            rows_g=rows_g,
        )
        loss = total_loss(l_unwrap, l_wrap, l_cycle, l_conf, cfg.weights)

        parts = {
            "unwrap": float(ad.value_of(l_unwrap)),
            "wrap": float(ad.value_of(l_wrap)),
            "cycle": float(ad.value_of(l_cycle)),
            "conformal": float(ad.value_of(l_conf)),
            "total": float(ad.value_of(loss)),
        }
        for key, val in parts.items():
            if not np.isfinite(val):
                raise FloatingPointError(
                    f"non-finite {key} loss at iteration {it}"
                )

        backward(loss)
        grads = model.collect_grads(leaves)
        adam_step(arrays, grads, adam, names)
        history.append(it, parts["unwrap"], parts["wrap"], parts["cycle"],
                       parts["conformal"], parts["total"])

        if cfg.early_stop and _plateaued(history.total, cfg.plateau_window,
                                         cfg.plateau_tol):
            break
    return model, history


def _plateaued(totals, window: int, tol: float) -> bool:
    n = len(totals)
    if window < 1 or n < 2 * window or n % window:
        return False
    last = float(np.mean(totals[-window:]))
    prev = float(np.mean(totals[-2 * window:-window]))
    return (prev - last) < tol * max(abs(prev), 1e-12)


def parameterize(model: CycleMapper, points, skip_cut: bool = False) -> np.ndarray:
    """UV coordinates for arbitrary surface points: unwrap(cut(points))."""
    pts = points.positions if isinstance(points, PointSet) else \
        np.asarray(points, dtype=np.float64)
    cut = pts if skip_cut else ad.value_of(cut_net(model, pts))
    return np.asarray(ad.value_of(unwrap_net(model, cut)))


def evaluate_branches(model: CycleMapper, points, grid: Optional[np.ndarray] = None,
                      skip_cut: bool = False) -> BranchOutputs:
    """Run both branches without recording; for inspection and tests."""
    pts = points.positions if isinstance(points, PointSet) else \
        np.asarray(points, dtype=np.float64)
    out = BranchOutputs()
    if grid is not None:
        qhat, phat, phat_n, phat_cut, qhat_cycle, _ = forward_branch_a(
            model, grid, skip_cut=skip_cut
        )
        out.qhat, out.phat, out.phat_n = qhat, phat, phat_n
        out.phat_cut, out.qhat_cycle = phat_cut, qhat_cycle
    p_cut, q, p_cycle, pn_cycle, _ = forward_branch_b(
        model, pts, skip_cut=skip_cut
    )
    out.p_cut, out.q, out.p_cycle, out.pn_cycle = p_cut, q, p_cycle, pn_cycle
    return out


def seam_spread(p: np.ndarray, q: np.ndarray, k_cut: int) -> np.ndarray:
    """Per-point max UV distance to the UVs of the k 3D-nearest neighbors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[0] != q.shape[0]:
        raise ValueError("p and q must be row-aligned")
    if p.shape[0] <= k_cut:
        raise ValueError("need more points than k_cut")
    idx, _ = knn(p, p, k_cut, exclude_self=True)
    diffs = q[:, None, :] - q[idx]
    return np.sqrt((diffs**2).sum(axis=2)).max(axis=1)


def extract_seams(p: np.ndarray, q: np.ndarray, k_cut: int, t_cut: float) -> SeamSet:
    """Points whose UV neighborhood spread exceeds ``t_cut``.

    Exact duplicate positions are collapsed before the neighbor search
    (their UVs coincide row-wise) and flags propagate back to every
    copy. An empty result means no cut was needed.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    uniq, first, inverse = np.unique(
        p, axis=0, return_index=True, return_inverse=True
    )
    eta_u = seam_spread(uniq, q[first], k_cut)
    eta = eta_u[inverse]
    mask = eta > t_cut
    idx = np.flatnonzero(mask)
    return SeamSet(indices=idx, eta=eta[idx], t_cut=float(t_cut))


def seam_threshold(q: np.ndarray, eta: np.ndarray, factor: float,
                   median_floor: float) -> float:
    """Seam threshold: factor * L(Q), with an optional robust floor.

    The floor (a multiple of the median neighborhood spread) keeps the
    rule calibrated when the evaluated point set is sparser than the
    reference density the factor was tuned for.
    """
    base = factor * uv_bbox_side(q)
    if median_floor > 0:
        base = max(base, median_floor * float(np.median(eta)))
    return base


def extract_seams_auto(p: np.ndarray, q: np.ndarray, cfg: TrainConfig) -> SeamSet:
    """Seam extraction with the threshold rule from the config."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    uniq, first, inverse = np.unique(
        p, axis=0, return_index=True, return_inverse=True
    )
    eta_u = seam_spread(uniq, q[first], cfg.k_cut)
    t_cut = seam_threshold(q, eta_u, cfg.t_cut_factor, cfg.t_cut_median_floor)
    eta = eta_u[inverse]
    mask = eta > t_cut
    idx = np.flatnonzero(mask)
    return SeamSet(indices=idx, eta=eta[idx], t_cut=float(t_cut))


def match_uv_by_nn(p: np.ndarray, phat: np.ndarray, qhat: np.ndarray) -> np.ndarray:
    """Approximate UVs by copying each point's nearest reconstruction's UV.

    Only used by the surface-branch-removed ablation, where no direct
    UV head exists for the input points.
    """
    p = np.asarray(p, dtype=np.float64)
    phat = np.asarray(phat, dtype=np.float64)
    qhat = np.asarray(qhat, dtype=np.float64)
    # distinct sets semantically, even if the caller passes one array twice
    idx, _ = knn(p, phat, 1, exclude_self=False)
    return qhat[idx[:, 0]]
