"""Dense LeakyReLU stacks, their forward/JVP evaluation, Adam, checkpoints.

A network here is a plain stack of affine layers with LeakyReLU(0.01)
between them and a linear final layer. Forward passes record onto a
:class:`~neuraluv.autodiff.Tape`; the JVP routine propagates a tangent
through the same recorded ops (activation masks enter as constants,
exact for a piecewise-linear network), so scalars built from Jacobian
entries can be differentiated by the ordinary reverse sweep.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape

__all__ = [
    "NetSpec",
    "ParamStore",
    "AdamState",
    "init_params",
    "mlp_forward",
    "mlp_forward_cached",
    "jvp",
    "jvp_cached",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class NetSpec:
    """Layer widths of one MLP stack; LeakyReLU(0.01) on all but the last."""

    widths: Tuple[int, ...]
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("a network needs at least input and output widths")
        if any(w <= 0 for w in widths):
            raise ValueError("all layer widths must be positive")
        if self.slope != LEAKY_SLOPE:
            raise ValueError(f"slope is fixed at {LEAKY_SLOPE}")
        object.__setattr__(self, "widths", widths)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]


class ParamStore:
    """Weights and biases of one stack, in a fixed flat enumeration order."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("weights/biases length mismatch")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    def check_spec(self, spec: NetSpec) -> None:
        if len(self.weights) != spec.n_layers:
            raise ValueError("layer count does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (spec.widths[i + 1], spec.widths[i])
            if w.shape != want or b.shape != (spec.widths[i + 1],):
                raise ValueError(f"layer {i} shape mismatch: {w.shape} vs {want}")

    def arrays(self) -> list:
        """(name, array) pairs in flat enumeration order."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{i}.weight", w))
            out.append((f"layer{i}.bias", b))
        return out

    def copy(self) -> "ParamStore":
        return ParamStore(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.arrays())


def init_params(spec: NetSpec, seed: int, zero_final: bool = False) -> ParamStore:
    """Uniform(+-sqrt(6/fan_in)) weights, zero biases.

    With ``zero_final`` the last layer starts all-zero, which makes
    residual blocks exact identity maps at initialization.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in = spec.widths[i]
        fan_out = spec.widths[i + 1]
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if zero_final:
        weights[-1] = np.zeros_like(weights[-1])
        biases[-1] = np.zeros_like(biases[-1])
    return ParamStore(weights, biases)


def _layer_nodes(params: ParamStore, tape: Optional[Tape]):
    if tape is None:
        return list(zip(params.weights, params.biases))
    return [(tape.leaf(w), tape.leaf(b)) for w, b in zip(params.weights, params.biases)]


class ForwardCache:
    """Recorded layer inputs and activation masks of one forward pass."""

    __slots__ = ("layers", "masks")

    def __init__(self, layers, masks):
        self.layers = layers  # (w_node, b_node) per layer, possibly plain arrays
        self.masks = masks  # LeakyReLU derivative mask per hidden layer


def mlp_forward(
    spec: NetSpec,
    params: Union[ParamStore, Sequence],
    x,
    tape: Optional[Tape] = None,
):
    """Evaluate the stack; returns the output (a Node when recording)."""
    out, _ = mlp_forward_cached(spec, params, x, tape)
    return out


def mlp_forward_cached(
    spec: NetSpec,
    params: Union[ParamStore, Sequence],
    x,
    tape: Optional[Tape] = None,
):
    """Like :func:`mlp_forward` but also returns a cache for JVP reuse.

    ``params`` may be a ParamStore (leaves are created on the tape) or a
    pre-built list of (weight, bias) node pairs so several passes can
    share one set of leaves.
    """
    if isinstance(params, ParamStore):
        params.check_spec(spec)
        layers = _layer_nodes(params, tape)
    else:
        layers = list(params)
    if ad.value_of(x).shape[-1] != spec.in_width:
        raise ValueError(
            f"input width {ad.value_of(x).shape[-1]} != spec {spec.in_width}"
        )
    h = x
    masks = []
    for i, (w, b) in enumerate(layers):
        if i < spec.n_layers - 1:
            h, mask = ad.affine_leaky(h, w, b, spec.slope)
            masks.append(mask)
        else:
            h = ad.affine(h, w, b)
    return h, ForwardCache(layers, masks)


def jvp(
    spec: NetSpec,
    params: Union[ParamStore, Sequence],
    x,
    tangent,
    tape: Optional[Tape] = None,
):
    """Directional derivative of the stack along ``tangent`` at each row.

    ``tangent`` is an input-width direction shared by all rows (or a
    per-row (batch, in) array/Node). The computation is recorded on the
    tape, so reverse mode can differentiate losses built from it.
    """
    _, cache = mlp_forward_cached(spec, params, x, tape)
    return jvp_cached(spec, cache, x, tangent)


def jvp_cached(spec: NetSpec, cache: ForwardCache, x, tangent):
    """JVP reusing the masks of an existing forward pass at the same input."""
    tv = ad.value_of(tangent)
    if tv.ndim == 1:
        if tv.shape[0] != spec.in_width:
            raise ValueError("tangent width mismatch")
        batch = ad.value_of(x).shape[0]
        t = np.broadcast_to(tv, (batch, spec.in_width))
    else:
        t = tangent
    for i, (w, _) in enumerate(cache.layers):
        if i < spec.n_layers - 1:
            t = ad.matmul_nt_masked(t, w, cache.masks[i])
        else:
            t = ad.matmul_nt(t, w)
    return t


@dataclass
class AdamState:
    """Adam moment accumulators aligned with a flat parameter list."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(
        cls,
        params: Sequence[np.ndarray],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    names: Optional[Sequence[str]] = None,
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient is treated as zero. Non-finite gradients raise,
    naming the offending parameter block.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    scale1 = 1.0 / (1.0 - b1**t)
    scale2 = 1.0 / (1.0 - b2**t)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p)
        if not np.isfinite(g).all():
            label = names[i] if names is not None else f"param[{i}]"
            raise FloatingPointError(f"non-finite gradient in {label}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m * scale1) / (np.sqrt(v * scale2) + state.eps)


# ---------------------------------------------------------------------------
# Checkpoint container: magic + json manifest + raw little-endian float64.

_MAGIC = b"NUVCKPT1"


def save_checkpoint(
    path,
    nets: dict,
    adam: Optional[AdamState] = None,
    step: int = 0,
    extra: Optional[dict] = None,
) -> None:
    """Serialize named (NetSpec, ParamStore) pairs plus optimizer state.

    The layout is a magic header, a JSON manifest, then raw array bytes;
    round-trips are bit-exact.
    """
    manifest = {"version": 1, "step": int(step), "extra": extra or {}, "nets": {}}
    blobs = []
    offset = 0

    def put(name: str, arr: np.ndarray) -> dict:
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype=np.float64)
        raw = data.tobytes()
        entry = {"name": name, "shape": list(data.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
        return entry

    arrays = []
    for net_name, (spec, store) in nets.items():
        manifest["nets"][net_name] = {"widths": list(spec.widths)}
        for pname, arr in store.arrays():
            arrays.append(put(f"{net_name}.{pname}", arr))
    if adam is not None:
        manifest["adam"] = {
            "step": adam.step,
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "count": len(adam.m),
        }
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays.append(put(f"adam.m[{i}]", m))
            arrays.append(put(f"adam.v[{i}]", v))
    manifest["arrays"] = arrays
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`.

    Returns:
        (nets, adam, step, extra) where nets maps name -> (NetSpec,
        ParamStore) and adam is an AdamState or None.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()

    def get(entry) -> np.ndarray:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        return arr.reshape(shape).copy()

    by_name = {e["name"]: e for e in manifest["arrays"]}
    nets = {}
    for net_name, info in manifest["nets"].items():
        spec = NetSpec(tuple(info["widths"]))
        weights, biases = [], []
        for i in range(spec.n_layers):
            weights.append(get(by_name[f"{net_name}.layer{i}.weight"]))
            biases.append(get(by_name[f"{net_name}.layer{i}.bias"]))
        store = ParamStore(weights, biases)
        store.check_spec(spec)
        nets[net_name] = (spec, store)
    adam = None
    if "adam" in manifest:
        info = manifest["adam"]
        m = [get(by_name[f"adam.m[{i}]"]) for i in range(info["count"])]
        v = [get(by_name[f"adam.v[{i}]"]) for i in range(info["count"])]
        adam = AdamState(
            m=m,
            v=v,
            step=info["step"],
            lr=info["lr"],
            beta1=info["beta1"],
            beta2=info["beta2"],
            eps=info["eps"],
        )
    return nets, adam, manifest["step"], manifest.get("extra", {})
