"""Small convolutional regression network in plain numpy.

Tensors are NHWC.  Layer semantics:

* ``conv``: valid cross-correlation, stride 1, per-filter bias; weights
  ``(k, k, C_in, C_out)``
* ``maxpool``: 2x2 windows, stride 2 (odd trailing row/column dropped)
* ``activation``: ReLU
* ``flatten``: NHWC -> N x (H*W*C), row-major
* ``dense``: affine map; weights ``(D_in, D_out)``

Training runs in float32; casting a state to float64 gives an exact-arithmetic
twin for gradient checks.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .seeding import DOMAIN_INIT, derive_seed

MAGIC = b"CRCNN"
FORMAT_VERSION = 1
KINDS = ("conv", "maxpool", "dense", "activation", "flatten")


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 3
    units: int = 0
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "dense")


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (without batch axis); checks composition."""
        shape: tuple[int, ...] = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            shape = _out_shape(i, layer, shape)
            out.append(shape)
        if out and out[-1] != (2,):
            raise ShapeError(f"network must end in 2 outputs, ends in {out[-1]}")
        return out

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), tuple(LayerSpec(**l) for l in d["layers"]))

    def conv_blocks(self) -> list[list[int]]:
        """Layer indices grouped into conv blocks (conv + following act/pool)."""
        blocks: list[list[int]] = []
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                blocks.append([i])
            elif layer.kind in ("activation", "maxpool") and blocks and blocks[-1][-1] == i - 1 \
                    and self.layers[blocks[-1][0]].kind == "conv":
                blocks[-1].append(i)
        return blocks


def _out_shape(i: int, layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "conv":
        if len(shape) != 3:
            raise ShapeError(f"layer {i} (conv) needs HxWxC input, got {shape}")
        h, w, _ = shape
        k = layer.kernel
        if h < k or w < k or layer.filters < 1:
            raise ShapeError(f"layer {i} (conv {k}x{k}) does not fit input {shape}")
        return (h - k + 1, w - k + 1, layer.filters)
    if layer.kind == "maxpool":
        if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
            raise ShapeError(f"layer {i} (maxpool) does not fit input {shape}")
        return (shape[0] // 2, shape[1] // 2, shape[2])
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "dense":
        if len(shape) != 1 or layer.units < 1:
            raise ShapeError(f"layer {i} (dense) needs a flat input, got {shape}")
        return (layer.units,)
    return shape


def build_spec(input_size: int, filters: Sequence[int], pool_after: Sequence[int],
               hidden: int, kernel: int = 3) -> NetworkSpec:
    """Conv stack -> flatten -> dense(hidden) -> ReLU -> dense(2).

    ``pool_after`` holds 1-based conv indices followed by a 2x2 max-pool.
    """
    layers = []
    for j, f in enumerate(filters, start=1):
        layers += [LayerSpec("conv", filters=f, kernel=kernel), LayerSpec("activation")]
        if j in pool_after:
            layers.append(LayerSpec("maxpool"))
    layers += [LayerSpec("flatten"), LayerSpec("dense", units=hidden),
               LayerSpec("activation"), LayerSpec("dense", units=2)]
    spec = NetworkSpec((input_size, input_size, 1), tuple(layers))
    spec.shapes()
    return spec


def paper_preset() -> NetworkSpec:
    # 3x3 valid convs on 180 px only leave room for four pools before the last three convs
    return build_spec(180, (64, 64, 128, 128, 256, 256, 512), (1, 2, 3, 4), 256)


def desk_preset() -> NetworkSpec:
    return build_spec(64, (8, 16, 32, 32), (1, 2, 3), 128)


PRESETS = {"paper": paper_preset, "desk": desk_preset}


@dataclass(frozen=True)
class AdamParams:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("Adam epsilon must be positive")


@dataclass
class NetworkState:
    spec: NetworkSpec
    params: list[Optional[dict[str, np.ndarray]]]
    m: list[Optional[dict[str, np.ndarray]]] = field(default_factory=list)
    v: list[Optional[dict[str, np.ndarray]]] = field(default_factory=list)
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [None if p is None else {k: np.zeros_like(a) for k, a in p.items()}
                      for p in self.params]
        if not self.v:
            self.v = [None if p is None else {k: np.zeros_like(a) for k, a in p.items()}
                      for p in self.params]

    @property
    def dtype(self):
        for p in self.params:
            if p is not None:
                return p["W"].dtype
        return np.dtype(np.float32)

    def copy(self) -> "NetworkState":
        dup = lambda ps: [None if p is None else {k: a.copy() for k, a in p.items()} for p in ps]
        return NetworkState(self.spec, dup(self.params), dup(self.m), dup(self.v),
                            self.step, self.seed)

    def astype(self, dtype) -> "NetworkState":
        conv = lambda ps: [None if p is None else {k: a.astype(dtype) for k, a in p.items()}
                           for p in ps]
        return NetworkState(self.spec, conv(self.params), conv(self.m), conv(self.v),
                            self.step, self.seed)


def init_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> NetworkState:
    """He-normal weights, zero biases; the output bias starts at the image center."""
    shapes = spec.shapes()
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, DOMAIN_INIT)))
    shape = tuple(spec.input_shape)
    params: list[Optional[dict]] = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            fan_in = layer.kernel * layer.kernel * shape[2]
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           (layer.kernel, layer.kernel, shape[2], layer.filters))
            params.append({"W": W.astype(dtype), "b": np.zeros(layer.filters, dtype)})
        elif layer.kind == "dense":
            W = rng.normal(0.0, np.sqrt(2.0 / shape[0]), (shape[0], layer.units))
            params.append({"W": W.astype(dtype), "b": np.zeros(layer.units, dtype)})
        else:
            params.append(None)
        shape = shapes[i]
    h, w = spec.input_shape[:2]
    last = params[-1]
    if last is not None:
        last["b"][:] = ((w - 1) / 2.0, (h - 1) / 2.0)
    return NetworkState(spec, params, seed=seed)


# --------------------------------------------------------------------------
# layer kernels


def _conv_forward(x, W, b):
    k = W.shape[0]
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # n, ho, wo, c, k, k
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * c)
    out = cols @ W.reshape(k * k * c, -1)
    out += b
    return out.reshape(n, ho, wo, -1), cols


def _conv_backward(dout, cols, x_shape, W, need_dx):
    k = W.shape[0]
    n, h, w, c = x_shape
    _, ho, wo, f = dout.shape
    d2 = dout.reshape(-1, f)
    dW = (cols.T @ d2).reshape(W.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dW, db
    dcols = (d2 @ W.reshape(k * k * c, f).T).reshape(n, ho, wo, k, k, c)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, dW, db


def _pool_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    xr = x[:, :2 * ho, :2 * wo].reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4)
    xr = xr.reshape(n, ho, wo, c, 4)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, h, w, c = x_shape
    ho, wo = h // 2, w // 2
    d = np.zeros((n, ho, wo, c, 4), dtype=dout.dtype)
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
    d = d.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    if (2 * ho, 2 * wo) == (h, w):
        return d
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :2 * ho, :2 * wo] = d
    return dx


# --------------------------------------------------------------------------
# forward / backward


def as_batch(images, dtype=np.float32) -> np.ndarray:
    """Stack 2-D images (or pass an NHWC array) into an NHWC batch."""
    x = np.asarray(images, dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 3:
        x = x[..., None]
    return x


def _check_input(spec: NetworkSpec, x: np.ndarray):
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ShapeError(
            f"layer 0 ({spec.layers[0].kind}) expects input {tuple(spec.input_shape)}, "
            f"got {tuple(x.shape[1:])}")


def _run(state: NetworkState, x: np.ndarray, keep: bool, upto: Optional[int] = None):
    spec = state.spec
    _check_input(spec, x)
    caches = []
    n_layers = len(spec.layers) if upto is None else upto
    acts = []
    for i in range(n_layers):
        layer = spec.layers[i]
        p = state.params[i]
        if layer.kind == "conv":
            y, cols = _conv_forward(x, p["W"], p["b"])
            cache = (cols, x.shape)
        elif layer.kind == "maxpool":
            y, idx = _pool_forward(x)
            cache = (idx, x.shape)
        elif layer.kind == "activation":
            y = np.maximum(x, 0)
            cache = x > 0
        elif layer.kind == "flatten":
            y = x.reshape(x.shape[0], -1)
            cache = x.shape
        else:
            y = x @ p["W"] + p["b"]
            cache = x
        if keep:
            caches.append(cache)
        acts.append(y)
        x = y
    return x, caches, acts


def forward(state: NetworkState, images) -> np.ndarray:
    """Predicted ``(x, y)`` centers, shape ``(N, 2)``."""
    x = as_batch(images, state.dtype)
    out, _, _ = _run(state, x, keep=False)
    return out


def predict(state: NetworkState, images, batch_size: int = 256) -> np.ndarray:
    x = as_batch(images, state.dtype)
    if len(x) <= batch_size:
        return forward(state, x)
    return np.concatenate([forward(state, x[i:i + batch_size])
                           for i in range(0, len(x), batch_size)])


def activations(state: NetworkState, images) -> list[np.ndarray]:
    """Outputs of every layer for a batch."""
    _, _, acts = _run(state, as_batch(images, state.dtype), keep=False)
    return acts


def loss_mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((pred - truth) ** 2))


def backward(state: NetworkState, images, truth):
    """MSE loss and its gradients for every trainable layer.

    Returns ``(loss, grads)``; ``grads[i]`` is ``None`` for layers without
    parameters and for frozen layers.
    """
    spec = state.spec
    x = as_batch(images, state.dtype)
    truth = np.asarray(truth, dtype=state.dtype).reshape(len(x), 2)
    pred, caches, _ = _run(state, x, keep=True)
    diff = pred - truth
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grads: list[Optional[dict]] = [None] * len(spec.layers)
    trainable = [i for i, l in enumerate(spec.layers) if l.has_params and l.trainable]
    if not trainable:
        return loss, grads
    first = trainable[0]
    d = (2.0 / diff.size) * diff
    for i in range(len(spec.layers) - 1, first - 1, -1):
        layer = spec.layers[i]
        cache = caches[i]
        need_dx = i > first
        if layer.kind == "dense":
            p = state.params[i]
            if layer.trainable:
                grads[i] = {"W": cache.T @ d, "b": d.sum(axis=0)}
            if need_dx:
                d = d @ p["W"].T
        elif layer.kind == "conv":
            p = state.params[i]
            cols, x_shape = cache
            dx, dW, db = _conv_backward(d, cols, x_shape, p["W"], need_dx)
            if layer.trainable:
                grads[i] = {"W": dW, "b": db}
            d = dx
        elif layer.kind == "maxpool":
            idx, x_shape = cache
            d = _pool_backward(d, idx, x_shape)
        elif layer.kind == "activation":
            d = d * cache
        else:
            d = d.reshape(cache)
    return loss, grads


def gradient_check(state: NetworkState, images, truth, h: float = 1e-5, probes: int = 20,
                   seed: int = 0) -> float:
    """Worst relative error between backprop and central differences.

    Runs on a float64 copy; ``probes`` random entries are checked per
    parameter array.  Relative error is ``|a - n| / max(|a| + |n|, 1e-12)``.
    """
    net = state.astype(np.float64)
    x = as_batch(images, np.float64)
    y = np.asarray(truth, dtype=np.float64).reshape(len(x), 2)
    _, grads = backward(net, x, y)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, g in enumerate(grads):
        if g is None:
            continue
        for k, ga in g.items():
            arr = net.params[i][k]
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
            for j in picks:
                keep = flat[j]
                flat[j] = keep + h
                lp = loss_mse(forward(net, x), y)
                flat[j] = keep - h
                lm = loss_mse(forward(net, x), y)
                flat[j] = keep
                num = (lp - lm) / (2 * h)
                ana = float(ga.reshape(-1)[j])
                worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-12))
    return worst


def adam_step(state: NetworkState, grads, p: AdamParams) -> NetworkState:
    """One bias-corrected Adam update, in place; returns ``state``."""
    state.step += 1
    t = state.step
    dt = state.dtype
    b1, b2 = dt.type(p.beta1), dt.type(p.beta2)
    c1 = 1.0 - p.beta1**t
    c2 = 1.0 - p.beta2**t
    lr, eps = p.learning_rate, p.epsilon
    for i, layer in enumerate(state.spec.layers):
        if not layer.has_params or not layer.trainable or grads[i] is None:
            continue
        for k, g in grads[i].items():
            m = state.m[i][k]
            v = state.v[i][k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr == 0:
                continue
            step = (m / dt.type(c1)) / (np.sqrt(v / dt.type(c2)) + dt.type(eps))
            state.params[i][k] -= dt.type(lr) * step
    return state


def set_trainable(state: NetworkState, layer_indices: Sequence[int], flag: bool) -> NetworkState:
    layers = list(state.spec.layers)
    for i in layer_indices:
        if not 0 <= i < len(layers):
            raise IndexError(f"layer index {i} out of range (network has {len(layers)} layers)")
        layers[i] = replace(layers[i], trainable=bool(flag))
    state.spec = replace(state.spec, layers=tuple(layers))
    return state


def freeze_conv_blocks(state: NetworkState, n_blocks: int) -> NetworkState:
    blocks = state.spec.conv_blocks()
    idx = [i for block in blocks[:n_blocks] for i in block]
    return set_trainable(state, idx, False)


# --------------------------------------------------------------------------
# serialization


def spec_text(spec: NetworkSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True)


def dump_model(state: NetworkState, meta: Optional[dict] = None) -> bytes:
    header = {"spec": state.spec.to_dict(), "step": state.step, "seed": state.seed, "meta": meta or {}}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(hb)))
    buf.write(hb)
    for p in state.params:
        if p is None:
            continue
        for k in ("W", "b"):
            buf.write(np.ascontiguousarray(p[k], dtype="<f4").tobytes())
    return buf.getvalue()


def save_model(state: NetworkState, path, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(dump_model(state, meta))


def parse_model(data: bytes) -> tuple[NetworkState, dict]:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("bad magic: not a CRCNN model file")
    off = len(MAGIC)
    if len(data) < off + 6:
        raise ModelFormatError("truncated model file: header incomplete")
    version, hlen = struct.unpack_from("<HI", data, off)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported version {version} (supported: {FORMAT_VERSION})")
    off += 6
    if len(data) < off + hlen:
        raise ModelFormatError("truncated model file: header incomplete")
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
        shapes = spec.shapes()
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    off += hlen
    arrays = []
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            arrays.append(((layer.kernel, layer.kernel, shape[2], layer.filters), (layer.filters,)))
        elif layer.kind == "dense":
            arrays.append(((shape[0], layer.units), (layer.units,)))
        else:
            arrays.append(None)
        shape = shapes[i]
    expected = off + 4 * sum(int(np.prod(a)) + int(np.prod(b)) for a, b in filter(None, arrays))
    if len(data) != expected:
        what = "truncated" if len(data) < expected else "oversized"
        raise ModelFormatError(f"{what} model file: expected {expected} bytes, got {len(data)}")
    params: list[Optional[dict]] = []
    for shp in arrays:
        if shp is None:
            params.append(None)
            continue
        entry = {}
        for k, s in zip(("W", "b"), shp):
            count = int(np.prod(s))
            entry[k] = np.frombuffer(data, dtype="<f4", count=count, offset=off) \
                .astype(np.float32).reshape(s)
            off += 4 * count
        params.append(entry)
    state = NetworkState(spec, params, step=int(header.get("step", 0)),
                         seed=int(header.get("seed", 0)))
    return state, header.get("meta", {})


def load_model(path) -> NetworkState:
    return parse_model(Path(path).read_bytes())[0]
