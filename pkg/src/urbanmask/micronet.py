"""Small U-Net with hand-derived forward and backward passes.

Layout per level: two 3x3 convolutions (zero padding 1) each followed by
ReLU, 2x2 max-pool on the way down; on the way up a 2x nearest upsample
followed by a 3x3 convolution + ReLU, channel concatenation with the skip
tensor, and two more 3x3 conv + ReLU.  A 1x1 convolution maps to a single
logit channel, squashed by a sigmoid.

Public tensors are channels-first, ``(C, H, W)`` or batched ``(N, C, H, W)``.
Internally everything runs channels-last so that every convolution is a
few cache-sized matmuls.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .raster import BinaryMask

UPSAMPLE_MODES = ("nearest_then_conv",)

_OFFSETS = [(dy, dx) for dy in range(3) for dx in range(3)]

_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class ShapeError(ValueError):
    pass


class CacheError(RuntimeError):
    """Backward called with a cache that does not belong to these params."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    base_channels: int = 16
    depth: int = 4
    upsample: str = "nearest_then_conv"

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.upsample not in UPSAMPLE_MODES:
            raise ValueError(f"unknown upsample mode {self.upsample!r}")

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this."""
        return 2 ** self.depth

    def widths(self) -> List[int]:
        return [self.base_channels * 2 ** level for level in range(self.depth + 1)]


def param_shapes(cfg: NetConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Names and shapes of every parameter, in enumeration order."""
    w = cfg.widths()
    shapes = []

    def conv(name, cin, cout):
        shapes.append((f"{name}.weight", (3, 3, cin, cout)))
        shapes.append((f"{name}.bias", (cout,)))

    cin = cfg.in_channels
    for level in range(cfg.depth):
        conv(f"enc{level}.conv1", cin, w[level])
        conv(f"enc{level}.conv2", w[level], w[level])
        cin = w[level]
    conv("mid.conv1", w[cfg.depth - 1], w[cfg.depth])
    conv("mid.conv2", w[cfg.depth], w[cfg.depth])
    for level in reversed(range(cfg.depth)):
        conv(f"dec{level}.up", w[level + 1], w[level])
        conv(f"dec{level}.conv1", 2 * w[level], w[level])
        conv(f"dec{level}.conv2", w[level], w[level])
    shapes.append(("head.weight", (w[0], 1)))
    shapes.append(("head.bias", (1,)))
    return shapes


class NetParams:
    """Ordered collection of named parameter arrays.

    Gradients and Adam moments use the same class so that everything lines
    up by position.  ``version`` is bumped on every in-place update and lets
    :func:`backward` detect a stale forward cache.
    """

    def __init__(self, names: List[str], arrays: List[np.ndarray]):
        if len(names) != len(arrays):
            raise ValueError("names/arrays length mismatch")
        self.names = list(names)
        self.arrays = list(arrays)
        self.version = 0

    @classmethod
    def zeros(cls, cfg: NetConfig) -> "NetParams":
        names, arrays = [], []
        for name, shape in param_shapes(cfg):
            names.append(name)
            arrays.append(np.zeros(shape, dtype=np.float64))
        return cls(names, arrays)

    def zeros_like(self) -> "NetParams":
        return NetParams(self.names, [np.zeros_like(a) for a in self.arrays])

    def copy(self) -> "NetParams":
        return NetParams(self.names, [a.copy() for a in self.arrays])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[self.names.index(name)]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def set_vector(self, vec: np.ndarray) -> None:
        if vec.size != self.size:
            raise ValueError(f"vector has {vec.size} values, params need {self.size}")
        pos = 0
        for a in self.arrays:
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        self.version += 1

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(zip(self.names, self.arrays))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays)


def init_params(cfg: NetConfig, seed: int) -> NetParams:
    """He-uniform kernels (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = NetParams.zeros(cfg)
    for name, a in zip(params.names, params.arrays):
        if name.endswith(".weight"):
            fan_in = int(np.prod(a.shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            a[...] = rng.uniform(-bound, bound, size=a.shape)
    return params


# -- layer primitives (channels-last) -------------------------------------

_CHUNK = 1024


def _pad_flat(x):
    """Zero-pad (N, H, W, C) by one pixel and flatten to (N*(H+2)*(W+2), C).

    In this layout the 3x3 neighbour at (dy, dx) of flat position q sits at
    q + dy*(W+2) + dx, so every kernel tap is a contiguous slice and the
    convolution becomes nine small matmuls per cache-sized chunk.
    """
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    return xp.reshape(-1, c)


def _offsets(w):
    return [dy * (w + 2) + dx for dy, dx in _OFFSETS]


def conv3x3_forward(x, weight, bias):
    n, h, w, c = x.shape
    cout = weight.shape[-1]
    flat = _pad_flat(x)
    total = flat.shape[0]
    span = total - 2 * (w + 2) - 2
    offs = _offsets(w)
    taps = [weight[dy, dx] for dy, dx in _OFFSETS]
    out = np.zeros((total, cout), dtype=x.dtype)
    tmp = np.empty((_CHUNK, cout), dtype=x.dtype)
    for q in range(0, span, _CHUNK):
        m = min(_CHUNK, span - q)
        acc = out[q:q + m]
        np.matmul(flat[q:q + m], taps[0], out=acc)
        for o, tap in zip(offs[1:], taps[1:]):
            np.matmul(flat[q + o:q + o + m], tap, out=tmp[:m])
            acc += tmp[:m]
    out = out.reshape(n, h + 2, w + 2, cout)[:, :h, :w, :]
    return out + bias


def conv3x3_backward(x, weight, dout, need_dx=True):
    n, h, w, c = x.shape
    cout = weight.shape[-1]
    flat = _pad_flat(x)
    total = flat.shape[0]
    span = total - 2 * (w + 2) - 2
    offs = _offsets(w)
    # dout laid out on the padded grid so it lines up with flat positions
    dz = np.zeros((n, h + 2, w + 2, cout), dtype=dout.dtype)
    dz[:, :h, :w, :] = dout
    dflat = dz.reshape(-1, cout)
    dweight = np.zeros((9, c, cout), dtype=dout.dtype)
    taps_t = [np.ascontiguousarray(weight[dy, dx].T) for dy, dx in _OFFSETS]
    dxflat = np.zeros((total, c), dtype=dout.dtype) if need_dx else None
    tmp = np.empty((_CHUNK, c), dtype=dout.dtype)
    for q in range(0, span, _CHUNK):
        m = min(_CHUNK, span - q)
        dq = dflat[q:q + m]
        for k, o in enumerate(offs):
            dweight[k] += flat[q + o:q + o + m].T @ dq
            if need_dx:
                np.matmul(dq, taps_t[k], out=tmp[:m])
                dxflat[q + o:q + o + m] += tmp[:m]
    dbias = dout.reshape(-1, cout).sum(axis=0)
    dweight = dweight.reshape(weight.shape)
    if not need_dx:
        return None, dweight, dbias
    dx = dxflat.reshape(n, h + 2, w + 2, c)[:, 1:-1, 1:-1, :]
    return dx, dweight, dbias


def conv1x1_forward(x, weight, bias):
    n, h, w, c = x.shape
    out = x.reshape(-1, c) @ weight + bias
    return out.reshape(n, h, w, weight.shape[1])


def conv1x1_backward(x, weight, dout):
    n, h, w, c = x.shape
    x2 = x.reshape(-1, c)
    d2 = dout.reshape(-1, weight.shape[1])
    dx = (d2 @ weight.T).reshape(x.shape)
    return dx, x2.T @ d2, d2.sum(axis=0)


def relu_forward(z):
    return np.maximum(z, 0.0)


def relu_backward(a, da):
    return da * (a > 0)


def maxpool2_forward(x):
    """2x2/stride-2 max pool; returns output and the winning slot (0..3)."""
    n, h, w, c = x.shape
    win = (x.reshape(n, h // 2, 2, w // 2, 2, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, h // 2, w // 2, c, 4))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(idx, dout):
    n, h2, w2, c = dout.shape
    # ties route to the first maximal slot, matching argmax in forward
    routed = (idx[..., None] == np.arange(4)) * dout[..., None]
    return (routed.reshape(n, h2, w2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, 2 * h2, 2 * w2, c))


def upsample2_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def concat_forward(a, b):
    return np.concatenate([a, b], axis=-1)


def concat_backward(dout, split):
    return dout[..., :split], dout[..., split:]


def sigmoid_forward(z):
    y = 0.5 * (1.0 + np.tanh(0.5 * z))
    # keep outputs strictly inside (0, 1) even when tanh saturates
    return np.clip(y, _SIG_LO, _SIG_HI)


def sigmoid_backward(y, dy):
    return dy * y * (1.0 - y)


# -- network ---------------------------------------------------------------

@dataclass
class ForwardCache:
    cfg: NetConfig
    params_id: int
    params_version: int
    batched: bool
    records: dict


def _as_nhwc(x: np.ndarray, cfg: NetConfig, dtype) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x)
    batched = x.ndim == 4
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    n, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ShapeError(f"input has {c} channels, network expects {cfg.in_channels}")
    m = cfg.multiple
    if h % m or w % m or h == 0 or w == 0:
        raise ShapeError(f"spatial dims {h}x{w} must be positive multiples of {m}")
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=dtype), batched


def forward(params: NetParams, cfg: NetConfig, x: np.ndarray,
            dtype=np.float64, keep_cache: bool = True):
    """Run the network; returns ``(y, cache)`` with y shaped like x but 1 channel."""
    p = params.as_dict()
    if dtype != np.float64:
        p = {k: v.astype(dtype) for k, v in p.items()}
    a, batched = _as_nhwc(x, cfg, dtype)
    rec = {}

    def conv_relu(name, inp):
        out = relu_forward(conv3x3_forward(inp, p[name + ".weight"], p[name + ".bias"]))
        if keep_cache:
            rec[name] = (inp, out)
        return out

    skips = []
    for level in range(cfg.depth):
        a = conv_relu(f"enc{level}.conv1", a)
        a = conv_relu(f"enc{level}.conv2", a)
        skips.append(a)
        a, idx = maxpool2_forward(a)
        if keep_cache:
            rec[f"pool{level}"] = idx
    a = conv_relu("mid.conv1", a)
    a = conv_relu("mid.conv2", a)
    for level in reversed(range(cfg.depth)):
        a = conv_relu(f"dec{level}.up", upsample2_forward(a))
        a = concat_forward(a, skips[level])
        a = conv_relu(f"dec{level}.conv1", a)
        a = conv_relu(f"dec{level}.conv2", a)
    logits = conv1x1_forward(a, p["head.weight"], p["head.bias"])
    y = sigmoid_forward(logits)
    cache = None
    if keep_cache:
        rec["head"] = a
        rec["y"] = y
        cache = ForwardCache(cfg, id(params), params.version, batched, rec)
    out = y.transpose(0, 3, 1, 2)
    return (out if batched else out[0]), cache


def backward(params: NetParams, cfg: NetConfig, cache: ForwardCache,
             dloss_dy: np.ndarray) -> NetParams:
    """Gradient of the loss w.r.t. every parameter, given dLoss/dy."""
    if cache is None or cache.cfg != cfg or cache.params_id != id(params) \
            or cache.params_version != params.version:
        raise CacheError("forward cache does not match these parameters")
    rec = cache.records
    dy = np.asarray(dloss_dy, dtype=np.float64)
    if not cache.batched:
        dy = dy[None]
    dy = dy.transpose(0, 2, 3, 1)
    if dy.shape != rec["y"].shape:
        raise ShapeError(f"dloss_dy shape {dy.shape} does not match output {rec['y'].shape}")

    p = params.as_dict()
    grads = params.zeros_like()
    g = grads.as_dict()

    def conv_relu_back(name, da, need_dx=True):
        inp, out = rec[name]
        dz = relu_backward(out, da)
        dx, dw, db = conv3x3_backward(inp, p[name + ".weight"], dz, need_dx)
        g[name + ".weight"][...] = dw
        g[name + ".bias"][...] = db
        return dx

    dz = sigmoid_backward(rec["y"], dy)
    da, dw, db = conv1x1_backward(rec["head"], p["head.weight"], dz)
    g["head.weight"][...] = dw
    g["head.bias"][...] = db

    widths = cfg.widths()
    dskips = [None] * cfg.depth
    for level in range(cfg.depth):
        da = conv_relu_back(f"dec{level}.conv2", da)
        da = conv_relu_back(f"dec{level}.conv1", da)
        da, dskips[level] = concat_backward(da, widths[level])
        da = upsample2_backward(conv_relu_back(f"dec{level}.up", da))
    da = conv_relu_back("mid.conv2", da)
    da = conv_relu_back("mid.conv1", da)
    for level in reversed(range(cfg.depth)):
        da = maxpool2_backward(rec[f"pool{level}"], da) + dskips[level]
        da = conv_relu_back(f"enc{level}.conv2", da)
        da = conv_relu_back(f"enc{level}.conv1", da, need_dx=level > 0)
    return grads


def predict_proba(params: NetParams, cfg: NetConfig, x: np.ndarray,
                  dtype=np.float64) -> np.ndarray:
    y, _ = forward(params, cfg, x, dtype=dtype, keep_cache=False)
    return y


def predict_mask(params: NetParams, cfg: NetConfig, x: np.ndarray,
                 threshold: float = 0.5, dtype=np.float64) -> BinaryMask:
    """Binary mask of a single (C, H, W) input: 1 where output > threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    if np.asarray(x).ndim != 3:
        raise ShapeError("predict_mask takes a single (C, H, W) tensor")
    y = predict_proba(params, cfg, x, dtype=dtype)
    return BinaryMask((y[0] > threshold).astype(np.uint8))


# -- checkpoints -----------------------------------------------------------

MAGIC = b"UMASKNET"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIIQ")


def save_checkpoint(params: NetParams, cfg: NetConfig, path) -> None:
    """Little-endian layout: magic, version, config fields, count, float64 values."""
    header = _HEADER.pack(MAGIC, VERSION, cfg.in_channels, cfg.base_channels, cfg.depth,
                          UPSAMPLE_MODES.index(cfg.upsample), params.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.to_vector().astype("<f8").tobytes())


def load_checkpoint(path, expect: Optional[NetConfig] = None) -> Tuple[NetParams, NetConfig]:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, cin, base, depth, up, count = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if up >= len(UPSAMPLE_MODES):
        raise CheckpointError(f"{path}: unknown upsample code {up}")
    cfg = NetConfig(in_channels=cin, base_channels=base, depth=depth,
                    upsample=UPSAMPLE_MODES[up])
    if expect is not None and expect != cfg:
        raise CheckpointError(f"{path}: checkpoint config {cfg} != expected {expect}")
    params = NetParams.zeros(cfg)
    if count != params.size:
        raise CheckpointError(f"{path}: {count} values stored, config needs {params.size}")
    payload = buf[_HEADER.size:]
    if len(payload) != 8 * count:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {8 * count}")
    params.set_vector(np.frombuffer(payload, dtype="<f8").astype(np.float64))
    params.version = 0
    return params, cfg
