"""Feature layers of the cascade and the correlation score (template * search + v).

Arrays are laid out ``(H, W, C)``. Conv weights are ``(kh, kw, cin, cout)``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    stride: int = 1

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"feature map must be HxWxC with every dim >= 1, got {data.shape}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class ScoreMap:
    """Score grid plus its placement in search-window pixels.

    ``center`` is the (row, col) grid coordinate of zero displacement and
    ``stride`` the window-pixel size of one cell.
    """

    data: np.ndarray
    stride: float = 1.0
    center: tuple[float, float] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("score map must be 2-D")
        if not np.all(np.isfinite(data)):
            raise ValueError("score map contains non-finite values")
        object.__setattr__(self, "data", data)
        if self.center is None:
            object.__setattr__(self, "center", ((data.shape[0] - 1) / 2, (data.shape[1] - 1) / 2))


# --------------------------------------------------------------------------
# cheap layers


def pixel_layer(window) -> FeatureMap:
    window = np.asarray(window, dtype=np.float64)
    if window.size == 0:
        raise ValueError("empty window")
    return FeatureMap(window - window.mean(), stride=1)


def hog_layer(window, cell: int = 4, bins: int = 9, eps: float = 1e-6) -> FeatureMap:
    """Unsigned-orientation HOG with one histogram per ``cell`` x ``cell`` block of pixels.

    Each cell is normalised by the mean of its inverse L2 norms over the four
    2x2-cell blocks that contain it (zero energy outside the grid), which keeps
    the descriptor equivariant to 90 degree rotations of the window.
    """
    img = np.asarray(window, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("HOG expects a non-empty grayscale window")
    if cell > min(img.shape):
        raise ValueError(f"cell size {cell} exceeds window {img.shape}")
    ph = -img.shape[0] % cell
    pw = -img.shape[1] % cell
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    hc, wc = img.shape[0] // cell, img.shape[1] // cell

    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    b = np.minimum((ang * (bins / np.pi)).astype(np.intp), bins - 1)

    rows = np.arange(img.shape[0]) // cell
    cols = np.arange(img.shape[1]) // cell
    idx = (rows[:, None] * wc + cols[None, :]) * bins + b
    hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=hc * wc * bins)
    hist = hist.reshape(hc, wc, bins)

    energy = np.pad((hist ** 2).sum(axis=2), 1)
    block = energy[:-1, :-1] + energy[1:, :-1] + energy[:-1, 1:] + energy[1:, 1:]
    inv = 1.0 / np.sqrt(block + eps ** 2)
    scale = (inv[:-1, :-1] + inv[1:, :-1] + inv[:-1, 1:] + inv[1:, 1:]) / 4
    return FeatureMap(hist * scale[:, :, None], stride=cell)


# --------------------------------------------------------------------------
# conv stack


@dataclass(frozen=True)
class ConvLayerSpec:
    kh: int
    kw: int
    cin: int
    cout: int
    stride: int = 1
    pool: bool = False
    relu: bool = True

    def __post_init__(self):
        if min(self.kh, self.kw, self.cin, self.cout, self.stride) < 1:
            raise ValueError(f"invalid conv layer {self}")


@dataclass(frozen=True)
class ConvStackSpec:
    layers: tuple[ConvLayerSpec, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        for prev, nxt in zip(layers, layers[1:]):
            if prev.cout != nxt.cin:
                raise ValueError(f"channel mismatch: {prev.cout} -> {nxt.cin}")

    def __len__(self):
        return len(self.layers)

    def strides(self) -> list[int]:
        """Cumulative pixel stride of each layer's output."""
        out, s = [], 1
        for layer in self.layers:
            s *= layer.stride * (2 if layer.pool else 1)
            out.append(s)
        return out

    def output_sizes(self, size: int) -> list[int]:
        out = []
        for layer in self.layers:
            size = (size - layer.kh) // layer.stride + 1
            if layer.pool:
                size //= 2
            if size < 1:
                raise ValueError("input too small for conv stack")
            out.append(size)
        return out


def default_conv_spec(depth: int = 3) -> ConvStackSpec:
    """C1 5x5 1->8 /2 +pool, C2 3x3 8->16, C3..C5 3x3 16->16; no rectifier on the last."""
    if not 1 <= depth <= 5:
        raise ValueError("conv depth must be within 1..5")
    layers = [ConvLayerSpec(5, 5, 1, 8, stride=2, pool=True), ConvLayerSpec(3, 3, 8, 16)]
    layers += [ConvLayerSpec(3, 3, 16, 16) for _ in range(3)]
    layers = layers[:depth]
    last = layers[-1]
    layers[-1] = ConvLayerSpec(last.kh, last.kw, last.cin, last.cout, last.stride, last.pool, relu=False)
    return ConvStackSpec(tuple(layers))


def init_conv_weights(spec: ConvStackSpec, rng: np.random.Generator):
    """Fan-in scaled uniform weights, zero biases."""
    weights = []
    for layer in spec.layers:
        fan_in = layer.kh * layer.kw * layer.cin
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(layer.kh, layer.kw, layer.cin, layer.cout))
        weights.append((w, np.zeros(layer.cout)))
    return weights


def _check_weights(spec: ConvStackSpec, weights):
    if len(weights) != len(spec.layers):
        raise ValueError(f"expected {len(spec.layers)} weight pairs, got {len(weights)}")
    for layer, (w, b) in zip(spec.layers, weights):
        if w.shape != (layer.kh, layer.kw, layer.cin, layer.cout) or b.shape != (layer.cout,):
            raise ValueError(f"weight shape {w.shape}/{b.shape} does not match {layer}")


@dataclass
class LayerCache:
    x: np.ndarray
    pre: np.ndarray
    out: np.ndarray
    pool_idx: np.ndarray | None = None
    conv_shape: tuple = field(default=())


def conv_layer_forward(layer: ConvLayerSpec, w, b, x):
    """One conv -> rectifier -> 2x2 max-pool block. Returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.shape[2] != layer.cin:
        raise ValueError(f"layer expects {layer.cin} input channels, got {x.shape[2]}")
    if x.shape[0] < layer.kh or x.shape[1] < layer.kw:
        raise ValueError("input smaller than kernel")
    s = layer.stride
    win = sliding_window_view(x, (layer.kh, layer.kw), axis=(0, 1))[::s, ::s]
    pre = np.tensordot(win, w, axes=([2, 3, 4], [2, 0, 1])) + b
    y = np.maximum(pre, 0.0) if layer.relu else pre
    pool_idx = None
    if layer.pool:
        hp, wp = y.shape[0] // 2, y.shape[1] // 2
        if hp < 1 or wp < 1:
            raise ValueError("feature map too small to pool")
        blocks = y[: 2 * hp, : 2 * wp].reshape(hp, 2, wp, 2, -1).transpose(0, 2, 4, 1, 3).reshape(hp, wp, -1, 4)
        pool_idx = blocks.argmax(axis=3)
        out = np.take_along_axis(blocks, pool_idx[..., None], axis=3)[..., 0]
    else:
        out = y
    return out, LayerCache(x=x, pre=pre, out=out, pool_idx=pool_idx, conv_shape=pre.shape)


def conv_layer_backward(layer: ConvLayerSpec, w, cache: LayerCache, dout):
    """Reverse-mode pass through one block. Returns (dx, dw, db)."""
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != cache.out.shape:
        raise ValueError(f"upstream gradient {dout.shape} does not match output {cache.out.shape}")
    dy = dout
    if layer.pool:
        hp, wp, c = dout.shape
        routed = np.zeros((hp, wp, c, 4))
        np.put_along_axis(routed, cache.pool_idx[..., None], dout[..., None], axis=3)
        dy = np.zeros(cache.conv_shape)
        dy[: 2 * hp, : 2 * wp] = routed.reshape(hp, wp, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * hp, 2 * wp, c)
    if layer.relu:
        dy = dy * (cache.pre > 0)
    s = layer.stride
    win = sliding_window_view(cache.x, (layer.kh, layer.kw), axis=(0, 1))[::s, ::s]
    dw = np.tensordot(win, dy, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
    db = dy.sum(axis=(0, 1))
    dx = np.zeros_like(cache.x)
    ho, wo = dy.shape[:2]
    for k in range(layer.kh):
        for m in range(layer.kw):
            dx[k : k + s * (ho - 1) + 1 : s, m : m + s * (wo - 1) + 1 : s] += dy @ w[k, m].T
    return dx, dw, db


def conv_forward(spec: ConvStackSpec, weights, window, return_cache: bool = False):
    """Run the whole stack; one FeatureMap per layer (and the caches if asked)."""
    _check_weights(spec, weights)
    x = np.asarray(window, dtype=np.float64)
    maps, caches = [], []
    for layer, (w, b), stride in zip(spec.layers, weights, spec.strides()):
        x, cache = conv_layer_forward(layer, w, b, x)
        maps.append(FeatureMap(x, stride=stride))
        caches.append(cache)
    return (maps, caches) if return_cache else maps


def conv_backward(spec: ConvStackSpec, weights, caches, upstream):
    """Backpropagate per-layer output gradients through the stack.

    ``upstream[i]`` is dLoss/d(output of layer i) or None. Returns
    ``(weight_grads, input_grad)`` with ``weight_grads[i] == (dw, db)``.
    """
    _check_weights(spec, weights)
    if caches is None or len(caches) != len(spec.layers):
        raise ValueError("forward caches for every layer are required")
    if len(upstream) != len(spec.layers):
        raise ValueError("need one upstream entry per layer")
    grads = [None] * len(spec.layers)
    carry = None
    for i in reversed(range(len(spec.layers))):
        g = carry
        if upstream[i] is not None:
            up = np.asarray(upstream[i], dtype=np.float64).reshape(caches[i].out.shape)
            g = up if g is None else g + up
        if g is None:
            g = np.zeros_like(caches[i].out)
        dx, dw, db = conv_layer_backward(spec.layers[i], weights[i][0], caches[i], g)
        grads[i] = (dw, db)
        carry = dx
    return grads, carry


# --------------------------------------------------------------------------
# correlation score


def cross_correlate(template: FeatureMap, search: FeatureMap, v: float = 0.0) -> ScoreMap:
    """Valid-mode multi-channel correlation of ``template`` over ``search``, plus ``v``."""
    t, s = template.data, search.data
    if t.shape[2] != s.shape[2]:
        raise ValueError(f"channel mismatch {t.shape[2]} vs {s.shape[2]}")
    if template.stride != search.stride:
        raise ValueError(f"stride mismatch {template.stride} vs {search.stride}")
    if t.shape[0] > s.shape[0] or t.shape[1] > s.shape[1]:
        raise ValueError("template larger than search region")
    win = sliding_window_view(s, t.shape[:2], axis=(0, 1))
    out = np.tensordot(win, t, axes=([2, 3, 4], [2, 0, 1])) + v
    center = ((s.shape[0] - t.shape[0]) / 2, (s.shape[1] - t.shape[1]) / 2)
    return ScoreMap(out, stride=float(search.stride), center=center)


def cross_correlate_backward(template, search, grad):
    """Gradients of sum(grad * xcorr(template, search)) w.r.t. template and search arrays."""
    template = np.asarray(template, dtype=np.float64)
    search = np.asarray(search, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    th, tw = template.shape[:2]
    win = sliding_window_view(search, grad.shape, axis=(0, 1))
    dt = np.tensordot(win, grad, axes=([3, 4], [0, 1])).reshape(template.shape)
    ds = np.zeros_like(search)
    gh, gw = grad.shape
    for i in range(th):
        for j in range(tw):
            ds[i : i + gh, j : j + gw] += grad[:, :, None] * template[i, j]
    return dt, ds


# --------------------------------------------------------------------------
# weight file
#
#   magic    8 bytes  b"CTCONVW\0"
#   version  uint32   (1)
#   n        uint32   number of layers
#   n x 7    uint32   kh, kw, cin, cout, stride, pool, relu
#   then per layer: kh*kw*cin*cout float64 weights (C order of kh,kw,cin,cout),
#                   cout float64 biases
#   everything little-endian

WEIGHT_MAGIC = b"CTCONVW\x00"
WEIGHT_VERSION = 1


def weights_to_bytes(spec: ConvStackSpec, weights) -> bytes:
    _check_weights(spec, weights)
    buf = io.BytesIO()
    buf.write(WEIGHT_MAGIC)
    buf.write(struct.pack("<II", WEIGHT_VERSION, len(spec.layers)))
    for layer in spec.layers:
        buf.write(struct.pack("<7I", layer.kh, layer.kw, layer.cin, layer.cout,
                              layer.stride, int(layer.pool), int(layer.relu)))
    for w, b in weights:
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def weights_from_bytes(data: bytes):
    """Inverse of :func:`weights_to_bytes`; returns ``(spec, weights)``."""
    if data[:8] != WEIGHT_MAGIC:
        raise ValueError("not a conv weight blob (bad magic)")
    version, n = struct.unpack_from("<II", data, 8)
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported weight version {version}")
    off = 16
    layers = []
    for _ in range(n):
        kh, kw, cin, cout, stride, pool, relu = struct.unpack_from("<7I", data, off)
        off += 28
        layers.append(ConvLayerSpec(kh, kw, cin, cout, stride, bool(pool), bool(relu)))
    spec = ConvStackSpec(tuple(layers))
    weights = []
    for layer in layers:
        nw = layer.kh * layer.kw * layer.cin * layer.cout
        end = off + 8 * (nw + layer.cout)
        if end > len(data):
            raise ValueError("truncated conv weight blob")
        w = np.frombuffer(data, dtype="<f8", count=nw, offset=off).reshape(layer.kh, layer.kw, layer.cin, layer.cout)
        b = np.frombuffer(data, dtype="<f8", count=layer.cout, offset=off + 8 * nw)
        weights.append((w.astype(np.float64), b.astype(np.float64)))
        off = end
    if off != len(data):
        raise ValueError("trailing bytes after conv weights")
    return spec, weights


def save_weights(path, spec: ConvStackSpec, weights):
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(spec, weights))


def load_weights(path):
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
