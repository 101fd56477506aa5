"""Minimal dense/convolutional network engine with exact reverse-mode gradients.

Everything is float64 and batch-first. The layer menu is deliberately small:
Dense, ReLU, Conv2D (3x3 kernel, stride 1, no padding), MaxPool (2x2) and
Flatten, terminated by softmax cross-entropy. Backward passes produce exact
gradients with respect to both the parameters and the input batch; the input
gradient is what the PGD attack consumes.

Parameters and gradient bundles are immutable value objects: updates return
new ``Params`` instances and never mutate arrays in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError, NumericError, SpecError
from .seeding import derive_seed


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Conv2D:
    """3x3 convolution, stride 1, no padding."""

    in_channels: int
    out_channels: int


@dataclass(frozen=True)
class MaxPool:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Dense | ReLU | Conv2D | MaxPool | Flatten


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: input shape, ordered layers, class count."""

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    class_count: int


@dataclass(frozen=True)
class Params:
    """Per-layer weights; ``None`` entries for parameterless layers."""

    layers: tuple[tuple[np.ndarray, np.ndarray] | None, ...]

    @property
    def count(self) -> int:
        return sum(w.size + b.size for e in self.layers if e is not None for w, b in [e])

    def as_vector(self) -> np.ndarray:
        parts = []
        for entry in self.layers:
            if entry is not None:
                parts.append(entry[0].ravel())
                parts.append(entry[1].ravel())
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def with_vector(self, vector: np.ndarray) -> "Params":
        """Rebuild a structurally identical Params from a flat vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.count:
            raise DimensionError(
                f"vector has {vector.size} values, parameters need {self.count}"
            )
        out = []
        pos = 0
        for entry in self.layers:
            if entry is None:
                out.append(None)
                continue
            w, b = entry
            nw = vector[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            nb = vector[pos : pos + b.size].reshape(b.shape)
            pos += b.size
            out.append((nw, nb))
        return Params(tuple(out))


def params_equal(a: Params, b: Params) -> bool:
    """Bit-exact equality of two parameter sets."""
    if len(a.layers) != len(b.layers):
        return False
    for ea, eb in zip(a.layers, b.layers):
        if (ea is None) != (eb is None):
            return False
        if ea is None:
            continue
        if not (np.array_equal(ea[0], eb[0]) and np.array_equal(ea[1], eb[1])):
            return False
    return True


@dataclass(frozen=True)
class GradientBundle:
    """Loss plus gradients mirroring the parameter and input shapes."""

    param_grads: Params
    input_grads: np.ndarray
    loss: float


def shape_plan(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-layer output shapes (excluding the batch dimension).

    Entry 0 is the input shape; entry i+1 the output of layer i. Raises
    SpecError if adjacent layers are incompatible or the final width does
    not equal the class count.
    """
    if spec.class_count < 2:
        raise SpecError(f"class_count must be >= 2, got {spec.class_count}")
    if any(d <= 0 for d in spec.input_shape):
        raise SpecError(f"input shape {spec.input_shape} has a non-positive dimension")
    shapes = [tuple(spec.input_shape)]
    cur = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            if layer.in_features <= 0 or layer.out_features <= 0:
                raise SpecError(f"layer {i}: Dense dimensions must be positive")
            if cur != (layer.in_features,):
                raise SpecError(
                    f"layer {i}: Dense expects flat input of width {layer.in_features}, got {cur}"
                )
            cur = (layer.out_features,)
        elif isinstance(layer, ReLU):
            pass
        elif isinstance(layer, Conv2D):
            if layer.in_channels <= 0 or layer.out_channels <= 0:
                raise SpecError(f"layer {i}: Conv2D channel counts must be positive")
            if len(cur) != 3 or cur[0] != layer.in_channels:
                raise SpecError(
                    f"layer {i}: Conv2D expects (channels={layer.in_channels}, H, W), got {cur}"
                )
            if cur[1] < 3 or cur[2] < 3:
                raise SpecError(f"layer {i}: Conv2D needs spatial extent >= 3, got {cur}")
            cur = (layer.out_channels, cur[1] - 2, cur[2] - 2)
        elif isinstance(layer, MaxPool):
            if len(cur) != 3:
                raise SpecError(f"layer {i}: MaxPool expects (C, H, W), got {cur}")
            if cur[1] < 2 or cur[2] < 2:
                raise SpecError(f"layer {i}: MaxPool needs spatial extent >= 2, got {cur}")
            cur = (cur[0], cur[1] // 2, cur[2] // 2)
        elif isinstance(layer, Flatten):
            cur = (int(np.prod(cur)),)
        else:
            raise SpecError(f"layer {i}: unknown layer {layer!r}")
        shapes.append(cur)
    if cur != (spec.class_count,):
        raise SpecError(
            f"network output shape {cur} does not match class count {spec.class_count}"
        )
    return shapes


def _wants_he(spec: NetworkSpec, index: int) -> bool:
    # He scaling when the next non-pooling, non-flatten layer is a ReLU.
    for layer in spec.layers[index + 1 :]:
        if isinstance(layer, (MaxPool, Flatten)):
            continue
        return isinstance(layer, ReLU)
    return False


def init_network(spec: NetworkSpec, seed: int) -> Params:
    """Seeded He/Glorot initialization; biases start at zero."""
    shape_plan(spec)
    entries: list[tuple[np.ndarray, np.ndarray] | None] = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            fan_in, fan_out = layer.in_features, layer.out_features
            wshape = (fan_in, fan_out)
            bshape = (fan_out,)
        elif isinstance(layer, Conv2D):
            fan_in = layer.in_channels * 9
            fan_out = layer.out_channels * 9
            wshape = (layer.out_channels, layer.in_channels, 3, 3)
            bshape = (layer.out_channels,)
        else:
            entries.append(None)
            continue
        rng = np.random.default_rng(derive_seed(seed, "layer", i))
        if _wants_he(spec, i):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=wshape)
        entries.append((w, np.zeros(bshape)))
    return Params(tuple(entries))


def _check_batch(spec: NetworkSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 1 + len(spec.input_shape) or batch.shape[1:] != tuple(spec.input_shape):
        raise DimensionError(
            f"batch shape {batch.shape} does not match (B, {', '.join(map(str, spec.input_shape))})"
        )
    return batch


def _conv_forward(x, w, b):
    B, _, H, W = x.shape
    cout = w.shape[0]
    oh, ow = H - 2, W - 2
    win = sliding_window_view(x, (3, 3), axis=(2, 3))
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * oh * ow, -1)
    out = col @ w.reshape(cout, -1).T + b
    return out.reshape(B, oh, ow, cout).transpose(0, 3, 1, 2), col


def _conv_backward(dout, col, x_shape, w):
    B, cin, H, W = x_shape
    cout = w.shape[0]
    oh, ow = H - 2, W - 2
    dmat = dout.transpose(0, 2, 3, 1).reshape(B * oh * ow, cout)
    dw = (dmat.T @ col).reshape(w.shape)
    db = dmat.sum(axis=0)
    dpad = np.pad(dout, ((0, 0), (0, 0), (2, 2), (2, 2)))
    win = sliding_window_view(dpad, (3, 3), axis=(2, 3))
    col2 = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, -1)
    wflip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
    dx = (col2 @ wflip.T).reshape(B, H, W, cin).transpose(0, 3, 1, 2)
    return dx, dw, db


def _pool_forward(x):
    B, C, H, W = x.shape
    h2, w2 = H // 2, W // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    r = xc.reshape(B, C, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, h2, w2, 4)
    idx = r.argmax(axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    B, C, H, W = x_shape
    h2, w2 = H // 2, W // 2
    dr = np.zeros((B, C, h2, w2, 4))
    np.put_along_axis(dr, idx[..., None], dout[..., None], axis=-1)
    dxc = dr.reshape(B, C, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * h2, 2 * w2)
    if 2 * h2 == H and 2 * w2 == W:
        return dxc
    dx = np.zeros((B, C, H, W))
    dx[:, :, : 2 * h2, : 2 * w2] = dxc
    return dx


def _run_forward(params: Params, spec: NetworkSpec, batch: np.ndarray):
    """Forward pass returning logits and per-layer backward caches."""
    x = batch
    caches = []
    for layer, entry in zip(spec.layers, params.layers):
        if isinstance(layer, Dense):
            w, b = entry
            caches.append(("dense", x))
            x = x @ w + b
        elif isinstance(layer, ReLU):
            caches.append(("relu", x > 0))
            x = np.maximum(x, 0.0)
        elif isinstance(layer, Conv2D):
            x_shape = x.shape
            x, col = _conv_forward(x, entry[0], entry[1])
            caches.append(("conv", (col, x_shape)))
        elif isinstance(layer, MaxPool):
            x_shape = x.shape
            x, idx = _pool_forward(x)
            caches.append(("pool", (idx, x_shape)))
        else:  # Flatten
            caches.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
    return x, caches


def forward(params: Params, spec: NetworkSpec, batch: np.ndarray) -> np.ndarray:
    """Logits of shape (batch, classes)."""
    shape_plan(spec)
    batch = _check_batch(spec, batch)
    logits, _ = _run_forward(params, spec, batch)
    return logits


def _softmax_ce(logits: np.ndarray, labels: np.ndarray):
    B = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    # per-sample loss: log(sum exp(z - m)) - (z_y - m), never negative
    per = np.log(s[:, 0]) - (logits[np.arange(B), labels] - m[:, 0])
    probs = e / s
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    return float(per.mean()), dlogits


def loss_forward_backward(
    params: Params, spec: NetworkSpec, batch: np.ndarray, labels: np.ndarray
) -> GradientBundle:
    """Mean softmax cross-entropy with exact parameter and input gradients."""
    shape_plan(spec)
    batch = _check_batch(spec, batch)
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.shape != (batch.shape[0],):
        raise InputError(
            f"labels shape {labels.shape} does not match batch size {batch.shape[0]}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= spec.class_count):
        raise InputError(
            f"labels must lie in [0, {spec.class_count}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )

    logits, caches = _run_forward(params, spec, batch)
    loss, grad = _softmax_ce(logits, labels)

    grad_entries: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        kind, cache = caches[i]
        if kind == "dense":
            w, _ = params.layers[i]
            grad_entries[i] = (cache.T @ grad, grad.sum(axis=0))
            grad = grad @ w.T
        elif kind == "relu":
            grad = grad * cache
        elif kind == "conv":
            col, x_shape = cache
            grad, dw, db = _conv_backward(grad, col, x_shape, params.layers[i][0])
            grad_entries[i] = (dw, db)
        elif kind == "pool":
            idx, x_shape = cache
            grad = _pool_backward(grad, idx, x_shape)
        else:  # flatten
            grad = grad.reshape(cache)
    return GradientBundle(Params(tuple(grad_entries)), grad, loss)


def sgd_update(params: Params, grads: GradientBundle, lr: float) -> Params:
    """One plain gradient step: theta <- theta - lr * grad, elementwise."""
    if lr < 0:
        raise InputError(f"learning rate must be >= 0, got {lr}")
    out = []
    for i, (entry, gentry) in enumerate(zip(params.layers, grads.param_grads.layers)):
        if entry is None:
            out.append(None)
            continue
        w, b = entry
        gw, gb = gentry
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise NumericError(f"non-finite gradient at layer {i}", where=f"layer {i}")
        out.append((w - lr * gw, b - lr * gb))
    return Params(tuple(out))
