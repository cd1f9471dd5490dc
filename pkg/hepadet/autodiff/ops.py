"""Forward kernels and their analytic backward passes.

Every op is registered under a kind name in :data:`OPS` and is used by the
graph engine. The module-level functions at the bottom (``conv2d``,
``maxpool2d``, ``batchnorm`` ...) are the eager, Tensor-in Tensor-out face of
the same kernels.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from hepadet.errors import DegenerateBatchError, ExtentError, LabelError, RoiError, ShapeError

from .rng import generator
from .tensor import Tensor, as_array

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


class RunContext:
    """State visible to kernels during one forward evaluation.

    Parameters
    ----------
    mode : "train" or "infer"
        Selects batch statistics and dropout behaviour.
    seed : int
        Run seed for stochastic ops.
    buffers : dict, optional
        Non-trainable state (batch-norm running statistics), updated in place
        in train mode.
    """

    def __init__(
        self,
        mode: str = "infer",
        seed: int = 0,
        buffers: Optional[Dict[str, np.ndarray]] = None,
    ) -> None:
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', not {mode!r}")
        self.mode = mode
        self.seed = seed
        self.buffers = buffers if buffers is not None else {}
        self.node: Any = 0

    @property
    def training(self) -> bool:
        return self.mode == "train"

    def rng(self, *keys) -> np.random.Generator:
        return generator(self.seed, *keys)


class Op:
    """Base class for a differentiable kernel."""

    kind = ""
    nonsmooth = False

    def forward(self, inputs: List[np.ndarray], ctx: RunContext, **attrs) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, cache: Any, **attrs) -> List[Optional[np.ndarray]]:
        raise NotImplementedError

    def signature(self, cache: Any) -> np.ndarray:
        """Discrete decisions taken by a non-smooth op (masks, argmax)."""
        return np.zeros(0)


OPS: Dict[str, Op] = {}


def register(cls):
    OPS[cls.kind] = cls()
    return cls


def _pair(value) -> Pair:
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    first, second = value
    return int(first), int(second)


def out_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    """Output extent of a sliding window; raises when it would be < 1."""
    if stride < 1:
        raise ExtentError(f"stride must be >= 1, got {stride}")
    span = size + 2 * pad - kernel
    if span < 0:
        raise ExtentError(
            f"window {kernel} does not fit extent {size} with padding {pad}"
        )
    return span // stride + 1


def _windows(padded: np.ndarray, kernel: Pair, stride: Pair) -> np.ndarray:
    view = sliding_window_view(padded, kernel, axis=(2, 3))
    return view[:, :, :: stride[0], :: stride[1]]


def _scatter_windows(
    grad_cols: np.ndarray, padded_shape, kernel: Pair, stride: Pair
) -> np.ndarray:
    """Accumulate per-offset window gradients back onto the padded input.

    ``grad_cols`` has shape ``[N, C, Ho, Wo, kh, kw]``.
    """
    out = np.zeros(padded_shape)
    ho, wo = grad_cols.shape[2], grad_cols.shape[3]
    sh, sw = stride
    for i in range(kernel[0]):
        for j in range(kernel[1]):
            out[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += grad_cols[
                :, :, :, :, i, j
            ]
    return out


def _unpad(array: np.ndarray, pad: Pair) -> np.ndarray:
    ph, pw = pad
    return array[:, :, ph : array.shape[2] - ph, pw : array.shape[3] - pw]


@register
class Conv2d(Op):
    """Cross-correlation of a padded NCHW input with a KCHW kernel."""

    kind = "conv2d"

    def forward(self, inputs, ctx, stride=(1, 1), pad=(0, 0)):
        x, w = inputs[0], inputs[1]
        bias = inputs[2] if len(inputs) > 2 else None
        stride, pad = _pair(stride), _pair(pad)
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"input has {x.shape[1]} channels but weight expects {w.shape[1]}")
        kernel = (w.shape[2], w.shape[3])
        ho = out_extent(x.shape[2], kernel[0], stride[0], pad[0])
        wo = out_extent(x.shape[3], kernel[1], stride[1], pad[1])
        padded = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
        windows = _windows(padded, kernel, stride)
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if bias is not None:
            if bias.shape != (w.shape[0],):
                raise ShapeError(f"bias shape {bias.shape} does not match {w.shape[0]} filters")
            out = out + bias[None, :, None, None]
        assert out.shape[2:] == (ho, wo)
        return np.ascontiguousarray(out), (padded, w, stride, pad, bias is not None)

    def backward(self, grad, cache, **attrs):
        padded, w, stride, pad, has_bias = cache
        kernel = (w.shape[2], w.shape[3])
        windows = _windows(padded, kernel, stride)
        grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_cols = np.tensordot(grad, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        grad_x = _unpad(_scatter_windows(grad_cols, padded.shape, kernel, stride), pad)
        grads = [np.ascontiguousarray(grad_x), grad_w]
        if has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


@register
class MaxPool2d(Op):
    """Spatial max-pool; ties resolve to the first cell in row-major order."""

    kind = "maxpool2d"
    nonsmooth = True

    def forward(self, inputs, ctx, window=(2, 2), stride=(2, 2), pad=(0, 0)):
        (x,) = inputs
        window, stride, pad = _pair(window), _pair(stride), _pair(pad)
        out_extent(x.shape[2], window[0], stride[0], pad[0])
        out_extent(x.shape[3], window[1], stride[1], pad[1])
        padded = np.pad(
            x,
            ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])),
            constant_values=-np.inf,
        )
        windows = _windows(padded, window, stride)
        flat = windows.reshape(windows.shape[:4] + (-1,))
        index = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, index[..., None], axis=-1)[..., 0]
        return out, (padded.shape, index, window, stride, pad)

    def backward(self, grad, cache, **attrs):
        padded_shape, index, window, stride, pad = cache
        cols = np.zeros(index.shape + window)
        for i in range(window[0]):
            for j in range(window[1]):
                cols[..., i, j] = np.where(index == i * window[1] + j, grad, 0.0)
        return [np.ascontiguousarray(_unpad(_scatter_windows(cols, padded_shape, window, stride), pad))]

    def signature(self, cache):
        return cache[1]


@register
class DepthMaxPool(Op):
    """Max-pool along the grouped depth axis of ``[N, D*C, H, W]`` maps."""

    kind = "depth_maxpool"
    nonsmooth = True

    def forward(self, inputs, ctx, groups=1, window=3, stride=2, pad=1):
        (x,) = inputs
        n, channels, h, w = x.shape
        if channels % groups:
            raise ShapeError(f"{channels} channels do not split into {groups} depth groups")
        depth_out = out_extent(groups, window, stride, pad)
        grouped = x.reshape(n, groups, -1)
        padded = np.pad(grouped, ((0, 0), (pad, pad), (0, 0)), constant_values=-np.inf)
        windows = sliding_window_view(padded, window, axis=1)[:, ::stride]
        index = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
        per_group = channels // groups
        out = out.reshape(n, depth_out * per_group, h, w)
        return out, (x.shape, padded.shape, index, window, stride, pad)

    def backward(self, grad, cache, **attrs):
        shape, padded_shape, index, window, stride, pad = cache
        grad = grad.reshape(index.shape)
        padded = np.zeros(padded_shape)
        depth_out = index.shape[1]
        for k in range(window):
            padded[:, k : k + stride * (depth_out - 1) + 1 : stride] += np.where(index == k, grad, 0.0)
        return [padded[:, pad : padded_shape[1] - pad].reshape(shape)]

    def signature(self, cache):
        return cache[2]


def _bn_axes(x: np.ndarray) -> Tuple[int, ...]:
    return (0,) + tuple(range(2, x.ndim))


def _bn_view(vector: np.ndarray, ndim: int) -> np.ndarray:
    return vector.reshape((1, -1) + (1,) * (ndim - 2))


@register
class BatchNorm(Op):
    """Per-channel normalisation over every axis but the channel axis."""

    kind = "batchnorm"

    def forward(self, inputs, ctx, key="bn", eps=1e-5, momentum=0.1):
        x, gamma, beta = inputs
        channels = x.shape[1]
        if gamma.shape != (channels,) or beta.shape != (channels,):
            raise ShapeError(f"batchnorm scale/shift must have shape ({channels},)")
        mean_key, var_key = f"{key}.running_mean", f"{key}.running_var"
        if mean_key not in ctx.buffers:
            ctx.buffers[mean_key] = np.zeros(channels)
            ctx.buffers[var_key] = np.ones(channels)
        axes = _bn_axes(x)
        if ctx.training:
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    f"batch statistics need at least 2 samples, got {x.shape[0]}"
                )
            count = x.size // channels
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            ctx.buffers[mean_key] = (1 - momentum) * ctx.buffers[mean_key] + momentum * mean
            ctx.buffers[var_key] = (1 - momentum) * ctx.buffers[var_key] + momentum * var * count / (
                count - 1
            )
        else:
            mean = ctx.buffers[mean_key]
            var = ctx.buffers[var_key]
        inv_std = 1.0 / np.sqrt(var + eps)
        normed = (x - _bn_view(mean, x.ndim)) * _bn_view(inv_std, x.ndim)
        out = _bn_view(gamma, x.ndim) * normed + _bn_view(beta, x.ndim)
        return out, (normed, gamma, inv_std, ctx.training)

    def backward(self, grad, cache, **attrs):
        normed, gamma, inv_std, training = cache
        ndim = normed.ndim
        axes = _bn_axes(normed)
        grad_gamma = (grad * normed).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_normed = grad * _bn_view(gamma, ndim)
        if training:
            count = normed.size // normed.shape[1]
            grad_x = (
                _bn_view(inv_std, ndim)
                / count
                * (
                    count * grad_normed
                    - _bn_view(grad_normed.sum(axis=axes), ndim)
                    - normed * _bn_view((grad_normed * normed).sum(axis=axes), ndim)
                )
            )
        else:
            grad_x = grad_normed * _bn_view(inv_std, ndim)
        return [grad_x, grad_gamma, grad_beta]


@register
class Relu(Op):
    kind = "relu"
    nonsmooth = True

    def forward(self, inputs, ctx):
        (x,) = inputs
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, grad, cache, **attrs):
        return [np.where(cache, grad, 0.0)]

    def signature(self, cache):
        return cache


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Survivor mask already scaled by ``1 / (1 - rate)``."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


@register
class Dropout(Op):
    kind = "dropout"

    def forward(self, inputs, ctx, rate=0.5):
        (x,) = inputs
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        if not ctx.training or rate == 0:
            return x, None
        mask = dropout_mask(x.shape, rate, ctx.rng("dropout", ctx.node))
        return x * mask, mask

    def backward(self, grad, cache, **attrs):
        return [grad if cache is None else grad * cache]


@register
class Dense(Op):
    kind = "dense"

    def forward(self, inputs, ctx):
        x, w, b = inputs
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(f"dense cannot map {x.shape} through {w.shape}")
        if b.shape != (w.shape[1],):
            raise ShapeError(f"bias shape {b.shape} does not match {w.shape[1]} outputs")
        return x @ w + b, (x, w)

    def backward(self, grad, cache, **attrs):
        x, w = cache
        return [grad @ w.T, x.T @ grad, grad.sum(axis=0)]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@register
class SoftmaxCrossEntropy(Op):
    """Mean negative log-likelihood of integer labels; empty batch gives 0."""

    kind = "softmax_ce"

    def forward(self, inputs, ctx):
        logits, labels = inputs
        labels = np.asarray(labels).astype(np.int64).reshape(-1)
        if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
            raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
        classes = logits.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= classes):
            raise LabelError(f"labels must lie in [0, {classes})")
        count = labels.shape[0]
        if count == 0:
            return np.array(0.0), (np.zeros_like(logits), labels)
        logp = log_softmax(logits)
        loss = -logp[np.arange(count), labels].mean()
        return np.array(loss), (logp, labels)

    def backward(self, grad, cache, **attrs):
        logp, labels = cache
        count = labels.shape[0]
        if count == 0:
            return [np.zeros_like(logp), None]
        grad_logits = np.exp(logp)
        grad_logits[np.arange(count), labels] -= 1.0
        return [grad_logits * (float(grad) / count), None]


@register
class SigmoidBinaryCrossEntropy(Op):
    """Mean logistic loss over targets in {0, 1}; target -1 is ignored."""

    kind = "sigmoid_bce"

    def forward(self, inputs, ctx):
        logits, targets = inputs
        if logits.shape != targets.shape:
            raise ShapeError(f"logits {logits.shape} and targets {targets.shape} disagree")
        valid = targets >= 0
        count = max(int(valid.sum()), 1)
        target = np.where(valid, targets, 0.0)
        losses = np.logaddexp(0.0, logits) - target * logits
        loss = np.where(valid, losses, 0.0).sum() / count
        return np.array(loss), (logits, target, valid, count)

    def backward(self, grad, cache, **attrs):
        logits, target, valid, count = cache
        grad_logits = np.where(valid, expit(logits) - target, 0.0) * (float(grad) / count)
        return [grad_logits, None]


@register
class Add(Op):
    kind = "add"

    def forward(self, inputs, ctx):
        a, b = inputs
        if a.shape != b.shape:
            raise ShapeError(f"cannot add {a.shape} and {b.shape}")
        return a + b, None

    def backward(self, grad, cache, **attrs):
        return [grad, grad]


@register
class Mul(Op):
    kind = "mul"

    def forward(self, inputs, ctx):
        a, b = inputs
        if a.shape != b.shape:
            raise ShapeError(f"cannot multiply {a.shape} and {b.shape}")
        return a * b, (a, b)

    def backward(self, grad, cache, **attrs):
        a, b = cache
        return [grad * b, grad * a]


@register
class Scale(Op):
    kind = "scale"

    def forward(self, inputs, ctx, factor=1.0):
        return inputs[0] * factor, None

    def backward(self, grad, cache, factor=1.0):
        return [grad * factor]


@register
class Sum(Op):
    kind = "sum"

    def forward(self, inputs, ctx):
        (x,) = inputs
        return np.array(x.sum()), x.shape

    def backward(self, grad, cache, **attrs):
        return [np.full(cache, float(grad))]


@register
class Mean(Op):
    """Elementwise mean of k equally shaped inputs."""

    kind = "mean"

    def forward(self, inputs, ctx):
        shapes = {x.shape for x in inputs}
        if len(shapes) != 1:
            raise ShapeError(f"cannot average inputs of shapes {sorted(shapes)}")
        return sum(inputs) / len(inputs), len(inputs)

    def backward(self, grad, cache, **attrs):
        return [grad / cache for _ in range(cache)]


@register
class Reshape(Op):
    kind = "reshape"

    def forward(self, inputs, ctx, shape=(-1,)):
        (x,) = inputs
        try:
            out = x.reshape(tuple(shape))
        except ValueError as err:
            raise ShapeError(str(err)) from err
        return out, x.shape

    def backward(self, grad, cache, **attrs):
        return [grad.reshape(cache)]


@register
class Transpose(Op):
    kind = "transpose"

    def forward(self, inputs, ctx, axes=None):
        return np.ascontiguousarray(np.transpose(inputs[0], axes)), axes

    def backward(self, grad, cache, **attrs):
        inverse = None if cache is None else np.argsort(cache)
        return [np.ascontiguousarray(np.transpose(grad, inverse))]


@register
class Concat(Op):
    kind = "concat"

    def forward(self, inputs, ctx, axis=1):
        try:
            out = np.concatenate(inputs, axis=axis)
        except ValueError as err:
            raise ShapeError(str(err)) from err
        return out, [x.shape[axis] for x in inputs]

    def backward(self, grad, cache, axis=1):
        cuts = np.cumsum(cache)[:-1]
        return np.split(grad, cuts, axis=axis)


@register
class UpsampleNearest(Op):
    kind = "upsample_nearest"

    def forward(self, inputs, ctx, factor=2):
        (x,) = inputs
        return x.repeat(factor, axis=2).repeat(factor, axis=3), x.shape

    def backward(self, grad, cache, factor=2):
        n, c, h, w = cache
        return [grad.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))]


def roi_cells(roi: Sequence[float], stride: float, height: int, width: int) -> Tuple[int, int, int, int]:
    """Map a box in image pixels onto the feature-cell rectangle it covers."""
    x0, y0, x1, y1 = roi
    c0 = int(np.clip(np.floor(x0 / stride), 0, width))
    c1 = int(np.clip(np.ceil(x1 / stride), 0, width))
    r0 = int(np.clip(np.floor(y0 / stride), 0, height))
    r1 = int(np.clip(np.ceil(y1 / stride), 0, height))
    if c1 <= c0 or r1 <= r0:
        raise RoiError(f"ROI {tuple(roi)} is empty after mapping with stride {stride}")
    return r0, r1, c0, c1


@register
class RoiMaxPool(Op):
    """Fixed-size max pooling of each ROI; rois rows are (batch, x0, y0, x1, y1)."""

    kind = "roi_maxpool"
    nonsmooth = True

    def forward(self, inputs, ctx, pool=4, stride=1):
        features, rois = inputs
        n, channels, height, width = features.shape
        rois = np.asarray(rois, dtype=np.float64).reshape(-1, 5)
        out = np.zeros((rois.shape[0], channels, pool, pool))
        index = np.zeros(out.shape, dtype=np.int64)
        for r, roi in enumerate(rois):
            batch = int(roi[0])
            if not 0 <= batch < n:
                raise RoiError(f"ROI batch index {batch} outside batch of {n}")
            r0, r1, c0, c1 = roi_cells(roi[1:], stride, height, width)
            rows, cols = r1 - r0, c1 - c0
            for i in range(pool):
                rs = r0 + (i * rows) // pool
                re = r0 + -((-(i + 1) * rows) // pool)
                for j in range(pool):
                    cs = c0 + (j * cols) // pool
                    ce = c0 + -((-(j + 1) * cols) // pool)
                    region = features[batch, :, rs:re, cs:ce].reshape(channels, -1)
                    best = region.argmax(axis=1)
                    out[r, :, i, j] = region[np.arange(channels), best]
                    index[r, :, i, j] = (rs + best // (ce - cs)) * width + cs + best % (ce - cs)
        return out, (features.shape, rois[:, 0].astype(np.int64), index)

    def backward(self, grad, cache, **attrs):
        shape, batches, index = cache
        n, channels, height, width = shape
        grad_x = np.zeros((n, channels, height * width))
        rows = np.arange(channels)[:, None]
        for r, batch in enumerate(batches):
            np.add.at(grad_x[batch], (rows, index[r].reshape(channels, -1)), grad[r].reshape(channels, -1))
        return [grad_x.reshape(shape), None]

    def signature(self, cache):
        return cache[2]


def affinity_logits(q: np.ndarray, k: np.ndarray, kind: str) -> np.ndarray:
    """Log-affinities between all query and key positions, ``[N, P, P]``."""
    dot = q @ np.swapaxes(k, 1, 2)
    if kind == "embedded_dot":
        return dot
    if kind == "gaussian":
        q_sq = (q * q).sum(axis=-1)
        k_sq = (k * k).sum(axis=-1)
        return 2.0 * dot - q_sq[:, :, None] - k_sq[:, None, :]
    raise ValueError(f"unknown affinity kind {kind!r}")


def _positions(x: np.ndarray) -> np.ndarray:
    n, c = x.shape[:2]
    return x.reshape(n, c, -1).transpose(0, 2, 1)


@register
class Attention(Op):
    """Normalised affinity-weighted aggregation of values over positions.

    ``q`` and ``k`` are ``[N, E, H, W]`` embeddings, ``v`` is ``[N, C, H, W]``.
    Output position x is ``sum_y f(q_x, k_y) v_y / sum_y f(q_x, k_y)``.
    """

    kind = "attention"

    def forward(self, inputs, ctx, kind="embedded_dot"):
        q, k, v = inputs
        if q.shape != k.shape or q.shape[0] != v.shape[0] or q.shape[2:] != v.shape[2:]:
            raise ShapeError(f"attention operands disagree: {q.shape}, {k.shape}, {v.shape}")
        qp, kp, vp = _positions(q), _positions(k), _positions(v)
        logits = affinity_logits(qp, kp, kind)
        logits = logits - logits.max(axis=-1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=-1, keepdims=True)
        out = weights @ vp
        shape = v.shape
        return out.transpose(0, 2, 1).reshape(shape), (qp, kp, vp, weights, q.shape, shape, kind)

    def backward(self, grad, cache, **attrs):
        qp, kp, vp, weights, q_shape, v_shape, kind = cache
        grad_out = _positions(grad)
        grad_v = np.swapaxes(weights, 1, 2) @ grad_out
        grad_weights = grad_out @ np.swapaxes(vp, 1, 2)
        grad_logits = weights * (grad_weights - (grad_weights * weights).sum(axis=-1, keepdims=True))
        if kind == "embedded_dot":
            grad_q = grad_logits @ kp
            grad_k = np.swapaxes(grad_logits, 1, 2) @ qp
        else:
            grad_q = 2.0 * grad_logits @ kp - 2.0 * qp * grad_logits.sum(axis=2)[..., None]
            grad_k = 2.0 * np.swapaxes(grad_logits, 1, 2) @ qp - 2.0 * kp * grad_logits.sum(axis=1)[..., None]

        def back(positions, shape):
            return positions.transpose(0, 2, 1).reshape(shape)

        return [back(grad_q, q_shape), back(grad_k, q_shape), back(grad_v, v_shape)]


# Eager, Tensor-level API.


def _eager(kind: str, inputs: Sequence, ctx: Optional[RunContext] = None, **attrs) -> Tensor:
    arrays = [as_array(value) for value in inputs]
    out, _ = OPS[kind].forward(arrays, ctx or RunContext(), **attrs)
    return Tensor(out)


def conv2d(
    input: Tensor,
    weight: Tensor,
    stride=(1, 1),
    pad=(0, 0),
    bias: Optional[Tensor] = None,
) -> Tensor:
    """Cross-correlate ``input [N,C,H,W]`` with ``weight [K,C,kh,kw]``."""
    inputs = [input, weight] + ([bias] if bias is not None else [])
    return _eager("conv2d", inputs, stride=stride, pad=pad)


def maxpool2d(input: Tensor, window=(2, 2), stride=(2, 2), pad=(0, 0)) -> Tensor:
    return _eager("maxpool2d", [input], window=window, stride=stride, pad=pad)


def batchnorm(
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
    running: Optional[Dict[str, np.ndarray]] = None,
) -> Tensor:
    """Batch normalisation.

    Parameters
    ----------
    running : dict, optional
        Holds ``bn.running_mean`` / ``bn.running_var``; initialised to zeros /
        ones when absent and updated in place in train mode.
    """
    ctx = RunContext(mode=mode, buffers=running if running is not None else {})
    return _eager("batchnorm", [input, gamma, beta], ctx, key="bn", eps=eps, momentum=momentum)


def dropout(input: Tensor, rate: float, mode: str = "train", seed: int = 0) -> Tensor:
    ctx = RunContext(mode=mode, seed=seed)
    ctx.node = "eager"
    return _eager("dropout", [input], ctx, rate=rate)


def dense(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return _eager("dense", [input, weight, bias])


def relu(input: Tensor) -> Tensor:
    return _eager("relu", [input])


def softmax_ce(logits: Tensor, labels: Sequence[int]) -> float:
    out, _ = OPS["softmax_ce"].forward([as_array(logits), np.asarray(labels)], RunContext())
    return float(out)


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))
