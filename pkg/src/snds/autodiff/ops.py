"""Differentiable primitives.

Broadcasting is limited to a scalar (shape ``()``) operand; everything else
must match exactly.  Images are laid out ``(batch, channels, height, width)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from snds.autodiff.tensor import Tensor, record
from snds.errors import ShapeError


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(op, f"shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    return record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        value = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", f"cannot view {x.shape} as {shape}") from exc
    return record("reshape", value, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def total(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar."""
    return record("sum", x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sum_squares(x: Tensor) -> Tensor:
    return record("sum_squares", np.sum(x.data * x.data), (x,), lambda g: (2.0 * g * x.data,))


def stack(scalars: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a vector."""
    for s in scalars:
        if s.shape != ():
            raise ShapeError("stack", f"expected scalars, got shape {s.shape}")
    value = np.array([s.data for s in scalars], dtype=np.float64)
    return record("stack", value, tuple(scalars), lambda g: tuple(g[i] for i in range(len(scalars))))


def weighted_sum(weights: Tensor | Sequence[float], tensors: Sequence[Tensor]) -> Tensor:
    """``sum_k weights[k] * tensors[k]``; ``weights`` may itself be differentiable."""
    if not tensors:
        raise ShapeError("weighted_sum", "no tensors given")
    w = weights if isinstance(weights, Tensor) else Tensor(np.asarray(weights, dtype=np.float64))
    if w.shape != (len(tensors),):
        raise ShapeError("weighted_sum", f"weights shape {w.shape} for {len(tensors)} tensors")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError("weighted_sum", f"tensor shapes {shape} and {t.shape} differ")
    value = sum(w.data[k] * t.data for k, t in enumerate(tensors))

    def vjp(g):
        gw = np.array([np.sum(g * t.data) for t in tensors])
        return (gw, *(g * w.data[k] for k in range(len(tensors))))

    return record("weighted_sum", value, (w, *tensors), vjp)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense transform ``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError("affine", f"input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError("affine", f"bias {bias.shape} for {weight.shape[1]} outputs")
    value = x.data @ weight.data
    if bias is not None:
        value = value + bias.data

    def vjp(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("affine", value, parents, vjp)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 1) -> Tensor:
    """Cross-correlation with square kernels; ``weight`` is (out, in, k, k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", f"expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError("conv2d", f"input has {c} channels, weight expects {ci}")
    if kh != kw:
        raise ShapeError("conv2d", f"kernel must be square, got {kh}x{kw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError("conv2d", f"bias {bias.shape} for {o} output channels")
    k = kh
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ShapeError("conv2d", f"padded input {hp}x{wp} smaller than kernel {k}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: (n, c, ho, wo, k, k)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    value = np.einsum("nchwij,ocij->nohw", windows, weight.data, optimize=True)
    if bias is not None:
        value = value + bias.data[None, :, None, None]

    def vjp(g):
        gw = np.einsum("nohw,nchwij->ocij", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                    "nohw,oc->nchw", g, weight.data[:, :, i, j], optimize=True
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", value, parents, vjp)


def avg_pool2d(x: Tensor, kernel: int) -> Tensor:
    """Non-overlapping average pooling (stride = kernel, trailing rows dropped)."""
    if x.ndim != 4:
        raise ShapeError("avg_pool2d", f"expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if kernel < 1 or kernel > h or kernel > w:
        raise ShapeError("avg_pool2d", f"kernel {kernel} does not fit {h}x{w}")
    ho, wo = h // kernel, w // kernel
    crop = x.data[:, :, : ho * kernel, : wo * kernel]
    value = crop.reshape(n, c, ho, kernel, wo, kernel).mean(axis=(3, 5))

    def vjp(g):
        gx = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, kernel, axis=2), kernel, axis=3) / (kernel * kernel)
        gx[:, :, : ho * kernel, : wo * kernel] = spread
        return (gx,)

    return record("avg_pool2d", value, (x,), vjp)


def _channel_view(op: str, x: Tensor, vec: Tensor) -> tuple[int, ...]:
    if x.ndim not in (2, 4):
        raise ShapeError(op, f"expected 2-D or 4-D input, got {x.shape}")
    if vec.shape != (x.shape[1],):
        raise ShapeError(op, f"per-channel vector {vec.shape} for {x.shape[1]} channels")
    return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)


def scale_shift(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-channel ``gamma * x + beta`` (channel axis 1)."""
    view = _channel_view("scale_shift", x, gamma)
    _channel_view("scale_shift", x, beta)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    gv, bv = gamma.data.reshape(view), beta.data.reshape(view)
    return record(
        "scale_shift",
        x.data * gv + bv,
        (x, gamma, beta),
        lambda g: (g * gv, (g * x.data).sum(axis=axes), g.sum(axis=axes)),
    )


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: dict[str, np.ndarray],
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization; ``running`` holds ``mean``/``var`` updated in place when training."""
    view = _channel_view("batch_norm", x, gamma)
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // x.shape[1]
        running["mean"] = (1 - momentum) * running["mean"] + momentum * mean
        running["var"] = (1 - momentum) * running["var"] + momentum * var * count / max(count - 1, 1)
    else:
        mean, var = running["mean"], running["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(view)) * inv.reshape(view)
    gv = gamma.data.reshape(view)

    def vjp(g):
        gxhat = g * gv
        if training:
            m = x.data.size // x.shape[1]
            gx = (inv.reshape(view) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(view)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(view)
            )
        else:
            gx = gxhat * inv.reshape(view)
        return (gx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return record("batch_norm", xhat * gv + beta.data.reshape(view), (x, gamma, beta), vjp)


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 2:
        raise ShapeError("softmax", f"expected (batch, classes), got {logits.shape}")
    p = np.exp(log_softmax_values(logits.data))

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record("softmax", p, (logits,), vjp)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError("softmax_cross_entropy", f"expected (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError("softmax_cross_entropy", f"{labels.shape} labels for batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError("softmax_cross_entropy", f"labels must lie in [0, {c})")
    labels = labels.astype(np.int64)
    logp = log_softmax_values(logits.data)
    value = -logp[np.arange(n), labels].mean()

    def vjp(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return record("softmax_cross_entropy", value, (logits,), vjp)
