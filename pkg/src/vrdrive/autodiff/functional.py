"""Differentiable ops.

Every op takes and returns :class:`Tensor` and keeps the dtype of its
inputs, so the same code runs in float32 for training and float64 for
gradient checks.  Broadcasting is limited to adding a per-channel or
per-feature bias and to combining a tensor with a Python scalar.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ShapeError, Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _coerce(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_same_or_scalar(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape and a.data.ndim and b.data.ndim:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_same_or_scalar(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_same_or_scalar(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(-g, b.shape))

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_same_or_scalar(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_reduce_to(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward, "mul")


def abs_(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate(g * np.sign(x.data))

    return make_result(np.abs(x.data), (x,), backward, "abs")


def square(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate(2.0 * g * x.data)

    return make_result(x.data * x.data, (x,), backward, "square")


def log(x: Tensor, clamp: tuple[float, float] | None = None) -> Tensor:
    """Natural log; with ``clamp`` the input is clipped first (zero grad outside)."""
    xd = x.data
    if clamp is not None:
        lo, hi = clamp
        inside = (xd >= lo) & (xd <= hi)
        xd = np.clip(xd, lo, hi)
    else:
        inside = None

    def backward(g):
        gx = g / xd
        if inside is not None:
            gx = gx * inside
        x.accumulate(gx.astype(x.dtype, copy=False))

    return make_result(np.log(xd), (x,), backward, "log")


def sum_(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate(np.broadcast_to(g, x.shape))

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        x.accumulate(np.broadcast_to(g / n, x.shape))

    return make_result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x.accumulate(g.reshape(x.shape))

    return make_result(x.data.reshape(shape), (x,), backward, "reshape")


def concat(xs: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    for t in xs[1:]:
        other = list(t.shape)
        ref = list(xs[0].shape)
        other[axis] = ref[axis] = 0
        if other != ref:
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return make_result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward, "concat")


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """Row-wise gather: ``out[i] = x[i, index[i]]`` for a 2-D ``x``."""
    rows = np.arange(x.shape[0])
    index = np.asarray(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        x.accumulate(gx)

    return make_result(x.data[rows, index], (x,), backward, "pick")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x.accumulate(g * mask)

    return make_result(x.data * mask, (x,), backward, "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    neg = x.data < 0

    def backward(g):
        gx = g.copy()
        gx[neg] *= slope
        x.accumulate(gx)

    return make_result(np.maximum(x.data, slope * x.data) if slope <= 1 else np.where(neg, slope * x.data, x.data),
                       (x,), backward, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x.accumulate(g * (1.0 - y * y))

    return make_result(y, (x,), backward, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def backward(g):
        x.accumulate(g * y * (1.0 - y))

    return make_result(y, (x,), backward, "sigmoid")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax expects (batch, classes), got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        x.accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return make_result(y, (x,), backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax expects (batch, classes), got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        x.accumulate(g - p * g.sum(axis=1, keepdims=True))

    return make_result(y, (x,), backward, "log_softmax")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout.  ``rng=None`` or ``rate == 0`` is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        x.accumulate(g * keep)

    return make_result(x.data * keep, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# affine layers
# ---------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``x`` (batch, in), ``w`` (in, out), ``b`` (out,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"dense: bias {b.shape} does not match weights {w.shape}")
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return make_result(out, parents, backward, "dense")


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Patches of an NCHW array as rows ordered (kh, kw, channel)."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    sn, sh, sw, sc = xp.strides
    view = as_strided(xp, shape=(n, oh, ow, kh, kw, c),
                      strides=(sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    return view.reshape(n * oh * ow, kh * kw * c), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add (kh, kw, channel) rows back to NCHW."""
    n, c, h, w = x_shape
    cols = cols.reshape(n, oh, ow, kh, kw, c)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += cols[:, :, :, i, j, :]
    return xp[:, pad:pad + h, pad:pad + w, :].transpose(0, 3, 1, 2)


def _kernel_rows(w: np.ndarray) -> np.ndarray:
    return w.reshape(w.shape[0], -1)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input.

    ``w`` is stored channel-last as (out_ch, kh, kw, in_ch) so it reshapes
    to the patch matrix without a copy.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {w.shape}")
    oc, kh, kw, ic = w.shape
    n = x.shape[0]
    if conv_out_size(x.shape[2], kh, stride, padding) <= 0 or conv_out_size(x.shape[3], kw, stride, padding) <= 0:
        raise ShapeError(f"conv2d: input {x.shape} too small for weights {w.shape}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    wmat = _kernel_rows(w.data)
    out = cols @ wmat.T
    if b is not None:
        if b.shape != (oc,):
            raise ShapeError(f"conv2d: bias {b.shape} does not match weights {w.shape}")
        out += b.data
    out = out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        if w.requires_grad:
            w.accumulate((gmat.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            x.accumulate(_col2im(gmat @ wmat, x.shape, kh, kw, stride, padding, oh, ow))

    return make_result(np.ascontiguousarray(out), parents, backward, "conv2d")


def deconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``w`` has shape (in_ch, kh, kw, out_ch).

    Output spatial size is ``(h - 1) * stride - 2 * padding + k``.  With the
    same weight array this is the exact adjoint of :func:`conv2d`.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"deconv2d: input {x.shape} incompatible with weights {w.shape}")
    ic, kh, kw, oc = w.shape
    n, _, h, wd = x.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"deconv2d: input {x.shape} gives empty output with weights {w.shape}")
    wmat = _kernel_rows(w.data)  # (ic, kh*kw*oc)
    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, ic)
    out = _col2im(xmat @ wmat, (n, oc, oh, ow), kh, kw, stride, padding, h, wd)
    if b is not None:
        if b.shape != (oc,):
            raise ShapeError(f"deconv2d: bias {b.shape} does not match weights {w.shape}")
        out = out + b.data.reshape(1, oc, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, padding)
        if x.requires_grad:
            x.accumulate((gcols @ wmat.T).reshape(n, h, wd, ic).transpose(0, 3, 1, 2))
        if w.requires_grad:
            w.accumulate((xmat.T @ gcols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    return make_result(np.ascontiguousarray(out), parents, backward, "deconv2d")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"channel bias {b.shape} does not match input {x.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    return make_result(x.data + b.data.reshape(1, -1, 1, 1), (x, b), backward, "channel_bias")


def batchnorm2d(x: Tensor, scale: Tensor, shift: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, train: bool, momentum: float = BN_MOMENTUM,
                eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization over (batch, h, w).

    In train mode the batch statistics are used and the running buffers are
    updated in place (``running = momentum * running + (1 - momentum) * batch``).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if n == 0:
        raise ShapeError("batchnorm2d on an empty batch")
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"batchnorm2d: scale/shift {scale.shape} for {c} channels")
    if train:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        m = n * h * w
        unbiased = var * (m / max(m - 1, 1))
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * scale.data.reshape(1, c, 1, 1) + shift.data.reshape(1, c, 1, 1)

    def backward(g):
        if scale.requires_grad:
            scale.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if shift.requires_grad:
            shift.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = g * scale.data.reshape(1, c, 1, 1)
            if train:
                m = n * h * w
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = inv.reshape(1, c, 1, 1) / m * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv.reshape(1, c, 1, 1)
            x.accumulate(gx.astype(x.dtype, copy=False))

    return make_result(out.astype(x.dtype, copy=False), (x, scale, shift), backward, "batchnorm2d")


def l1_mean(a: Tensor, b) -> Tensor:
    return mean(abs_(sub(a, as_tensor(b, dtype=a.dtype))))
