"""Differentiable operations over :class:`~videoreid.autograd.tensor.Tensor`.

Every op computes its forward value eagerly and, when gradient recording
is enabled and an input requires gradients, attaches a backward closure.
Convolution uses cross-correlation semantics (no kernel flip). Max-pool
ties route gradient to the first maximal element in row-major window
scan order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, grad_enabled


def _result(data, tag, parents, backward_builder) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if requires and grad_enabled():
        out = Tensor(data, requires_grad=True, tag=tag, parents=parents)
        out._backward = backward_builder(out)
        return out
    return Tensor(data, tag=tag)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic (broadcasting)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.data.shape))

        return backward_fn

    return _result(a.data + b.data, "add", (a, b), build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(-g, b.data.shape))

        return backward_fn

    return _result(a.data - b.data, "sub", (a, b), build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

        return backward_fn

    return _result(a.data * b.data, "mul", (a, b), build)


def neg(a: Tensor) -> Tensor:
    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(-g)

        return backward_fn

    return _result(-a.data, "neg", (a,), build)


# ---------------------------------------------------------------------------
# Shape and reduction
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(g.reshape(a.data.shape))

        return backward_fn

    return _result(a.data.reshape(shape), "reshape", (a,), build)


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements, returned as a 0-d scalar tensor."""

    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(np.broadcast_to(g, a.data.shape))

        return backward_fn

    return _result(np.sum(a.data), "sum", (a,), build)


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root. Callers must keep inputs away from zero,
    where the derivative is unbounded."""
    y = np.sqrt(a.data)

    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(g / (2.0 * out.data))

        return backward_fn

    return _result(y, "sqrt", (a,), build)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * (1.0 - out.data * out.data))

        return backward_fn

    return _result(y, "tanh", (a,), build)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * out.data * (1.0 - out.data))

        return backward_fn

    return _result(y, "sigmoid", (a,), build)


def relu(a: Tensor) -> Tensor:
    def build(out):
        def backward_fn(g):
            if a.requires_grad:
                a.accumulate_grad(g * (a.data > 0))

        return backward_fn

    return _result(np.maximum(a.data, 0.0), "relu", (a,), build)


def activate(a: Tensor, kind: str) -> Tensor:
    """Dispatch on activation name: 'tanh', 'sigmoid', or 'none'."""
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "none":
        return a
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# Affine map
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = weight @ x + bias for a vector x (n,), weight (m, n), bias (m,)."""
    if x.data.ndim != 1 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ValueError(
            f"linear expects vector/matrix/vector, got ranks "
            f"{x.data.ndim}/{weight.data.ndim}/{bias.data.ndim}"
        )
    m, n = weight.data.shape
    if x.data.shape[0] != n:
        raise ValueError(f"linear: input length {x.data.shape[0]} != weight columns {n}")
    if bias.data.shape[0] != m:
        raise ValueError(f"linear: bias length {bias.data.shape[0]} != weight rows {m}")

    y = weight.data @ x.data + bias.data

    def build(out):
        def backward_fn(g):
            if x.requires_grad:
                x.accumulate_grad(weight.data.T @ g)
            if weight.requires_grad:
                weight.accumulate_grad(np.outer(g, x.data))
            if bias.requires_grad:
                bias.accumulate_grad(g)

        return backward_fn

    return _result(y, "linear", (x, weight, bias), build)


# ---------------------------------------------------------------------------
# Convolution / pooling
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Patch matrix of a padded (C, H, W) input: (C*kh*kw, H_out*W_out)."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    c, h_out, w_out = win.shape[:3]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, h_out * w_out)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation of a (C_in, H, W) input with (C_out, C_in, kh, kw) filters.

    Output spatial extents follow H' = (H + 2*pad_h - kh) // stride_h + 1.
    Gradients are defined w.r.t. input, weight, and bias.
    """
    if x.data.ndim != 3:
        raise ValueError(f"conv2d input must be (C, H, W), got rank {x.data.ndim}")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be (C_out, C_in, kh, kw), got rank {weight.data.ndim}")
    c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d: input has {c_in} channels but weight expects {c_in_w}")
    if bias.data.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape} != ({c_out},)")
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1 or kh < 1 or kw < 1:
        raise ValueError("conv2d: kernel and stride extents must be positive")
    if ph < 0 or pw < 0:
        raise ValueError("conv2d: padding must be non-negative")
    h_out = (h + 2 * ph - kh) // sh + 1
    w_out = (w + 2 * pw - kw) // sw + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} too large for padded input {h + 2 * ph}x{w + 2 * pw}")

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = _im2col(xp, kh, kw, sh, sw)
    y = (weight.data.reshape(c_out, -1) @ cols).reshape(c_out, h_out, w_out)
    y += bias.data[:, None, None]

    def build(out):
        def backward_fn(g):
            if bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(1, 2)))
            g_mat = g.reshape(c_out, -1)
            if weight.requires_grad:
                # Recompute the patch matrix; saving it across the graph
                # would triple activation memory.
                patch = _im2col(xp, kh, kw, sh, sw)
                weight.accumulate_grad((g_mat @ patch.T).reshape(weight.data.shape))
            if x.requires_grad:
                if sh == 1 and sw == 1:
                    # Input gradient as a full correlation with the
                    # flipped, channel-swapped kernel: one GEMM.
                    gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                    w_rot = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                    gcols = _im2col(gp, kh, kw, 1, 1)
                    gx_pad = (w_rot.reshape(c_in, -1) @ gcols).reshape(c_in, h + 2 * ph, w + 2 * pw)
                else:
                    gx_pad = np.zeros((c_in, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
                    for i in range(kh):
                        for j in range(kw):
                            gx_pad[:, i : i + sh * h_out : sh, j : j + sw * w_out : sw] += np.tensordot(
                                weight.data[:, :, i, j], g, axes=([0], [0])
                            )
                x.accumulate_grad(gx_pad[:, ph : ph + h, pw : pw + w])

        return backward_fn

    return _result(y, "conv2d", (x, weight, bias), build)


def maxpool2d(x: Tensor, window=(2, 2), stride=(2, 2)) -> Tensor:
    """Max pooling over (C, H, W); incomplete trailing windows are dropped."""
    if x.data.ndim != 3:
        raise ValueError(f"maxpool2d input must be (C, H, W), got rank {x.data.ndim}")
    c, h, w = x.data.shape
    wh, ww = window
    sh, sw = stride
    if wh > h or ww > w:
        raise ValueError(f"maxpool2d: window {wh}x{ww} larger than input {h}x{w}")
    if wh < 1 or ww < 1 or sh < 1 or sw < 1:
        raise ValueError("maxpool2d: window and stride extents must be positive")
    h_out = (h - wh) // sh + 1
    w_out = (w - ww) // sw + 1

    win = sliding_window_view(x.data, (wh, ww), axis=(1, 2))[:, ::sh, ::sw]
    flat = win.reshape(c, h_out, w_out, wh * ww)
    # argmax takes the first occurrence, which is row-major within the window.
    idx = flat.argmax(axis=3)
    y = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]

    def build(out):
        def backward_fn(g):
            if x.requires_grad:
                ci, oi, oj = np.indices((c, h_out, w_out), sparse=True)
                ki, kj = np.divmod(idx, ww)
                rows = oi * sh + ki
                cols = oj * sw + kj
                gx = np.zeros_like(x.data)
                if sh >= wh and sw >= ww:
                    # Non-overlapping windows: each input cell receives at
                    # most one gradient, so a plain scatter suffices.
                    flat = (np.broadcast_to(ci, idx.shape) * h + rows) * w + cols
                    gx.reshape(-1)[flat.reshape(-1)] = g.reshape(-1)
                else:
                    np.add.at(gx, (np.broadcast_to(ci, idx.shape), rows, cols), g)
                x.accumulate_grad(gx)

        return backward_fn

    return _result(np.ascontiguousarray(y), "maxpool2d", (x,), build)


# ---------------------------------------------------------------------------
# Classification loss
# ---------------------------------------------------------------------------

def softmax_xent(logits: Tensor, label: int) -> Tensor:
    """Negative log softmax probability of `label`; gradient is softmax minus one-hot."""
    if logits.data.ndim != 1:
        raise ValueError(f"softmax_xent expects a logit vector, got rank {logits.data.ndim}")
    n = logits.data.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    z = logits.data - logits.data.max()
    lse = np.log(np.sum(np.exp(z)))
    loss = lse - z[label]
    probs = np.exp(z - lse)

    def build(out):
        def backward_fn(g):
            if logits.requires_grad:
                gl = probs * g
                gl[label] -= g
                logits.accumulate_grad(gl)

        return backward_fn

    return _result(np.asarray(loss, dtype=logits.data.dtype), "softmax_xent", (logits,), build)
