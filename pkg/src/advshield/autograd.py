"""Minimal reverse-mode autodiff over NCHW float arrays.

Covers exactly the ops the conv nets in this package need: convolution
(stride 1 and 2), transposed convolution, dense, GELU, sigmoid, elementwise
add, flatten, softmax cross-entropy and MSE.  Tensors are immutable by
convention once created; every op is a pure function returning a fresh
Tensor wired into a backward tape of closures.

Pipeline data is float32; loss reductions accumulate in float64 so scalar
contracts (e.g. uniform logits -> ln(k)) hold to tight tolerance.  The
finite-difference oracle runs entirely in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import kernels

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    """A value node in the backward tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def backward(self):
        """Accumulate gradients of this (scalar) node into the tape leaves."""
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar loss node")
        order = _toposort(self)
        self.grad = np.ones_like(self.data, dtype=np.float64)
        for node in order:
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return list(reversed(order))


def _node(data, parents, backward_fn):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# pointwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _node(a.data + b.data, (a, b), lambda gy: (gy, gy))


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: y = x * Phi(x) with Phi the standard normal CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * xd.dtype.type(_INV_SQRT2)))
    y = xd * cdf

    def backward(gy):
        pdf = np.exp(xd * xd * xd.dtype.type(-0.5)) * xd.dtype.type(_INV_SQRT_2PI)
        return ((cdf + xd * pdf) * gy,)

    return _node(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # two-sided form avoids exp overflow on large negatives
    pos = xd >= 0
    e = np.exp(np.where(pos, -xd, xd))
    y = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)

    def backward(gy):
        return (y * (1.0 - y) * gy,)

    return _node(y, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    shape = x.data.shape
    flat = x.data.reshape(shape[0], -1)
    return _node(flat, (x,), lambda gy: (gy.reshape(shape),))


# ---------------------------------------------------------------------------
# linear layers


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"dense expects [n,{w.data.shape[0]}] input, got {x.data.shape}")
    y = x.data @ w.data + b.data

    def backward(gy):
        gy = gy.astype(x.data.dtype, copy=False)
        gx = gy @ w.data.T if x.requires_grad else None
        gw = x.data.T @ gy if w.requires_grad else None
        gb = gy.sum(axis=0) if b.requires_grad else None
        return (gx, gw, gb)

    return _node(y, (x, w, b), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """2D cross-correlation over NCHW input; weight layout [cout, cin, k, k]."""
    n, c, h, wd = x.data.shape
    f, cw, k, _ = w.data.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight expects {cw}")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = kernels.im2col(xp, k, stride, oh, ow)
    w_mat = w.data.reshape(f, c * k * k)
    y = cols @ w_mat.T + b.data
    y = np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))
    # cols is only needed again for the weight gradient
    saved_cols = cols if w.requires_grad else None

    def backward(gy):
        gy = gy.astype(x.data.dtype, copy=False)
        g_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(-1, f)
        gx = None
        if x.requires_grad:
            gxp = kernels.col2im_add(g_mat @ w_mat, n, c, h + 2 * pad, wd + 2 * pad,
                                     k, stride, oh, ow)
            gx = np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd])
        gw = (g_mat.T @ saved_cols).reshape(f, c, k, k) if w.requires_grad else None
        gb = gy.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return (gx, gw, gb)

    return _node(y, (x, w, b), backward)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor, stride: int = 2, pad: int = 1,
                     out_pad: int = 1) -> Tensor:
    """Transposed 2D convolution; weight layout [cin, cout, k, k].

    Output spatial size is (in-1)*stride - 2*pad + k + out_pad, the exact
    adjoint of conv2d's index map, so stride-2 downsampling layers mirror
    into stride-2 upsampling ones.
    """
    n, c, h, wd = x.data.shape
    cw, f, k, _ = w.data.shape
    if cw != c:
        raise ValueError(f"conv2d_transpose channel mismatch: input {c}, weight expects {cw}")
    oh = (h - 1) * stride - 2 * pad + k + out_pad
    ow = (wd - 1) * stride - 2 * pad + k + out_pad
    x_mat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c)
    w_mat = w.data.reshape(c, f * k * k)
    yp = kernels.col2im_add(x_mat @ w_mat, n, f, oh + 2 * pad, ow + 2 * pad,
                            k, stride, h, wd)
    y = np.ascontiguousarray(yp[:, :, pad:pad + oh, pad:pad + ow]) + b.data[:, None, None]
    saved_x_mat = x_mat if w.requires_grad else None

    def backward(gy):
        gy = gy.astype(x.data.dtype, copy=False)
        gyp = np.pad(gy, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cols_gy = kernels.im2col(gyp, k, stride, h, wd)
        gx = None
        if x.requires_grad:
            gx = (cols_gy @ w_mat.T).reshape(n, h, wd, c)
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        gw = (saved_x_mat.T @ cols_gy).reshape(c, f, k, k) if w.requires_grad else None
        gb = gy.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return (gx, gw, gb)

    return _node(y, (x, w, b), backward)


# ---------------------------------------------------------------------------
# losses


def per_image_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row -log softmax(logits)[label], computed in float64."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be rank-2 (batch x classes), got shape {logits.shape}")
    k = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be a vector matching the batch dimension")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits.astype(np.float64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), labels]


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch against integer class labels."""
    labels = np.asarray(labels)
    per = per_image_cross_entropy(logits.data, labels)
    n, k = logits.data.shape
    loss = np.float64(per.mean())

    def backward(gy):
        z = logits.data.astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return ((p * (float(gy) / n)).astype(logits.data.dtype),)

    return _node(loss, (logits,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    loss = np.float64(np.mean(diff.astype(np.float64) ** 2))
    scale = 2.0 / diff.size

    def backward(gy):
        g = (diff * (a.data.dtype.type(scale * float(gy)))).astype(a.data.dtype, copy=False)
        return (g, -g)

    return _node(loss, (a, b), backward)


# ---------------------------------------------------------------------------
# non-differentiable tensor utilities (used by the attacks outside the tape)


def sign(x):
    """Elementwise sign with sign(0) = 0. Accepts Tensor or ndarray."""
    if isinstance(x, Tensor):
        return Tensor(np.sign(x.data))
    return np.sign(x)


def clamp(x, lo, hi):
    """Elementwise clip into [lo, hi]; errors if lo > hi."""
    if lo > hi:
        raise ValueError(f"clamp bounds inverted: lo={lo} > hi={hi}")
    if isinstance(x, Tensor):
        return Tensor(np.clip(x.data, lo, hi))
    return np.clip(x, lo, hi)


# ---------------------------------------------------------------------------
# gradient extraction and the finite-difference oracle


@dataclass
class LossGradient:
    """Loss value with its gradient w.r.t. the input pixels (and optionally params)."""

    loss: float
    grad_input: np.ndarray
    grad_params: np.ndarray | None = None


def loss_and_input_grad(loss_fn, params, x, y, need_param_grads=False) -> LossGradient:
    """Evaluate loss_fn(params, x, y) and differentiate w.r.t. x (and params).

    loss_fn receives parameter Tensors, an input Tensor and the raw target,
    and must return a scalar loss Tensor.
    """
    param_ts = [Tensor(p, requires_grad=need_param_grads) for p in params]
    x_t = Tensor(x, requires_grad=True)
    loss_t = loss_fn(param_ts, x_t, y)
    loss_t.backward()
    grad_x = x_t.grad
    if grad_x is None:
        grad_x = np.zeros_like(x_t.data)
    if grad_x.shape != x_t.data.shape:
        raise AssertionError("input gradient shape drifted from the input shape")
    grad_params = None
    if need_param_grads:
        flats = [(p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
                 for p in param_ts]
        grad_params = np.concatenate(flats) if flats else np.zeros(0, dtype=x_t.data.dtype)
    return LossGradient(loss=float(loss_t.data), grad_input=grad_x, grad_params=grad_params)


def finite_difference_grad(loss_fn, params, x, y, h=1e-4, coords=None) -> np.ndarray:
    """Central-difference input gradient, evaluated in float64.

    coords: optional iterable of flat indices into x; only those entries are
    estimated (the rest stay zero).  Independent of the backward tape: only
    the forward evaluation is reused.
    """
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    params64 = [np.asarray(p, dtype=np.float64) for p in params]
    x64 = np.asarray(x, dtype=np.float64)

    def value_at(xv):
        pts = [Tensor(p) for p in params64]
        return float(loss_fn(pts, Tensor(xv), y).data)

    grad = np.zeros_like(x64)
    flat = grad.ravel()
    idx = range(x64.size) if coords is None else coords
    for i in idx:
        xv = x64.copy().ravel()
        xv[i] += h
        up = value_at(xv.reshape(x64.shape))
        xv[i] -= 2 * h
        dn = value_at(xv.reshape(x64.shape))
        flat[i] = (up - dn) / (2 * h)
    return grad
