"""Reverse-mode autodiff over dense numpy buffers.

A Tensor wraps one contiguous float buffer (float32 or float64), an
optional gradient buffer of the same shape, and a closure that scatters an
upstream gradient to its parents. `backward()` walks the tape in reverse
topological order. Intra-op math is plain numpy, so results are
deterministic for a fixed BLAS thread count.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from ..errors import EmptyMaskRow, ShapeMismatch

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # ---- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    # ---- autodiff ------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---- arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape).astype(a.dtype, copy=False))
        b.accumulate_grad(_unbroadcast(g, b.shape).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.shape).astype(a.dtype, copy=False))
        b.accumulate_grad(_unbroadcast(g * a.data, b.shape).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    data = a.data**exponent

    def backward(g):
        a.accumulate_grad((g * exponent * a.data ** (exponent - 1.0)).astype(a.dtype, copy=False))

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(a.ndim - 1))))
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        a.accumulate_grad(_unbroadcast(ga, a.shape).astype(a.dtype, copy=False))
        b.accumulate_grad(_unbroadcast(gb, b.shape).astype(b.dtype, copy=False))

    return _make(data, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        a.accumulate_grad(g * (0.5 / data))

    return _make(data, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        a.accumulate_grad(g * np.sign(a.data))

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        a.accumulate_grad(g * (1.0 - data * data))

    return _make(data, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    # log(1 + e^x) computed stably
    data = np.logaddexp(0.0, a.data)

    def backward(g):
        a.accumulate_grad(g / (1.0 + np.exp(-a.data)))

    return _make(data, (a,), backward)


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        a.accumulate_grad((g * (cdf + x * pdf)).astype(a.dtype, copy=False))

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        a.accumulate_grad(g * (a.data > 0))

    return _make(data, (a,), backward)


# ---- reductions / shaping ------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % a.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    return _make(data, (a,), backward)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        a.accumulate_grad(np.transpose(g, inv))

    return _make(data, (a,), backward)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accumulate_grad(full)

    return _make(data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t.accumulate_grad(g[tuple(sl)])

    return _make(data, tuple(ts), backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(ts, parts):
            t.accumulate_grad(part)

    return _make(data, tuple(ts), backward)


# ---- fused numeric primitives ---------------------------------------------


def masked_softmax(logits, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax with boolean admissibility mask.

    Masked positions receive exactly zero weight (the logit is set to -inf
    before the softmax). Raises EmptyMaskRow when some row admits nothing.
    """
    a = as_tensor(logits)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        rows_ok = np.broadcast_to(mask, x.shape).any(axis=axis)
        if not rows_ok.all():
            raise EmptyMaskRow("softmax mask admits no key for at least one query row")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        a.accumulate_grad((s * (g - inner)).astype(a.dtype, copy=False))

    return _make(s, (a,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine."""
    a, gm, bt = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gm.shape != a.shape[-1:] or bt.shape != a.shape[-1:]:
        raise ShapeMismatch("layer_norm affine parameters must match the last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gm.data + bt.data

    def backward(g):
        gm.accumulate_grad(
            _unbroadcast(g * xhat, gm.shape).astype(gm.dtype, copy=False)
        )
        bt.accumulate_grad(_unbroadcast(g, bt.shape).astype(bt.dtype, copy=False))
        gy = g * gm.data
        mean_gy = gy.mean(axis=-1, keepdims=True)
        mean_gy_xhat = (gy * xhat).mean(axis=-1, keepdims=True)
        a.accumulate_grad(((gy - mean_gy - xhat * mean_gy_xhat) * inv).astype(a.dtype, copy=False))

    return _make(data, (a, gm, bt), backward)


# ---- convolution -----------------------------------------------------------


def _im2col_indices(C, H, W, kh, kw, stride, pad):
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    i0 = np.repeat(np.arange(kh), kw)
    i0 = np.tile(i0, C)
    i1 = stride * np.repeat(np.arange(Ho), Wo)
    j0 = np.tile(np.arange(kw), kh * C)
    j1 = stride * np.tile(np.arange(Wo), Ho)
    i = i0.reshape(-1, 1) + i1.reshape(1, -1)
    j = j0.reshape(-1, 1) + j1.reshape(1, -1)
    k = np.repeat(np.arange(C), kh * kw).reshape(-1, 1)
    return k, i, j, Ho, Wo


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D convolution on NCHW input via im2col.

    weight: (F, C, kh, kw); bias: (F,) or None.
    """
    a, w = as_tensor(x), as_tensor(weight)
    b = as_tensor(bias) if bias is not None else None
    N, C, H, W = a.shape
    F, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeMismatch(f"conv2d channels: input {C} vs weight {Cw}")
    k, i, j, Ho, Wo = _im2col_indices(C, H, W, kh, kw, stride, pad)
    xp = np.pad(a.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else a.data
    cols = xp[:, k, i, j]  # (N, C*kh*kw, Ho*Wo)
    wmat = w.data.reshape(F, -1)
    out = np.einsum("fc,ncl->nfl", wmat, cols, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None]
    data = out.reshape(N, F, Ho, Wo)

    def backward(g):
        gmat = g.reshape(N, F, -1)
        gw = np.einsum("nfl,ncl->fc", gmat, cols, optimize=True).reshape(w.shape)
        w.accumulate_grad(gw.astype(w.dtype, copy=False))
        if b is not None:
            b.accumulate_grad(gmat.sum(axis=(0, 2)).astype(b.dtype, copy=False))
        gcols = np.einsum("fc,nfl->ncl", wmat, gmat, optimize=True)
        gxp = np.zeros(
            (N, C, H + 2 * pad, W + 2 * pad), dtype=a.dtype
        )
        np.add.at(gxp, (slice(None), k, i, j), gcols)
        ga = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
        a.accumulate_grad(ga)

    parents = (a, w, b) if b is not None else (a, w)
    return _make(data, parents, backward)


def upsample_nearest2(x) -> Tensor:
    """Nearest-neighbor 2x upsample of NCHW input."""
    a = as_tensor(x)
    data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        N, C, H2, W2 = g.shape
        ga = g.reshape(N, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))
        a.accumulate_grad(ga.astype(a.dtype, copy=False))

    return _make(data, (a,), backward)


# ---- convenience -----------------------------------------------------------


def mse(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    diff = add(pred, Tensor(-t.astype(pred.dtype, copy=False)))
    return tensor_mean(mul(diff, diff))


def mae(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    diff = add(pred, Tensor(-t.astype(pred.dtype, copy=False)))
    return tensor_mean(absolute(diff))
