"""Neural layers built on the Tensor tape: linear, layer norm, MLP,
multi-head attention and convolutions, plus a minimal Module container."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    """Width/repetition settings for one residual attention block."""

    embed_dim: int
    heads: int
    cc: int = 2
    cs: int = 1

    def __post_init__(self):
        if self.cc < 1 or self.cs < 1:
            raise ValueError("cc and cs must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})"
            )


class Module:
    """Container that discovers parameters from its attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters(prefix)}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = ""):
        for name, p in self.named_parameters(prefix):
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            arr = state[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.grad = None

    def to_dtype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 zero_init: bool = False, bias: bool = True, dtype=np.float32):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.weight = parameter(w.astype(dtype))
        self.bias = parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = parameter(np.ones(dim, dtype=dtype))
        self.beta = parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """Two-layer GELU MLP; the output layer can start at zero for residual use."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_init_out: bool = False, dtype=np.float32):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype=dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, zero_init=zero_init_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Attention between a query token set and a key/value token set.

    Projections map the model width to `attn_dim` (which the head count must
    divide); the output projection maps back and starts at zero so a fresh
    residual block is the identity.
    """

    def __init__(self, model_dim: int, attn_dim: int, heads: int, rng: np.random.Generator,
                 zero_init_out: bool = True, dtype=np.float32):
        if attn_dim % heads != 0:
            raise ShapeMismatch(f"heads ({heads}) must divide attention dim ({attn_dim})")
        self.heads = heads
        self.head_dim = attn_dim // heads
        self.wq = Linear(model_dim, attn_dim, rng, dtype=dtype)
        self.wk = Linear(model_dim, attn_dim, rng, dtype=dtype)
        self.wv = Linear(model_dim, attn_dim, rng, dtype=dtype)
        self.wo = Linear(attn_dim, model_dim, rng, zero_init=zero_init_out, dtype=dtype)

    def __call__(self, query: Tensor, keyvalue: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if query.shape[-1] != keyvalue.shape[-1]:
            raise ShapeMismatch(f"query width {query.shape[-1]} vs key width {keyvalue.shape[-1]}")
        tq, tk = query.shape[-2], keyvalue.shape[-2]
        q = self._split(self.wq(query), tq)
        k = self._split(self.wk(keyvalue), tk)
        v = self._split(self.wv(keyvalue), tk)
        scores = T.mul(T.matmul(q, T.transpose(k, self._swap(k.ndim))), 1.0 / math.sqrt(self.head_dim))
        weights = T.masked_softmax(scores, mask)
        ctx = T.matmul(weights, v)
        return self.wo(self._merge(ctx, tq))

    @staticmethod
    def _swap(ndim):
        axes = list(range(ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return tuple(axes)

    def _split(self, x: Tensor, t: int) -> Tensor:
        # (..., T, A) -> (..., H, T, A/H)
        lead = x.shape[:-2]
        x = T.reshape(x, lead + (t, self.heads, self.head_dim))
        axes = tuple(range(len(lead))) + (x.ndim - 2, x.ndim - 3, x.ndim - 1)
        return T.transpose(x, axes)

    def _merge(self, x: Tensor, t: int) -> Tensor:
        lead = x.shape[:-3]
        axes = tuple(range(len(lead))) + (x.ndim - 2, x.ndim - 3, x.ndim - 1)
        x = T.transpose(x, axes)
        return T.reshape(x, lead + (t, self.heads * self.head_dim))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: int | None = None, zero_init: bool = False,
                 bias_init: np.ndarray | float = 0.0, dtype=np.float32):
        fan_in = c_in * kernel * kernel
        if zero_init:
            w = np.zeros((c_out, c_in, kernel, kernel))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(c_out, c_in, kernel, kernel))
        self.weight = parameter(w.astype(dtype))
        b = np.full(c_out, bias_init, dtype=dtype) if np.isscalar(bias_init) else np.asarray(bias_init, dtype=dtype)
        self.bias = parameter(b)
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)
