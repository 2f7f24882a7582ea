"""Trainable depth and CLS heads over staged feature grids."""

from __future__ import annotations

import numpy as np

from ..nn import layers as L
from ..nn import tensor as T
from ..nn.tensor import Tensor

DEPTH_EPS = 1e-2  # caps predicted depth at 1/eps = 100 m


class DepthHead(L.Module):
    """Convolutional fusion of all stages into per-cell inverse depth.

    depth = 1 / (softplus(x) + eps), strictly positive and finite.
    """

    def __init__(self, d_in_per_stage: int, n_stages: int, rng, width: int = 64,
                 dtype=np.float32):
        c_in = d_in_per_stage * n_stages
        self.conv1 = L.Conv2d(c_in, width, 3, rng, dtype=dtype)
        self.conv2 = L.Conv2d(width, width, 3, rng, dtype=dtype)
        self.conv3 = L.Conv2d(width, 1, 1, rng, dtype=dtype)

    def __call__(self, stages: list[Tensor]) -> Tensor:
        """stages: n_stages tensors (V, C, h, w) -> depth (V, h, w)."""
        x = T.concat(stages, axis=1)
        x = T.gelu(self.conv1(x))
        x = T.gelu(self.conv2(x))
        x = self.conv3(x)
        inv = T.add(T.softplus(x), DEPTH_EPS)
        depth = T.power(inv, -1.0)
        v, _, h, w = depth.shape
        return T.reshape(depth, (v, h, w))


class ClsHead(L.Module):
    """Conv + MLP pooling of the final stage grid into a d_E vector."""

    def __init__(self, d_in: int, d_e: int, rng, dtype=np.float32):
        self.conv = L.Conv2d(d_in, d_e, 3, rng, dtype=dtype)
        self.fc = L.Linear(d_e, d_e, rng, dtype=dtype)

    def __call__(self, grid: Tensor) -> Tensor:
        """(V, C, h, w) -> (V, d_E)."""
        x = T.gelu(self.conv(grid))
        pooled = T.tensor_mean(x, axis=(2, 3))
        return self.fc(pooled)
