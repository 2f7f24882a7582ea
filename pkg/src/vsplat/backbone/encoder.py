"""Patch-embedding transformer encoder.

Produces n_stages intermediate token grids (one per transformer block) plus
a CLS vector per view; the area-downsampled RGB rides along as the last 3
channels of every stage.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadDimensions
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.tensor import Tensor


class TransformerBlock(L.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng, dtype=np.float32):
        self.norm1 = L.LayerNorm(dim, dtype=dtype)
        self.attn = L.MultiHeadAttention(dim, dim, heads, rng, zero_init_out=True, dtype=dtype)
        self.norm2 = L.LayerNorm(dim, dtype=dtype)
        self.mlp = L.Mlp(dim, mlp_ratio * dim, dim, rng, zero_init_out=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = T.add(x, self.attn(h, h, None))
        x = T.add(x, self.mlp(self.norm2(x)))
        return x


class PatchEncoder(L.Module):
    def __init__(self, d_e: int, patch: int, n_stages: int, heads: int,
                 grid: tuple[int, int], rng, mlp_ratio: int = 4, dtype=np.float32):
        self.d_e = d_e
        self.patch = patch
        self.n_stages = n_stages
        self.grid_hw = grid
        self.embed = L.Linear(3 * patch * patch, d_e, rng, dtype=dtype)
        self.cls_token = L.parameter(np.zeros(d_e, dtype=dtype))
        tokens = grid[0] * grid[1]
        self.pos = L.parameter(rng.normal(0.0, 0.02, size=(tokens, d_e)).astype(dtype))
        self.blocks = [TransformerBlock(d_e, heads, mlp_ratio, rng, dtype) for _ in range(n_stages)]
        self.dtype = dtype

    def patch_embed(self, images: np.ndarray) -> Tensor:
        """Patchify + linear embedding, before positional encoding.

        images: (V, 3, H, W) float in [0, 1] -> (V, T, d_E).
        """
        v, ch, h, w = images.shape
        p = self.patch
        if h % p or w % p:
            raise BadDimensions(f"image {h}x{w} not divisible by patch {p}")
        gh, gw = h // p, w // p
        x = images.reshape(v, ch, gh, p, gw, p)
        x = np.transpose(x, (0, 2, 4, 1, 3, 5)).reshape(v, gh * gw, ch * p * p)
        return self.embed(Tensor(x.astype(self.dtype)))

    def rgb_small(self, images: np.ndarray) -> np.ndarray:
        """Area-downsampled RGB at the token grid resolution: (V, 3, h, w)."""
        v, ch, h, w = images.shape
        p = self.patch
        return images.reshape(v, ch, h // p, p, w // p, p).mean(axis=(3, 5))

    def forward(self, images: np.ndarray):
        """Returns (stages: list of (V, d_E+3, h, w) tensors, cls: (V, d_E))."""
        v, _, h, w = images.shape
        gh, gw = h // self.patch, w // self.patch
        if (gh, gw) != self.grid_hw:
            raise BadDimensions(f"encoder built for grid {self.grid_hw}, got {(gh, gw)}")
        tok = self.patch_embed(images)
        tok = T.add(tok, self.pos)
        cls = T.add(Tensor(np.zeros((v, 1, self.d_e), dtype=self.dtype)),
                    T.reshape(self.cls_token, (1, 1, self.d_e)))
        x = T.concat([cls, tok], axis=1)
        rgb = Tensor(self.rgb_small(images).astype(self.dtype))
        stages = []
        for block in self.blocks:
            x = block(x)
            grid = T.transpose(T.reshape(x[:, 1:, :], (v, gh, gw, self.d_e)), (0, 3, 1, 2))
            stages.append(T.concat([grid, rgb], axis=1))
        return stages, x[:, 0, :]
