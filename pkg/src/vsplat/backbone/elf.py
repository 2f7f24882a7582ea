"""ELF block: residual epipolar cross-attention, self-attention, MLP over
the concatenated token set of all views.

Cross-attention runs jointly over every view's tokens with a mask that
blocks same-view keys and applies the epipolar band between views;
self-attention is unmasked. Output projections start at zero, so a fresh
block is the exact identity.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from ..geom import EpipolarMask
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.tensor import Tensor


def build_cross_mask(view_ids: list[int], token_count: int,
                     pair_masks: dict[tuple[int, int], EpipolarMask]) -> np.ndarray:
    """(V*T, V*T) admissibility for joint cross-attention.

    Same-view keys are blocked; cross-view blocks come from the epipolar
    masks. Rows left empty (every key view blocked) fall back to all
    cross-view keys.
    """
    v = len(view_ids)
    t = token_count
    mask = np.zeros((v * t, v * t), dtype=bool)
    for qi, qid in enumerate(view_ids):
        for ki, kid in enumerate(view_ids):
            if qid == kid:
                continue
            block = pair_masks[(qid, kid)].grid
            if block.shape != (t, t):
                raise ShapeMismatch(f"epipolar mask {block.shape} vs token grid {t}")
            mask[qi * t : (qi + 1) * t, ki * t : (ki + 1) * t] = block
    empty = ~mask.any(axis=1)
    if empty.any():
        cross = ~np.kron(np.eye(v, dtype=bool), np.ones((t, t), dtype=bool))
        mask[empty] = cross[empty]
    return mask


class ResidualAttention(L.Module):
    def __init__(self, width: int, attn_dim: int, heads: int, rng, dtype=np.float32):
        self.norm = L.LayerNorm(width, dtype=dtype)
        self.attn = L.MultiHeadAttention(width, attn_dim, heads, rng, zero_init_out=True, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        h = self.norm(x)
        return T.add(x, self.attn(h, h, mask))


class ElfBlock(L.Module):
    """One refinement unit over a (V, T, C) token stack."""

    def __init__(self, width: int, attn_dim: int, heads: int, cc: int, cs: int,
                 rng, mlp_ratio: int = 4, dtype=np.float32):
        self.width = width
        self.cross = [ResidualAttention(width, attn_dim, heads, rng, dtype) for _ in range(cc)]
        self.selfa = [ResidualAttention(width, attn_dim, heads, rng, dtype) for _ in range(cs)]
        self.norm_mlp = L.LayerNorm(width, dtype=dtype)
        self.mlp = L.Mlp(width, mlp_ratio * width, width, rng, zero_init_out=True, dtype=dtype)

    def __call__(self, tokens: Tensor, cross_mask: np.ndarray | None) -> Tensor:
        v, t, c = tokens.shape
        if c != self.width:
            raise ShapeMismatch(f"token width {c} vs block width {self.width}")
        x = T.reshape(tokens, (v * t, c))
        for layer in self.cross:
            x = layer(x, cross_mask)
        for layer in self.selfa:
            x = layer(x, None)
        x = T.add(x, self.mlp(self.norm_mlp(x)))
        return T.reshape(x, (v, t, c))


def grids_to_tokens(grids: Tensor) -> Tensor:
    """(V, C, h, w) -> (V, h*w, C)."""
    v, c, h, w = grids.shape
    return T.transpose(T.reshape(grids, (v, c, h * w)), (0, 2, 1))


def tokens_to_grids(tokens: Tensor, h: int, w: int) -> Tensor:
    v, t, c = tokens.shape
    return T.reshape(T.transpose(tokens, (0, 2, 1)), (v, c, h, w))
