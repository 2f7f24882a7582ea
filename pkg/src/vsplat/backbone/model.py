"""Backbone assembly: encode references, splat virtual initializations,
refine through hierarchical ELF blocks, predict depth and CLS."""

from __future__ import annotations

import numpy as np

from ..errors import TooFewCandidates
from ..geom import Camera, EpipolarMask, epipolar_mask, view_overlap
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.layers import AttentionConfig
from ..nn.tensor import Tensor
from .elf import ElfBlock, build_cross_mask, grids_to_tokens, tokens_to_grids
from .encoder import PatchEncoder
from .features import DepthMap
from .heads import ClsHead, DepthHead
from .splat import init_virtual_views


class Backbone(L.Module):
    def __init__(self, d_e: int, patch: int, n_stages: int, attn: AttentionConfig,
                 grid: tuple[int, int], rng, mlp_ratio: int = 4, dtype=np.float32):
        self.d_e = d_e
        self.patch = patch
        self.n_stages = n_stages
        self.attn_cfg = attn
        self.grid = grid
        width = d_e + 3
        self.encoder = PatchEncoder(d_e, patch, n_stages, attn.heads, grid, rng,
                                    mlp_ratio=mlp_ratio, dtype=dtype)
        self.blocks = [
            ElfBlock(width, attn.embed_dim, attn.heads, attn.cc, attn.cs, rng,
                     mlp_ratio=mlp_ratio, dtype=dtype)
            for _ in range(n_stages)
        ]
        self.depth_head = DepthHead(width, n_stages, rng, dtype=dtype)
        self.cls_head = ClsHead(width, d_e, rng, dtype=dtype)

    # ---- single refinement stage ---------------------------------------
    def elf_block(self, stage_idx: int, prev_vrt: Tensor, init_vrt: Tensor,
                  ref: Tensor, masks: dict[tuple[int, int], EpipolarMask],
                  ref_ids: list[int], vrt_ids: list[int]):
        """Eq-style refinement: vrt input is prev + init, then joint
        masked cross-attention / self-attention / MLP over all views.

        Views are canonicalized by id internally, so outputs are bit-exactly
        equivariant under input permutation. Returns (ref_out, vrt_out).
        """
        vrt_in = T.add(prev_vrt, init_vrt)
        grids = T.concat([ref, vrt_in], axis=0)
        ids = list(ref_ids) + list(vrt_ids)
        order = np.argsort(np.asarray(ids, dtype=np.int64), kind="stable")
        inverse = np.argsort(order, kind="stable")
        tokens = grids_to_tokens(grids[order])
        v, t, c = tokens.shape
        cross = build_cross_mask([ids[i] for i in order], t, masks)
        out = self.blocks[stage_idx](tokens, cross)
        h, w = ref.shape[2], ref.shape[3]
        out_grids = tokens_to_grids(out, h, w)[inverse]
        n_ref = ref.shape[0]
        return out_grids[:n_ref], out_grids[n_ref:]

    # ---- full forward ----------------------------------------------------
    def run(self, ref_images: np.ndarray, ref_cams: list[Camera],
            vrt_cams: list[Camera], band_px: float):
        """Full backbone pass from reference images to refined virtual
        features, depths, and CLS vectors.

        Returns a dict of tensors:
          ref_stages, ref_cls, ref_depth, vrt_stages (per ELF stage),
          vrt_depth, vrt_cls, init_hits, masks.
        """
        n_ref = len(ref_cams)
        n_vrt = len(vrt_cams)
        h, w = self.grid
        ref_stages, ref_cls = self.encoder.forward(ref_images)
        ref_depth = self.depth_head(ref_stages)

        grid_ref_cams = [(pose, K.scaled(w, h)) for pose, K in ref_cams]
        grid_vrt_cams = [(pose, K.scaled(w, h)) for pose, K in vrt_cams]
        depth_maps = [
            DepthMap(ref_depth.data[i].astype(np.float64), np.ones((h, w), dtype=bool))
            for i in range(n_ref)
        ]
        per_view_stage_feats = [
            [ref_stages[s].data[i] for s in range(self.n_stages)] for i in range(n_ref)
        ]
        inits, hits = init_virtual_views(per_view_stage_feats, depth_maps,
                                         grid_ref_cams, grid_vrt_cams)
        init_tensors = [
            Tensor(np.stack([inits[v][s] for v in range(n_vrt)]))
            for s in range(self.n_stages)
        ]

        ref_ids = list(range(n_ref))
        vrt_ids = list(range(n_ref, n_ref + n_vrt))
        masks = pairwise_epipolar_masks(
            ref_cams + vrt_cams, ref_ids + vrt_ids, (h, w), band_px
        )

        width = self.d_e + 3
        prev = Tensor(np.zeros((n_vrt, width, h, w), dtype=ref_stages[0].dtype))
        ref_out_stages = []
        vrt_out_stages = []
        for s in range(self.n_stages):
            ref_out, vrt_out = self.elf_block(
                s, prev, init_tensors[s], ref_stages[s], masks, ref_ids, vrt_ids
            )
            ref_out_stages.append(ref_out)
            vrt_out_stages.append(vrt_out)
            prev = vrt_out

        vrt_depth = self.depth_head(vrt_out_stages)
        vrt_cls = self.cls_head(vrt_out_stages[-1])
        return {
            "ref_stages": ref_stages,
            "ref_cls": ref_cls,
            "ref_depth": ref_depth,
            "ref_out_stages": ref_out_stages,
            "vrt_stages": vrt_out_stages,
            "vrt_depth": vrt_depth,
            "vrt_cls": vrt_cls,
            "init_hits": hits,
            "masks": masks,
        }

    def infer_cls(self, final_stage: Tensor) -> Tensor:
        return self.cls_head(final_stage)


def pairwise_epipolar_masks(cams: list[Camera], ids: list[int],
                            token_grid: tuple[int, int], band_px: float):
    """EpipolarMask for every ordered pair of distinct views."""
    masks: dict[tuple[int, int], EpipolarMask] = {}
    for qi, qid in enumerate(ids):
        for ki, kid in enumerate(ids):
            if qid == kid:
                continue
            m = epipolar_mask(cams[qi], cams[ki], token_grid, band_px)
            m.query_view = qid
            m.key_view = kid
            masks[(qid, kid)] = m
    return masks


def backbone_loss(pred_vrt_stages, gt_vrt_stages, pred_ref_stages, gt_ref_stages,
                  lambda1: float, lambda2: float) -> Tensor:
    """Sum over stages of lambda1 * MSE(virtual) + lambda2 * MSE(reference)."""
    total = None
    for pv, gv, pr, gr in zip(pred_vrt_stages, gt_vrt_stages, pred_ref_stages, gt_ref_stages):
        term = T.add(T.mul(T.mse(pv, gv), lambda1), T.mul(T.mse(pr, gr), lambda2))
        total = term if total is None else T.add(total, term)
    return total


def sample_virtual_cameras(ref_cams: list[Camera], candidate_cams: list[Camera],
                           ref_depths: list[DepthMap], k: int,
                           rng: np.random.Generator, invert: bool = False):
    """Draw k distinct candidates with probability proportional to their
    mean overlap with the reference set (inverted when configured).

    Returns (cameras, indices, initial probabilities); deterministic for a
    fixed generator state.
    """
    n = len(candidate_cams)
    if k > n:
        raise TooFewCandidates(f"need {k} virtual views, only {n} candidates")
    scores = np.array(
        [
            np.mean(
                [
                    view_overlap(rc, cand, dm.depth, dm.valid)
                    for rc, dm in zip(ref_cams, ref_depths)
                ]
            )
            for cand in candidate_cams
        ]
    )
    weights = (1.0 - scores) if invert else scores.copy()
    weights = np.maximum(weights, 0.0)
    if weights.sum() <= 0:
        weights = np.ones(n)
    probs = weights / weights.sum()

    chosen: list[int] = []
    live = weights.copy()
    for _ in range(k):
        if live.sum() <= 0:
            live = np.where([i not in chosen for i in range(n)], 1.0, 0.0)
        p = live / live.sum()
        idx = int(rng.choice(n, p=p))
        chosen.append(idx)
        live[idx] = 0.0
    return [candidate_cams[i] for i in chosen], chosen, probs
