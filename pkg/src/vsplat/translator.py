"""Translator: lift aggregated per-view features (latent + RGB + depth) to
pixel-aligned 3D Gaussian primitives via a UNet with one ELF block at the
bottleneck.

Means are placed along each cell's camera ray at the probabilistic
expected depth, then moved by a learned offset; an optional toggle detaches
the depth inside the mean path (alternative gradient propagation), leaving
the forward pass identical.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .backbone.elf import ElfBlock, build_cross_mask, grids_to_tokens, tokens_to_grids
from .backbone.model import pairwise_epipolar_masks
from .errors import BadRange, EmptySet, ShapeMismatch
from .gaussians import GaussianSet
from .geom import Camera, pixel_centers
from .nn import layers as L
from .nn import tensor as T
from .nn.layers import AttentionConfig
from .nn.tensor import Tensor


def depth_candidates(near: float, far: float, count: int) -> np.ndarray:
    """Log-spaced depth hypotheses in [near, far]."""
    if not (near > 0 and far > near and count >= 2):
        raise BadRange(f"need 0 < near < far and count >= 2, got {near}, {far}, {count}")
    return np.exp(np.linspace(np.log(near), np.log(far), count))


def probabilistic_depth(logits: Tensor, near: float, far: float) -> Tensor:
    """Expected depth under a softmax over log-spaced candidates.

    logits: (..., B) -> depth (...). Always inside [near, far].
    """
    cand = depth_candidates(near, far, logits.shape[-1])
    probs = T.masked_softmax(logits, None)
    return T.matmul(probs, Tensor(cand.astype(logits.dtype)))


class Translator(L.Module):
    def __init__(self, d_e: int, attn: AttentionConfig, rng,
                 widths: tuple[int, int, int] = (64, 128, 256),
                 depth_bins: int = 32, sh_degree: int = 1,
                 near: float = 0.5, far: float = 100.0, n_per_pixel: int = 1,
                 dng: bool = False, mlp_ratio: int = 4, dtype=np.float32):
        w0, w1, w2 = widths
        c_in = d_e + 4
        self.near, self.far = near, far
        self.depth_bins = depth_bins
        self.sh_degree = sh_degree
        self.n_per_pixel = n_per_pixel
        self.dng = dng
        self.enc0 = L.Conv2d(c_in, w0, 3, rng, dtype=dtype)
        self.enc1 = L.Conv2d(w0, w1, 3, rng, stride=2, dtype=dtype)
        self.enc2 = L.Conv2d(w1, w2, 3, rng, stride=2, dtype=dtype)
        self.bottleneck = ElfBlock(w2, attn.embed_dim, attn.heads, attn.cc, attn.cs,
                                   rng, mlp_ratio=mlp_ratio, dtype=dtype)
        self.up1 = L.Conv2d(w2, w1, 3, rng, dtype=dtype)
        self.fuse1 = L.Conv2d(2 * w1, w1, 3, rng, dtype=dtype)
        self.up0 = L.Conv2d(w1, w0, 3, rng, dtype=dtype)
        self.fuse0 = L.Conv2d(2 * w0, w0, 3, rng, dtype=dtype)

        k = (sh_degree + 1) ** 2
        n = n_per_pixel
        # depth-logit bias gets a per-slot jitter when several gaussians
        # share a pixel, otherwise the slots never differentiate
        depth_bias = (
            0.0 if n == 1
            else rng.normal(0.0, 0.01, size=n * depth_bins).astype(dtype)
        )
        self.head_depth = L.Conv2d(w0, n * depth_bins, 1, rng, zero_init=True,
                                   bias_init=depth_bias, dtype=dtype)
        self.head_offset = L.Conv2d(w0, n * 3, 1, rng, zero_init=True, dtype=dtype)
        self.head_quat = L.Conv2d(w0, n * 4, 1, rng, zero_init=True,
                                  bias_init=np.tile([1.0, 0.0, 0.0, 0.0], n), dtype=dtype)
        self.head_scale = L.Conv2d(w0, n * 3, 1, rng, zero_init=True,
                                   bias_init=float(np.log(0.5)), dtype=dtype)
        self.head_opacity = L.Conv2d(w0, n * 1, 1, rng, zero_init=True, dtype=dtype)
        self.head_sh = L.Conv2d(w0, n * 3 * k, 1, rng, zero_init=True, dtype=dtype)

    def forward(self, inputs: Tensor, cams: list[Camera], band_px: float):
        """inputs: (V, d_E+4, h, w) with strictly positive depth channel.

        Returns dict of flat tensors over P = V*h*w primitives: means,
        quats, log_scales, opacity_logits, sh, expected_depth.
        """
        v, c, h, w = inputs.shape
        if len(cams) != v:
            raise ShapeMismatch(f"{v} feature grids but {len(cams)} cameras")
        x0 = T.gelu(self.enc0(inputs))
        x1 = T.gelu(self.enc1(x0))
        x2 = T.gelu(self.enc2(x1))

        hb, wb = x2.shape[2], x2.shape[3]
        ids = list(range(v))
        # band widens with the downsampling factor so the true correspondence
        # token stays admissible at the coarser bottleneck grid
        masks = pairwise_epipolar_masks(cams, ids, (hb, wb), band_px * max(h // hb, 1))
        tokens = grids_to_tokens(x2)
        cross = build_cross_mask(ids, hb * wb, masks)
        x2 = tokens_to_grids(self.bottleneck(tokens, cross), hb, wb)

        y1 = T.gelu(self.up1(T.upsample_nearest2(x2)))
        y1 = T.gelu(self.fuse1(T.concat([y1, x1], axis=1)))
        y0 = T.gelu(self.up0(T.upsample_nearest2(y1)))
        y0 = T.gelu(self.fuse0(T.concat([y0, x0], axis=1)))

        npix = v * h * w
        n = npix * self.n_per_pixel

        def flat(t: Tensor, ch: int) -> Tensor:
            # (V, N*ch, h, w) -> (V*h*w*N, ch), slot index varying fastest
            return T.reshape(T.transpose(t, (0, 2, 3, 1)), (n, ch))

        logits = flat(self.head_depth(y0), self.depth_bins)
        depth = probabilistic_depth(logits, self.near, self.far)  # (P,)
        offsets = flat(self.head_offset(y0), 3)
        quats = flat(self.head_quat(y0), 4)
        log_scales = flat(self.head_scale(y0), 3)
        opacity = T.reshape(flat(self.head_opacity(y0), 1), (n,))
        k = (self.sh_degree + 1) ** 2
        sh = T.reshape(flat(self.head_sh(y0), 3 * k), (n, 3, k))

        # pixel rays with camera-z parameterization: mean = origin + d * ray
        rays = np.empty((v, h * w, 3))
        origins = np.empty((v, 1, 3))
        for i, (pose, K) in enumerate(cams):
            kg = K.scaled(w, h)
            centers = pixel_centers(h, w, None).reshape(-1, 2)
            d_cam = np.column_stack(
                [(centers[:, 0] - kg.cx) / kg.fx, (centers[:, 1] - kg.cy) / kg.fy,
                 np.ones(h * w)]
            )
            rays[i] = d_cam @ pose.rotation.T
            origins[i, 0] = pose.translation
        rays_t = Tensor(rays.reshape(n, 3).astype(inputs.dtype))
        origins_t = Tensor(np.broadcast_to(origins, (v, h * w, 3)).reshape(n, 3).astype(inputs.dtype))

        depth_mean_path = depth.detach() if self.dng else depth
        means = T.add(T.add(T.mul(T.reshape(depth_mean_path, (n, 1)), rays_t), origins_t), offsets)

        return {
            "means": means,
            "quats": quats,
            "log_scales": log_scales,
            "opacity_logits": opacity,
            "sh": sh,
            "expected_depth": depth,
        }


def translate(translator: Translator, inputs: Tensor, cams: list[Camera],
              band_px: float) -> GaussianSet:
    """Inference wrapper returning a detached GaussianSet."""
    out = translator.forward(inputs, cams, band_px)
    return GaussianSet(
        means=out["means"].data.copy(),
        quaternions=out["quats"].data.copy(),
        log_scales=out["log_scales"].data.copy(),
        opacity_logits=out["opacity_logits"].data.copy(),
        sh_coeffs=out["sh"].data.copy(),
    )


def translator_loss(render_packed: Tensor, gt_rgb: np.ndarray, gt_depth: np.ndarray,
                    gt_valid: np.ndarray | None, lambda3: float, lambda4: float) -> Tensor:
    """lambda3 * MSE(rgb) + lambda4 * MAE(expected depth, over valid pixels).

    render_packed: the (5, H, W) stack from render_tensor.
    """
    if render_packed.shape[1:] != gt_rgb.shape[1:]:
        raise ShapeMismatch(f"render {render_packed.shape[1:]} vs target {gt_rgb.shape[1:]}")
    loss = T.mul(T.mse(render_packed[0:3], gt_rgb), lambda3)
    if lambda4 > 0.0:
        valid = np.ones(gt_depth.shape, dtype=bool) if gt_valid is None else gt_valid
        if valid.any():
            depth_pred = render_packed[3][valid]
            loss = T.add(loss, T.mul(T.mae(depth_pred, gt_depth[valid]), lambda4))
    return loss


def chamfer_loss(means: Tensor, points: np.ndarray) -> Tensor:
    """Differentiable symmetric mean-of-min squared distance to a point set.

    Nearest-neighbor indices are held fixed (the true subgradient); both
    directions propagate to the means.
    """
    if means.shape[0] == 0 or points.size == 0:
        raise EmptySet("chamfer_loss requires non-empty sets")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tree = cKDTree(pts)
    _, idx_a = tree.query(means.data.astype(np.float64))
    tree_m = cKDTree(means.data.astype(np.float64))
    _, idx_b = tree_m.query(pts)

    target_a = Tensor(pts[idx_a].astype(means.dtype))
    diff_a = T.add(means, T.mul(target_a, -1.0))
    term_a = T.tensor_mean(T.tensor_sum(T.mul(diff_a, diff_a), axis=1))

    sel = means[idx_b]
    diff_b = T.add(sel, Tensor(-pts.astype(means.dtype)))
    term_b = T.tensor_mean(T.tensor_sum(T.mul(diff_b, diff_b), axis=1))
    return T.add(term_a, term_b)
