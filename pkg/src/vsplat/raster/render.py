"""Differentiable tile-based rendering of a GaussianSet.

`render` produces RGB, alpha-weighted expected depth and accumulated
alpha. `render_forward`/`render_backward` expose the analytic gradient
path; `render_tensor` wires it into the autodiff tape. `render_bruteforce`
is an independent per-pixel reference used as the correctness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SingularCovariance
from ..gaussians import GaussianSet, realize_covariance
from ..geom import Intrinsics, Pose
from ..nn.tensor import Tensor, _make
from . import backend
from .projection import ProjectionContext, RasterSettings, project_gaussians, projection_backward


@dataclass
class RenderOutput:
    """rgb: (3, H, W) in [0, 1]; depth: (H, W) meters; alpha: (H, W)."""

    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray


@dataclass
class RenderContext:
    """Everything the backward pass needs."""

    proj: ProjectionContext
    sh_coeffs_kept: np.ndarray
    order: np.ndarray
    tile_starts: np.ndarray
    H: int
    W: int
    t_final: np.ndarray
    ncontrib: np.ndarray
    background: np.ndarray
    kernels: object
    expected_depth: np.ndarray


def _bin_gaussians(mean2d, radius, depth, H, W, tile):
    """Duplicate gaussian indices into the tiles their cull radius touches;
    lists come back depth-sorted with index tie-breaking."""
    ntx = (W + tile - 1) // tile
    nty = (H + tile - 1) // tile
    n_tiles = ntx * nty
    p = mean2d.shape[0]
    if p == 0:
        return (np.zeros(0, np.int32), np.zeros(n_tiles + 1, np.int64), ntx, nty)

    finite = np.isfinite(radius)
    cmin = np.where(finite, np.floor(mean2d[:, 0] - radius - 0.5), 0.0)
    cmax = np.where(finite, np.ceil(mean2d[:, 0] + radius - 0.5), W - 1.0)
    rmin = np.where(finite, np.floor(mean2d[:, 1] - radius - 0.5), 0.0)
    rmax = np.where(finite, np.ceil(mean2d[:, 1] + radius - 0.5), H - 1.0)
    keep = (radius > 0) & (cmax >= 0) & (cmin <= W - 1) & (rmax >= 0) & (rmin <= H - 1)
    gs = np.flatnonzero(keep)
    if gs.size == 0:
        return (np.zeros(0, np.int32), np.zeros(n_tiles + 1, np.int64), ntx, nty)

    tx0 = (np.clip(cmin[gs], 0, W - 1) // tile).astype(np.int64)
    tx1 = (np.clip(cmax[gs], 0, W - 1) // tile).astype(np.int64)
    ty0 = (np.clip(rmin[gs], 0, H - 1) // tile).astype(np.int64)
    ty1 = (np.clip(rmax[gs], 0, H - 1) // tile).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    cnt = nx * ny
    total = int(cnt.sum())
    rep = np.repeat(np.arange(gs.size), cnt)
    offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    nxr = nx[rep]
    dxs = offs % nxr
    dys = offs // nxr
    tid = (ty0[rep] + dys) * ntx + (tx0[rep] + dxs)
    gidx = gs[rep].astype(np.int32)

    order_key = np.lexsort((gidx, depth[gidx], tid))
    tid_sorted = tid[order_key]
    order = gidx[order_key]
    counts = np.bincount(tid_sorted, minlength=n_tiles)
    tile_starts = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_starts[1:])
    return order, tile_starts, ntx, nty


def render_forward(gs: GaussianSet, camera: tuple[Pose, Intrinsics],
                   settings: RasterSettings | None = None, kernels=None):
    """Project, bin, composite. Returns (RenderOutput, RenderContext)."""
    settings = settings or RasterSettings()
    kernels = kernels or backend.kernels
    pose, K = camera
    H, W = K.height, K.width
    dt = gs.means.dtype
    bg = np.asarray(settings.background, dtype=dt)

    proj = project_gaussians(gs, camera, settings)
    order, tile_starts, _, _ = _bin_gaussians(
        proj.mean2d, proj.radius, proj.depth, H, W, settings.tile
    )
    rgb_hw, dep, alpha_buf, t_final, ncontrib, hard = kernels.composite_forward(
        H, W, settings.tile, tile_starts, order,
        np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.conic),
        np.ascontiguousarray(proj.opacity), np.ascontiguousarray(proj.color),
        np.ascontiguousarray(proj.depth), bg,
        settings.skip_eps, settings.term_eps, settings.alpha_clamp,
    )
    depth_out = hard if settings.depth_mode == "hard" else dep
    out = RenderOutput(rgb=np.moveaxis(rgb_hw, -1, 0), depth=depth_out, alpha=alpha_buf)
    ctx = RenderContext(
        proj=proj, sh_coeffs_kept=gs.sh_coeffs[proj.kept], order=order,
        tile_starts=tile_starts, H=H, W=W, t_final=t_final, ncontrib=ncontrib,
        background=bg, kernels=kernels, expected_depth=dep,
    )
    return out, ctx


def render(gs: GaussianSet, camera: tuple[Pose, Intrinsics],
           settings: RasterSettings | None = None, kernels=None) -> RenderOutput:
    out, _ = render_forward(gs, camera, settings, kernels)
    return out


def render_backward(ctx: RenderContext, grad_rgb: np.ndarray,
                    grad_depth: np.ndarray | None = None,
                    grad_alpha: np.ndarray | None = None):
    """Analytic gradients of render wrt the raw Gaussian parameters.

    grad_rgb: (3, H, W); grad_depth/grad_alpha: (H, W) or None. The depth
    gradient targets the expected-depth buffer. Returns
    (d_means, d_quats, d_log_scales, d_opacity_logits, d_sh).
    """
    proj = ctx.proj
    s = proj.settings
    dt = proj.mean2d.dtype
    g_rgb = np.ascontiguousarray(np.moveaxis(np.asarray(grad_rgb, dtype=dt), 0, -1))
    zero = np.zeros((ctx.H, ctx.W), dtype=dt)
    g_depth = zero if grad_depth is None else np.ascontiguousarray(grad_depth, dtype=dt)
    g_alpha = zero if grad_alpha is None else np.ascontiguousarray(grad_alpha, dtype=dt)

    # kernel gradients are already indexed over the kept (projected) set
    d_mean2d, d_conic, d_opac, d_color, d_depth = ctx.kernels.composite_backward(
        ctx.H, ctx.W, s.tile, ctx.tile_starts, ctx.order,
        np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.conic),
        np.ascontiguousarray(proj.opacity), np.ascontiguousarray(proj.color),
        np.ascontiguousarray(proj.depth), ctx.background,
        s.skip_eps, s.term_eps, s.alpha_clamp,
        ctx.t_final, ctx.ncontrib, g_rgb, g_depth, g_alpha,
    )
    return projection_backward(
        proj, ctx.sh_coeffs_kept, d_mean2d, d_conic, d_opac, d_color, d_depth
    )


def render_tensor(means: Tensor, quats: Tensor, log_scales: Tensor,
                  opacity_logits: Tensor, sh_coeffs: Tensor,
                  camera: tuple[Pose, Intrinsics],
                  settings: RasterSettings | None = None,
                  detach_means: Tensor | None = None) -> Tensor:
    """Autodiff view of render: returns a (5, H, W) tensor stacking
    [rgb(3), expected depth, alpha]."""
    gs = GaussianSet(
        means.data, quats.data, log_scales.data, opacity_logits.data, sh_coeffs.data
    )
    out, ctx = render_forward(gs, camera, settings)
    packed = np.concatenate([out.rgb, ctx.expected_depth[None], out.alpha[None]], axis=0)

    parents = (means, quats, log_scales, opacity_logits, sh_coeffs)

    def backward(g):
        dm, dq, dls, dop, dsh = render_backward(ctx, g[0:3], g[3], g[4])
        means.accumulate_grad(dm)
        quats.accumulate_grad(dq)
        log_scales.accumulate_grad(dls)
        opacity_logits.accumulate_grad(dop)
        sh_coeffs.accumulate_grad(dsh)

    return _make(packed, parents, backward)


def eval_density(gs_or_sigma, x: np.ndarray, mean: np.ndarray | None = None) -> float:
    """Unnormalized density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).

    Accepts either (GaussianSet, x) evaluating primitive 0, or
    (Sigma, x, mean). Sigma is regularized with 1e-9 I before inversion.
    """
    if isinstance(gs_or_sigma, GaussianSet):
        sigma = realize_covariance(gs_or_sigma.quaternions[0], gs_or_sigma.log_scales[0])
        mu = gs_or_sigma.means[0]
    else:
        sigma = np.asarray(gs_or_sigma, dtype=np.float64)
        mu = np.asarray(mean, dtype=np.float64)
    sigma = sigma + 1e-9 * np.eye(3)
    d = np.asarray(x, dtype=np.float64) - mu
    try:
        sol = np.linalg.solve(sigma, d)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    return float(np.exp(-0.5 * float(d @ sol)))


def render_bruteforce(gs: GaussianSet, camera: tuple[Pose, Intrinsics],
                      settings: RasterSettings | None = None) -> RenderOutput:
    """Per-pixel all-gaussian compositing reference (no tiles, no binning).

    Shares only the projection stage with the tiled path; the compositing
    loop is written independently.
    """
    settings = settings or RasterSettings()
    pose, K = camera
    H, W = K.height, K.width
    dt = gs.means.dtype
    proj = project_gaussians(gs, camera, settings)
    order = np.lexsort((np.arange(proj.depth.size), proj.depth))

    bg = np.asarray(settings.background, dtype=dt)
    rgb = np.zeros((H, W, 3), dtype=dt)
    dep = np.zeros((H, W), dtype=dt)
    alpha_buf = np.zeros((H, W), dtype=dt)

    mean2d = proj.mean2d[order]
    conic = proj.conic[order]
    opac = proj.opacity[order]
    color = proj.color[order]
    zdepth = proj.depth[order]

    for py in range(H):
        for px in range(W):
            t = 1.0
            acc = np.zeros(3, dtype=np.float64)
            dacc = 0.0
            for i in range(mean2d.shape[0]):
                if t < settings.term_eps:
                    break
                dx = (px + 0.5) - mean2d[i, 0]
                dy = (py + 0.5) - mean2d[i, 1]
                sig = 0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) + conic[i, 1] * dx * dy
                if sig < 0:
                    continue
                ap = min(opac[i] * np.exp(-sig), settings.alpha_clamp)
                if ap < settings.skip_eps:
                    continue
                w = ap * t
                acc += w * color[i]
                dacc += w * zdepth[i]
                t *= 1.0 - ap
            rgb[py, px] = acc + t * bg
            dep[py, px] = dacc
            alpha_buf[py, px] = 1.0 - t
    return RenderOutput(rgb=np.moveaxis(rgb, -1, 0).astype(dt), depth=dep, alpha=alpha_buf)
