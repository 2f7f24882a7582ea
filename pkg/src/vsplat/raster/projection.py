"""Perspective (EWA) projection of 3D Gaussians to screen space, with
analytic gradients for every raw parameter.

Forward: world mean -> camera frame -> pixel mean + view depth; world
covariance R S S^T R^T -> 2x2 screen covariance via the perspective
Jacobian; dilation, conic, conservative cull radius; opacity and SH color
activation. The returned context carries every intermediate the backward
pass needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SingularCovariance
from ..gaussians import (
    GaussianSet,
    activate_opacity,
    activate_scales,
    normalize_quaternions,
    quat_to_rotation,
)
from ..geom import Intrinsics, Pose
from . import sh as shmod


@dataclass
class RasterSettings:
    """Raster behaviour knobs; defaults follow the reference splatting
    renderer conventions."""

    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tile: int = 16
    skip_eps: float = 1.0 / 255.0
    term_eps: float = 1e-4
    alpha_clamp: float = 0.999
    dilation: float = 0.3
    znear: float = 0.01
    frustum_expand: float = 1.3
    min_radius_sigma: float = 3.0
    depth_mode: str = "expected"  # or "hard"


@dataclass
class ProjectionContext:
    """Intermediates of the projection stage for one camera."""

    n_total: int
    kept: np.ndarray  # indices of gaussians in front of the camera
    t_cam: np.ndarray  # (P, 3)
    clamp_mul: np.ndarray  # (P, 2) frustum-clamp gradient multipliers
    J: np.ndarray  # (P, 2, 3)
    W: np.ndarray  # (3, 3) world-to-camera rotation
    T3: np.ndarray  # (P, 2, 3) = J @ W
    sigma_world: np.ndarray  # (P, 3, 3)
    Mq: np.ndarray  # (P, 3, 3) = R(q) diag(s)
    R: np.ndarray  # (P, 3, 3)
    qhat: np.ndarray
    qnorm: np.ndarray
    scales: np.ndarray
    scale_active: np.ndarray
    cov2d: np.ndarray  # (P, 2, 2) dilated
    conic: np.ndarray  # (P, 3) packed [a, b, c]
    mean2d: np.ndarray  # (P, 2)
    depth: np.ndarray  # (P,)
    radius: np.ndarray  # (P,)
    opacity: np.ndarray  # (P,)
    color: np.ndarray  # (P, 3)
    color_active: np.ndarray  # (P, 3) clamp mask
    basis: np.ndarray  # (P, K)
    viewdir: np.ndarray  # (P, 3)
    view_vec_norm: np.ndarray  # (P,)
    fx: float
    fy: float
    settings: RasterSettings
    sh_degree: int


def project_gaussians(gs: GaussianSet, camera: tuple[Pose, Intrinsics],
                      settings: RasterSettings) -> ProjectionContext:
    pose, K = camera
    dt = gs.means.dtype
    means = gs.means
    n_total = means.shape[0]

    Wm = pose.rotation.T.astype(dt)
    cam_center = pose.translation.astype(dt)
    t_all = (means - cam_center) @ Wm.T
    kept = np.flatnonzero(t_all[:, 2] > settings.znear)
    t = t_all[kept]
    p = kept.size

    qhat, qnorm = normalize_quaternions(gs.quaternions[kept])
    R = quat_to_rotation(qhat)
    scales, scale_active = activate_scales(gs.log_scales[kept])
    Mq = R * scales[:, None, :]
    sigma_world = Mq @ np.swapaxes(Mq, -1, -2)

    fx, fy = dt.type(K.fx), dt.type(K.fy)
    tz = t[:, 2]
    rx = t[:, 0] / tz
    ry = t[:, 1] / tz
    # frustum-expanded clamp of the Jacobian evaluation point (not the mean)
    limx = settings.frustum_expand * (0.5 * K.width / K.fx + abs(K.cx / K.fx - 0.5 * K.width / K.fx))
    limy = settings.frustum_expand * (0.5 * K.height / K.fy + abs(K.cy / K.fy - 0.5 * K.height / K.fy))
    rxc = np.clip(rx, -limx, limx)
    ryc = np.clip(ry, -limy, limy)
    clamp_mul = np.stack([(np.abs(rx) <= limx).astype(dt), (np.abs(ry) <= limy).astype(dt)], axis=1)

    J = np.zeros((p, 2, 3), dtype=dt)
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * rxc / tz
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ryc / tz

    T3 = J @ Wm
    cov2d = T3 @ sigma_world @ np.swapaxes(T3, -1, -2)
    cov2d[:, 0, 0] += dt.type(settings.dilation)
    cov2d[:, 1, 1] += dt.type(settings.dilation)

    A, B, C = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = A * C - B * B
    if np.any(det <= 0) or not np.isfinite(det).all():
        raise SingularCovariance("projected covariance not positive definite after dilation")
    inv_det = 1.0 / det
    conic = np.stack([C * inv_det, -B * inv_det, A * inv_det], axis=1)

    mean2d = np.stack([fx * rx + dt.type(K.cx), fy * ry + dt.type(K.cy)], axis=1)

    opacity = activate_opacity(gs.opacity_logits[kept])

    # conservative cull radius: covers both 3 sigma and the alpha' >= skip_eps set
    lam_max = 0.5 * (A + C) + np.sqrt(np.maximum(0.25 * (A - C) ** 2 + B * B, 0.0))
    sig_max = np.sqrt(lam_max)
    if settings.skip_eps > 0:
        level = np.sqrt(2.0 * np.maximum(np.log(np.maximum(opacity / settings.skip_eps, 1e-30)), 0.0))
        radius = np.where(
            opacity <= settings.skip_eps,
            0.0,
            np.ceil(sig_max * np.maximum(settings.min_radius_sigma, level)),
        )
    else:
        radius = np.full(p, np.inf, dtype=dt)

    view_vec = means[kept] - cam_center
    vnorm = np.linalg.norm(view_vec, axis=1)
    viewdir = view_vec / vnorm[:, None]
    degree = gs.sh_degree
    basis = shmod.eval_basis(viewdir, degree)
    raw = np.einsum("pck,pk->pc", gs.sh_coeffs[kept], basis) + dt.type(0.5)
    color = np.maximum(raw, 0.0)
    color_active = raw > 0.0

    return ProjectionContext(
        n_total=n_total, kept=kept, t_cam=t, clamp_mul=clamp_mul, J=J, W=Wm, T3=T3,
        sigma_world=sigma_world, Mq=Mq, R=R, qhat=qhat, qnorm=qnorm, scales=scales,
        scale_active=scale_active, cov2d=cov2d, conic=conic, mean2d=mean2d,
        depth=tz.copy(), radius=radius, opacity=opacity, color=color,
        color_active=color_active, basis=basis, viewdir=viewdir, view_vec_norm=vnorm,
        fx=float(fx), fy=float(fy), settings=settings, sh_degree=degree,
    )


def _rotation_quat_grads(qhat: np.ndarray) -> np.ndarray:
    """dR/dq_hat as (P, 4, 3, 3)."""
    w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
    p = qhat.shape[0]
    g = np.zeros((p, 4, 3, 3), dtype=qhat.dtype)
    zero = np.zeros_like(w)
    g[:, 0] = 2.0 * np.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], axis=1
    ).reshape(p, 3, 3)
    g[:, 1] = 2.0 * np.stack(
        [zero, y, z, y, -2 * x, -w, z, w, -2 * x], axis=1
    ).reshape(p, 3, 3)
    g[:, 2] = 2.0 * np.stack(
        [-2 * y, x, w, x, zero, z, -w, z, -2 * y], axis=1
    ).reshape(p, 3, 3)
    g[:, 3] = 2.0 * np.stack(
        [-2 * z, -w, x, w, -2 * z, y, x, y, zero], axis=1
    ).reshape(p, 3, 3)
    return g


def projection_backward(ctx: ProjectionContext, sh_coeffs_kept: np.ndarray,
                        d_mean2d: np.ndarray, d_conic: np.ndarray,
                        d_opacity: np.ndarray, d_color: np.ndarray,
                        d_depth: np.ndarray):
    """Chain screen-space gradients back to the raw parameters.

    Inputs are per-kept-gaussian; outputs are full-length arrays with zeros
    for culled primitives: (d_means, d_quats, d_log_scales,
    d_opacity_logits, d_sh).
    """
    dt = ctx.mean2d.dtype
    p = ctx.kept.size
    s = ctx.settings

    # conic -> cov2d (conic packs [a, b, c]; b occupies two symmetric slots)
    dC_full = np.empty((p, 2, 2), dtype=dt)
    dC_full[:, 0, 0] = d_conic[:, 0]
    dC_full[:, 0, 1] = dC_full[:, 1, 0] = 0.5 * d_conic[:, 1]
    dC_full[:, 1, 1] = d_conic[:, 2]
    conic_full = np.empty((p, 2, 2), dtype=dt)
    conic_full[:, 0, 0] = ctx.conic[:, 0]
    conic_full[:, 0, 1] = conic_full[:, 1, 0] = ctx.conic[:, 1]
    conic_full[:, 1, 1] = ctx.conic[:, 2]
    d_cov2d = -conic_full @ dC_full @ conic_full
    d_cov2d = 0.5 * (d_cov2d + np.swapaxes(d_cov2d, -1, -2))

    # cov2d = T3 Sigma T3^T + dilation I
    d_sigma_w = np.swapaxes(ctx.T3, -1, -2) @ d_cov2d @ ctx.T3
    d_T3 = 2.0 * d_cov2d @ ctx.T3 @ ctx.sigma_world
    d_J = d_T3 @ ctx.W.T

    # Sigma_w = Mq Mq^T, Mq = R diag(s)
    d_sigma_sym = d_sigma_w + np.swapaxes(d_sigma_w, -1, -2)
    d_Mq = d_sigma_sym @ ctx.Mq
    d_R = d_Mq * ctx.scales[:, None, :]
    d_scales = np.einsum("pij,pij->pj", ctx.R, d_Mq)
    d_log_scales_kept = d_scales * ctx.scales * ctx.scale_active

    # R -> quaternion (through normalization)
    dRdq = _rotation_quat_grads(ctx.qhat)
    d_qhat = np.einsum("pqij,pij->pq", dRdq, d_R)
    d_quat_kept = (d_qhat - ctx.qhat * np.sum(d_qhat * ctx.qhat, axis=1, keepdims=True)) / ctx.qnorm[:, None]

    # J entries -> camera-frame point
    tz = ctx.t_cam[:, 2]
    fx, fy = dt.type(ctx.fx), dt.type(ctx.fy)
    mx_mul, my_mul = ctx.clamp_mul[:, 0], ctx.clamp_mul[:, 1]
    d_t = np.zeros((p, 3), dtype=dt)
    d_t[:, 0] += d_J[:, 0, 2] * (-fx / tz**2) * mx_mul
    d_t[:, 1] += d_J[:, 1, 2] * (-fy / tz**2) * my_mul
    d_t[:, 2] += d_J[:, 0, 0] * (-fx / tz**2)
    d_t[:, 2] += d_J[:, 1, 1] * (-fy / tz**2)
    # J02 = -fx * rxc / tz: unclamped d/dtz = -2*J02/tz... expressed via entries
    d_t[:, 2] += d_J[:, 0, 2] * (-ctx.J[:, 0, 2] / tz) * (1.0 + mx_mul)
    d_t[:, 2] += d_J[:, 1, 2] * (-ctx.J[:, 1, 2] / tz) * (1.0 + my_mul)

    # mean2d (unclamped) and view depth
    tx, ty = ctx.t_cam[:, 0], ctx.t_cam[:, 1]
    d_t[:, 0] += d_mean2d[:, 0] * fx / tz
    d_t[:, 1] += d_mean2d[:, 1] * fy / tz
    d_t[:, 2] += -d_mean2d[:, 0] * fx * tx / tz**2 - d_mean2d[:, 1] * fy * ty / tz**2
    d_t[:, 2] += d_depth

    d_means_kept = d_t @ ctx.W  # W^T != W; dmu = W^T d_t, W=R^T so W^T rows... (d_t @ W) == (W.T @ d_t.T).T

    # opacity logit
    d_logit_kept = d_opacity * ctx.opacity * (1.0 - ctx.opacity)

    # SH color (clamped at zero, +0.5 offset)
    d_raw = d_color * ctx.color_active
    d_sh_kept = np.einsum("pc,pk->pck", d_raw, ctx.basis)
    bgrad = shmod.eval_basis_grad(ctx.viewdir, ctx.sh_degree)
    d_dir = np.einsum("pc,pck,pkj->pj", d_raw, sh_coeffs_kept, bgrad)
    d_view = (d_dir - ctx.viewdir * np.sum(d_dir * ctx.viewdir, axis=1, keepdims=True)) / ctx.view_vec_norm[:, None]
    d_means_kept = d_means_kept + d_view

    n = ctx.n_total
    d_means = np.zeros((n, 3), dtype=dt)
    d_quats = np.zeros((n, 4), dtype=dt)
    d_ls = np.zeros((n, 3), dtype=dt)
    d_logits = np.zeros(n, dtype=dt)
    d_sh = np.zeros((n,) + d_sh_kept.shape[1:], dtype=dt)
    d_means[ctx.kept] = d_means_kept
    d_quats[ctx.kept] = d_quat_kept
    d_ls[ctx.kept] = d_log_scales_kept
    d_logits[ctx.kept] = d_logit_kept
    d_sh[ctx.kept] = d_sh_kept
    return d_means, d_quats, d_ls, d_logits, d_sh
