"""Pure-numpy tile compositing kernels (fallback backend).

Semantics per pixel, over the tile's depth-sorted gaussian list:
  * stop before a contribution once transmittance drops below term_eps
  * alpha' = min(alpha_clamp, opacity * G); entries with alpha' < skip_eps
    (or a negative quadratic form) are skipped without touching T
  * color/depth composite front-to-back; background blended with final T

The compiled extension implements the identical contract with flat loops.
"""

from __future__ import annotations

import numpy as np

COMPILED = False


def composite_forward(H, W, tile, tile_starts, order,
                      mean2d, conic, alpha, color, depth, background,
                      skip_eps, term_eps, alpha_clamp):
    dt = mean2d.dtype
    rgb = np.zeros((H, W, 3), dtype=dt)
    dep = np.zeros((H, W), dtype=dt)
    hard = np.zeros((H, W), dtype=dt)
    t_final = np.ones((H, W), dtype=dt)
    ncontrib = np.zeros((H, W), dtype=np.int32)
    ntx = (W + tile - 1) // tile

    for t in range(len(tile_starts) - 1):
        s, e = int(tile_starts[t]), int(tile_starts[t + 1])
        ty, tx = divmod(t, ntx)
        y0, x0 = ty * tile, tx * tile
        y1, x1 = min(y0 + tile, H), min(x0 + tile, W)
        if s == e:
            continue
        idx = order[s:e]
        py, px = np.mgrid[y0:y1, x0:x1]
        pxf = (px + 0.5).astype(dt).ravel()[:, None]
        pyf = (py + 0.5).astype(dt).ravel()[:, None]
        npix = pxf.shape[0]

        a, b, c = conic[idx, 0], conic[idx, 1], conic[idx, 2]
        dx = pxf - mean2d[idx, 0]
        dy = pyf - mean2d[idx, 1]
        sig = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
        g = np.exp(-sig)
        ap = np.minimum(alpha[idx] * g, dt.type(alpha_clamp))
        valid = (sig >= 0) & (ap >= skip_eps)
        beta = np.where(valid, 1.0 - ap, dt.type(1.0))
        t_run = np.cumprod(beta, axis=1)
        t_before = np.concatenate([np.ones((npix, 1), dtype=dt), t_run[:, :-1]], axis=1)
        active = t_before >= term_eps
        contrib = valid & active
        w = np.where(contrib, ap * t_before, 0.0).astype(dt)

        rgb_t = w @ color[idx]
        dep_t = w @ depth[idx]
        ncon = active.sum(axis=1).astype(np.int32)
        t_all = np.concatenate([t_before, t_run[:, -1:]], axis=1)
        tf = t_all[np.arange(npix), ncon]
        rgb_t += tf[:, None] * background[None, :]
        has = contrib.any(axis=1)
        first = contrib.argmax(axis=1)
        hard_t = np.where(has, depth[idx][first], 0.0)

        shp = (y1 - y0, x1 - x0)
        rgb[y0:y1, x0:x1] = rgb_t.reshape(shp + (3,))
        dep[y0:y1, x0:x1] = dep_t.reshape(shp)
        t_final[y0:y1, x0:x1] = tf.reshape(shp)
        ncontrib[y0:y1, x0:x1] = ncon.reshape(shp)
        hard[y0:y1, x0:x1] = hard_t.reshape(shp)

    # tiles fully outside any gaussian keep T = 1: blend pure background
    untouched = ncontrib == 0
    rgb[untouched] = np.asarray(background, dtype=dt)[None, :] * t_final[untouched, None]
    alpha_buf = (1.0 - t_final).astype(dt)
    return rgb, dep, alpha_buf, t_final, ncontrib, hard


def composite_backward(H, W, tile, tile_starts, order,
                       mean2d, conic, alpha, color, depth, background,
                       skip_eps, term_eps, alpha_clamp,
                       t_final, ncontrib, g_rgb, g_depth, g_alpha):
    dt = mean2d.dtype
    P = mean2d.shape[0]
    d_mean2d = np.zeros((P, 2), dtype=dt)
    d_conic = np.zeros((P, 3), dtype=dt)
    d_alpha = np.zeros(P, dtype=dt)
    d_color = np.zeros((P, 3), dtype=dt)
    d_depth = np.zeros(P, dtype=dt)
    ntx = (W + tile - 1) // tile

    for t in range(len(tile_starts) - 1):
        s, e = int(tile_starts[t]), int(tile_starts[t + 1])
        if s == e:
            continue
        ty, tx = divmod(t, ntx)
        y0, x0 = ty * tile, tx * tile
        y1, x1 = min(y0 + tile, H), min(x0 + tile, W)
        idx = order[s:e]
        py, px = np.mgrid[y0:y1, x0:x1]
        pxf = (px + 0.5).astype(dt).ravel()[:, None]
        pyf = (py + 0.5).astype(dt).ravel()[:, None]
        npix = pxf.shape[0]

        a, b, c = conic[idx, 0], conic[idx, 1], conic[idx, 2]
        dx = pxf - mean2d[idx, 0]
        dy = pyf - mean2d[idx, 1]
        sig = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
        g = np.exp(-sig)
        raw_ap = alpha[idx] * g
        ap = np.minimum(raw_ap, dt.type(alpha_clamp))
        valid = (sig >= 0) & (ap >= skip_eps)
        beta = np.where(valid, 1.0 - ap, dt.type(1.0))
        t_run = np.cumprod(beta, axis=1)
        t_before = np.concatenate([np.ones((npix, 1), dtype=dt), t_run[:, :-1]], axis=1)
        pos = np.arange(len(idx))[None, :]
        contrib = valid & (t_before >= term_eps) & (pos < ncontrib[y0:y1, x0:x1].ravel()[:, None])
        w = np.where(contrib, ap * t_before, 0.0).astype(dt)

        gr = g_rgb[y0:y1, x0:x1].reshape(npix, 3)
        gd = g_depth[y0:y1, x0:x1].ravel()
        ga = g_alpha[y0:y1, x0:x1].ravel()
        tf = t_final[y0:y1, x0:x1].ravel()

        u = gr @ color[idx].T + gd[:, None] * depth[idx][None, :]
        wu = w * u
        tail = np.cumsum(wu[:, ::-1], axis=1)[:, ::-1] - wu
        k = (gr @ np.asarray(background, dtype=dt) - ga) * tf
        one_m = np.where(valid, 1.0 - ap, dt.type(1.0))
        d_ap = np.where(contrib, u * t_before - (tail + k[:, None]) / one_m, 0.0)

        unclamped = contrib & (raw_ap < alpha_clamp)
        d_g = np.where(unclamped, alpha[idx] * d_ap, 0.0)
        d_opac = np.where(unclamped, g * d_ap, 0.0)
        d_sig = -g * d_g
        np.add.at(d_alpha, idx, d_opac.sum(axis=0))
        np.add.at(d_color, idx, w.T @ gr)
        np.add.at(d_depth, idx, (w * gd[:, None]).sum(axis=0))
        np.add.at(d_conic, idx, np.stack([
            (d_sig * 0.5 * dx * dx).sum(axis=0),
            (d_sig * dx * dy).sum(axis=0),
            (d_sig * 0.5 * dy * dy).sum(axis=0),
        ], axis=1))
        np.add.at(d_mean2d, idx, np.stack([
            (-d_sig * (a * dx + b * dy)).sum(axis=0),
            (-d_sig * (b * dx + c * dy)).sum(axis=0),
        ], axis=1))

    return d_mean2d, d_conic, d_alpha, d_color, d_depth
