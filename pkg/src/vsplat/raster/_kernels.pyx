# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tile compositing kernels.

Contract identical to kernels_py: front-to-back compositing per pixel over
depth-sorted tile lists, termination below term_eps, skip below skip_eps,
alpha clamped at alpha_clamp, background blended with final transmittance.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

ctypedef fused floating:
    float
    double

COMPILED = True


def composite_forward(int H, int W, int tile,
                      cnp.int64_t[::1] tile_starts, cnp.int32_t[::1] order,
                      floating[:, ::1] mean2d, floating[:, ::1] conic,
                      floating[::1] alpha, floating[:, ::1] color,
                      floating[::1] depth, floating[::1] background,
                      double skip_eps, double term_eps, double alpha_clamp):
    dt = np.float32 if floating is float else np.float64
    rgb_arr = np.zeros((H, W, 3), dtype=dt)
    dep_arr = np.zeros((H, W), dtype=dt)
    tfin_arr = np.ones((H, W), dtype=dt)
    ncon_arr = np.zeros((H, W), dtype=np.int32)
    hard_arr = np.zeros((H, W), dtype=dt)
    cdef floating[:, :, ::1] rgb = rgb_arr
    cdef floating[:, ::1] dep = dep_arr
    cdef floating[:, ::1] tfin = tfin_arr
    cdef cnp.int32_t[:, ::1] ncon = ncon_arr
    cdef floating[:, ::1] hard = hard_arr

    cdef int ntx = (W + tile - 1) // tile
    cdef int nty = (H + tile - 1) // tile
    cdef int t, ty, tx, y0, x0, y1, x1, py, px, gi, nc, got_hard
    cdef long s, e, j
    cdef double T, dx, dy, a, b, c, sig, g, ap, w, pxf, pyf
    cdef double cr, cg, cb, dsum, hd

    for t in range(ntx * nty):
        s = tile_starts[t]
        e = tile_starts[t + 1]
        ty = t // ntx
        tx = t - ty * ntx
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, H)
        x1 = min(x0 + tile, W)
        for py in range(y0, y1):
            pyf = py + 0.5
            for px in range(x0, x1):
                pxf = px + 0.5
                T = 1.0
                cr = cg = cb = 0.0
                dsum = 0.0
                hd = 0.0
                nc = 0
                got_hard = 0
                for j in range(s, e):
                    if T < term_eps:
                        break
                    nc += 1
                    gi = order[j]
                    dx = pxf - mean2d[gi, 0]
                    dy = pyf - mean2d[gi, 1]
                    a = conic[gi, 0]
                    b = conic[gi, 1]
                    c = conic[gi, 2]
                    sig = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
                    if sig < 0.0:
                        continue
                    g = exp(-sig)
                    ap = alpha[gi] * g
                    if ap > alpha_clamp:
                        ap = alpha_clamp
                    if ap < skip_eps:
                        continue
                    w = ap * T
                    cr += w * color[gi, 0]
                    cg += w * color[gi, 1]
                    cb += w * color[gi, 2]
                    dsum += w * depth[gi]
                    if got_hard == 0:
                        hd = depth[gi]
                        got_hard = 1
                    T = T * (1.0 - ap)
                rgb[py, px, 0] = <floating> (cr + T * background[0])
                rgb[py, px, 1] = <floating> (cg + T * background[1])
                rgb[py, px, 2] = <floating> (cb + T * background[2])
                dep[py, px] = <floating> dsum
                tfin[py, px] = <floating> T
                ncon[py, px] = nc
                hard[py, px] = <floating> hd

    alpha_arr = (1.0 - tfin_arr).astype(dt)
    return rgb_arr, dep_arr, alpha_arr, tfin_arr, ncon_arr, hard_arr


def composite_backward(int H, int W, int tile,
                       cnp.int64_t[::1] tile_starts, cnp.int32_t[::1] order,
                       floating[:, ::1] mean2d, floating[:, ::1] conic,
                       floating[::1] alpha, floating[:, ::1] color,
                       floating[::1] depth, floating[::1] background,
                       double skip_eps, double term_eps, double alpha_clamp,
                       floating[:, ::1] t_final, cnp.int32_t[:, ::1] ncontrib,
                       floating[:, :, ::1] g_rgb, floating[:, ::1] g_depth,
                       floating[:, ::1] g_alpha):
    dt = np.float32 if floating is float else np.float64
    cdef Py_ssize_t P = mean2d.shape[0]
    dm_arr = np.zeros((P, 2), dtype=dt)
    dc_arr = np.zeros((P, 3), dtype=dt)
    da_arr = np.zeros(P, dtype=dt)
    dcol_arr = np.zeros((P, 3), dtype=dt)
    dd_arr = np.zeros(P, dtype=dt)
    cdef floating[:, ::1] dm = dm_arr
    cdef floating[:, ::1] dc = dc_arr
    cdef floating[::1] da = da_arr
    cdef floating[:, ::1] dcol = dcol_arr
    cdef floating[::1] dd = dd_arr

    cdef int ntx = (W + tile - 1) // tile
    cdef int nty = (H + tile - 1) // tile
    cdef int t, ty, tx, y0, x0, y1, x1, py, px, gi, nc
    cdef long s, e, j
    cdef double T_after, T_before, A, K, dx, dy, a, b, c, sig, g, raw_ap, ap
    cdef double one_m, u, w, d_ap, d_g, d_sig, pxf, pyf
    cdef double gr0, gr1, gr2, gd, ga

    for t in range(ntx * nty):
        s = tile_starts[t]
        e = tile_starts[t + 1]
        if s == e:
            continue
        ty = t // ntx
        tx = t - ty * ntx
        y0 = ty * tile
        x0 = tx * tile
        y1 = min(y0 + tile, H)
        x1 = min(x0 + tile, W)
        for py in range(y0, y1):
            pyf = py + 0.5
            for px in range(x0, x1):
                pxf = px + 0.5
                nc = ncontrib[py, px]
                if nc == 0:
                    continue
                gr0 = g_rgb[py, px, 0]
                gr1 = g_rgb[py, px, 1]
                gr2 = g_rgb[py, px, 2]
                gd = g_depth[py, px]
                ga = g_alpha[py, px]
                T_after = t_final[py, px]
                A = 0.0
                K = (gr0 * background[0] + gr1 * background[1]
                     + gr2 * background[2] - ga) * T_after
                for j in range(s + nc - 1, s - 1, -1):
                    gi = order[j]
                    dx = pxf - mean2d[gi, 0]
                    dy = pyf - mean2d[gi, 1]
                    a = conic[gi, 0]
                    b = conic[gi, 1]
                    c = conic[gi, 2]
                    sig = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
                    if sig < 0.0:
                        continue
                    g = exp(-sig)
                    raw_ap = alpha[gi] * g
                    ap = raw_ap
                    if ap > alpha_clamp:
                        ap = alpha_clamp
                    if ap < skip_eps:
                        continue
                    one_m = 1.0 - ap
                    T_before = T_after / one_m
                    w = ap * T_before
                    u = gr0 * color[gi, 0] + gr1 * color[gi, 1] + gr2 * color[gi, 2] + gd * depth[gi]
                    d_ap = u * T_before - (A + K) / one_m
                    dcol[gi, 0] += <floating> (w * gr0)
                    dcol[gi, 1] += <floating> (w * gr1)
                    dcol[gi, 2] += <floating> (w * gr2)
                    dd[gi] += <floating> (w * gd)
                    if raw_ap < alpha_clamp:
                        d_g = alpha[gi] * d_ap
                        da[gi] += <floating> (g * d_ap)
                        d_sig = -g * d_g
                        dc[gi, 0] += <floating> (d_sig * 0.5 * dx * dx)
                        dc[gi, 1] += <floating> (d_sig * dx * dy)
                        dc[gi, 2] += <floating> (d_sig * 0.5 * dy * dy)
                        dm[gi, 0] += <floating> (-d_sig * (a * dx + b * dy))
                        dm[gi, 1] += <floating> (-d_sig * (b * dx + c * dy))
                    A += u * w
                    T_after = T_before

    return dm_arr, dc_arr, da_arr, dcol_arr, dd_arr
