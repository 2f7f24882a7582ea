"""Virtual-view initialization by 3D point splatting.

Every reference token (feature + RGB) is lifted with its predicted depth
and dropped into the virtual grid cell containing its projection; per cell
the nearest camera-depth point wins, ties broken by candidate order.
"""

from __future__ import annotations

import numpy as np

from ..geom import Camera, pixel_centers, project_valid, unproject
from .features import DepthMap


def splat_stage(ref_stage_feats: list[np.ndarray], ref_depths: list[DepthMap],
                ref_cams: list[Camera], vrt_cam: Camera):
    """Splat one stage of every reference view into one virtual view.

    ref_stage_feats: per ref view (C, h, w). Returns ((C, h, w), valid (h, w)).
    """
    c, h, w = ref_stage_feats[0].shape
    cells = []
    depths = []
    feats = []
    vrt_pose, vrt_k = vrt_cam
    for feat, dm, (pose, K) in zip(ref_stage_feats, ref_depths, ref_cams):
        valid = dm.valid
        if not valid.any():
            continue
        centers = pixel_centers(h, w, None)[valid]
        world = unproject(centers, dm.depth[valid], pose, K)
        pix, z, ok = project_valid(world, vrt_pose, vrt_k)
        cols = np.floor(pix[:, 0]).astype(np.int64)
        rows = np.floor(pix[:, 1]).astype(np.int64)
        ok &= (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        if not ok.any():
            continue
        cells.append(rows[ok] * w + cols[ok])
        depths.append(z[ok])
        feats.append(feat[:, valid][:, ok].T)

    out = np.zeros((c, h, w), dtype=ref_stage_feats[0].dtype)
    hit = np.zeros((h, w), dtype=bool)
    if not cells:
        return out, hit
    cell = np.concatenate(cells)
    depth = np.concatenate(depths)
    feat = np.concatenate(feats, axis=0)
    # nearest depth per cell, stable in candidate order
    order = np.lexsort((np.arange(cell.size), depth, cell))
    cell_sorted = cell[order]
    first = np.unique(cell_sorted, return_index=True)[1]
    winners = order[first]
    rows, cols = np.divmod(cell[winners], w)
    out[:, rows, cols] = feat[winners].T
    hit[rows, cols] = True
    return out, hit


def init_virtual_views(ref_stages: list[list[np.ndarray]], ref_depths: list[DepthMap],
                       ref_cams: list[Camera], vrt_cams: list[Camera]):
    """Initialize every virtual view at every stage.

    ref_stages: per ref view, list of n_stages (C, h, w) arrays. The grid
    cameras must already be at feature-grid resolution. Returns
    (inits, hits): inits[v][s] is (C, h, w); hits[v] is the validity grid
    (identical across stages since geometry is shared).
    """
    n_stages = len(ref_stages[0])
    inits = []
    hits = []
    for vrt_cam in vrt_cams:
        per_stage = []
        hit = None
        for s in range(n_stages):
            feats = [stages[s] for stages in ref_stages]
            grid, h = splat_stage(feats, ref_depths, ref_cams, vrt_cam)
            per_stage.append(grid)
            hit = h
        inits.append(per_stage)
        hits.append(hit)
    return inits, hits
