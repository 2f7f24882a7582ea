"""Image and geometry evaluation metrics: PSNR, SSIM, depth RMSE, Chamfer.

The evaluation report is emitted as JSON-lines records
{"metric": ..., "view": ..., "value": ...}.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMask, EmptySet, ShapeMismatch, TooSmall

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical images report +inf."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr inputs {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _window_means(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode windowed weighted means via stride tricks."""
    k = window.shape[0]
    h, w = img.shape
    shape = (h - k + 1, w - k + 1, k, k)
    strides = img.strides * 2
    patches = np.lib.stride_tricks.as_strided(img, shape=shape, strides=strides)
    return np.einsum("ijkl,kl->ij", patches, window, optimize=True)


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Windowed SSIM, 11x11 Gaussian window sigma=1.5, Wang et al. constants.

    Accepts (H, W) or channel-first (C, H, W); returns the mean over windows
    and channels.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim inputs {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-2] < _SSIM_WINDOW or a.shape[-1] < _SSIM_WINDOW:
        raise TooSmall(f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} images")
    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vals = []
    for ca, cb in zip(a, b):
        mu_a = _window_means(ca, window)
        mu_b = _window_means(cb, window)
        var_a = _window_means(ca * ca, window) - mu_a * mu_a
        var_b = _window_means(cb * cb, window) - mu_b * mu_b
        cov = _window_means(ca * cb, window) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def d_rmse(pred_depth: np.ndarray, gt_depth: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Root mean square depth error over valid pixels, meters."""
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"d_rmse inputs {pred.shape} vs {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape:
        raise ShapeMismatch("d_rmse mask shape mismatch")
    if not mask.any():
        raise EmptyMask("d_rmse mask selects no pixels")
    diff = pred[mask] - gt[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def _nn_sq_dists(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Per-query squared distance to the nearest reference point.

    A 3-d tree proposes candidates; the distance is recomputed with the same
    float operations as the brute-force definition so both paths agree
    exactly. Small reference sets fall back to brute force directly.
    """
    if refs.shape[0] <= 32:
        d = queries[:, None, :] - refs[None, :, :]
        return np.min(np.einsum("qrk,qrk->qr", d, d), axis=1)
    tree = cKDTree(refs)
    k = min(4, refs.shape[0])
    _, idx = tree.query(queries, k=k)
    idx = idx.reshape(queries.shape[0], -1)
    d = queries[:, None, :] - refs[idx]
    return np.min(np.einsum("qrk,qrk->qr", d, d), axis=1)


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean of nearest-neighbor squared distances (m^2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptySet("chamfer requires two non-empty point sets")
    if a.ndim != 2 or a.shape[1] != 3 or b.ndim != 2 or b.shape[1] != 3:
        raise ShapeMismatch("chamfer expects (n, 3) point arrays")
    return float(np.mean(_nn_sq_dists(a, b)) + np.mean(_nn_sq_dists(b, a)))


def chamfer_bruteforce(a: np.ndarray, b: np.ndarray) -> float:
    """O(n^2) reference used by the tests as the oracle."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = a[:, None, :] - b[None, :, :]
    sq = np.einsum("abk,abk->ab", d, d)
    return float(np.mean(np.min(sq, axis=1)) + np.mean(np.min(sq, axis=0)))


def write_report(path, records: list[dict]):
    """records: dicts with keys metric, view, value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            val = rec["value"]
            rec = {**rec, "value": "inf" if val == math.inf else val}
            fh.write(json.dumps(rec) + "\n")


def read_report(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("value") == "inf":
            rec["value"] = math.inf
        out.append(rec)
    return out
