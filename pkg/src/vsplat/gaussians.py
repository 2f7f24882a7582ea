"""3D Gaussian primitive set: storage, activations, covariance realization,
and the GSP1 binary/text export."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, MissingFile, ShapeMismatch, ZeroQuaternion

SCALE_MIN = 1e-6
SCALE_MAX = 10.0

GSP_MAGIC = b"GSP1"
GSP_VERSION = 1


@dataclass
class GaussianSet:
    """Flat arrays of raw (pre-activation) Gaussian parameters.

    means: (P, 3) world meters; quaternions: (P, 4) unnormalized (w, x, y, z);
    log_scales: (P, 3); opacity_logits: (P,); sh_coeffs: (P, 3, (l+1)^2).
    """

    means: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self):
        p = self.means.shape[0]
        if (
            self.means.shape != (p, 3)
            or self.quaternions.shape != (p, 4)
            or self.log_scales.shape != (p, 3)
            or self.opacity_logits.shape != (p,)
            or self.sh_coeffs.ndim != 3
            or self.sh_coeffs.shape[:2] != (p, 3)
        ):
            raise ShapeMismatch("inconsistent GaussianSet field shapes")

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[2]))) - 1

    def astype(self, dtype) -> "GaussianSet":
        return GaussianSet(
            self.means.astype(dtype),
            self.quaternions.astype(dtype),
            self.log_scales.astype(dtype),
            self.opacity_logits.astype(dtype),
            self.sh_coeffs.astype(dtype),
        )


def activate_opacity(logits: np.ndarray) -> np.ndarray:
    """Logistic map onto (0, 1)."""
    return 1.0 / (1.0 + np.exp(-logits))


def activate_scales(log_scales: np.ndarray):
    """exp with clamp to [SCALE_MIN, SCALE_MAX] meters.

    Returns (scales, active) where active marks entries inside the clamp
    (gradient passes only there).
    """
    raw = np.exp(log_scales)
    scales = np.clip(raw, SCALE_MIN, SCALE_MAX)
    return scales, (raw > SCALE_MIN) & (raw < SCALE_MAX)


def normalize_quaternions(q: np.ndarray):
    norms = np.linalg.norm(q, axis=-1)
    if np.any(norms < 1e-12):
        raise ZeroQuaternion("quaternion with (near-)zero norm")
    return q / norms[..., None], norms


def quat_to_rotation(qhat: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions (w, x, y, z); shape (..., 3, 3)."""
    w, x, y, z = qhat[..., 0], qhat[..., 1], qhat[..., 2], qhat[..., 3]
    R = np.empty(qhat.shape[:-1] + (3, 3), dtype=qhat.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def realize_covariance(q: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T from an (unnormalized) quaternion and log-scales.

    Accepts single vectors or batched (..., 4)/(..., 3) arrays; the result is
    symmetric positive semi-definite by construction.
    """
    q = np.asarray(q, dtype=np.float64)
    ls = np.asarray(log_scales, dtype=np.float64)
    qhat, _ = normalize_quaternions(q)
    R = quat_to_rotation(qhat)
    scales, _ = activate_scales(ls)
    M = R * scales[..., None, :]
    sigma = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (sigma + np.swapaxes(sigma, -1, -2))


# ---- GSP1 container ---------------------------------------------------------


def save_gaussians(path, gs: GaussianSet):
    """Binary export: magic GSP1, version, count, SH degree, then the five
    field arrays as little-endian float32 in declaration order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(GSP_MAGIC)
        fh.write(struct.pack("<IQI", GSP_VERSION, len(gs), gs.sh_degree))
        for arr in (gs.means, gs.quaternions, gs.log_scales, gs.opacity_logits, gs.sh_coeffs):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_gaussians(path) -> GaussianSet:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"gaussian container not found: {path}")
    data = path.read_bytes()
    if data[:4] != GSP_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r}")
    version, count, degree = struct.unpack_from("<IQI", data, 4)
    if version != GSP_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    k = (degree + 1) ** 2
    shapes = [(count, 3), (count, 4), (count, 3), (count,), (count, 3, k)]
    arrays = []
    off = 20
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).copy())
        off += 4 * n
    return GaussianSet(*arrays)


def gaussians_to_text(gs: GaussianSet) -> str:
    """Debug dump: one primitive per line.

    Columns: mean xyz | quaternion wxyz | log-scales xyz | opacity logit |
    sh coefficients (channel-major).
    """
    lines = [f"# gaussians count={len(gs)} sh_degree={gs.sh_degree}"]
    for i in range(len(gs)):
        cols = np.concatenate(
            [gs.means[i], gs.quaternions[i], gs.log_scales[i],
             [gs.opacity_logits[i]], gs.sh_coeffs[i].ravel()]
        )
        lines.append(" ".join(f"{v:.8g}" for v in cols))
    return "\n".join(lines) + "\n"
