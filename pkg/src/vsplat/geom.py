"""Pinhole camera models, projection/unprojection and epipolar geometry.

Conventions (used everywhere in the package):
  * right-handed frame, camera looks down +z, x right, y down
  * poses are camera-to-world: x_world = R @ x_cam + t
  * pixel (row r, col c) has continuous image coordinates (c + 0.5, r + 0.5)

All functions are pure and accept/return float64 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadRange, BehindCamera, NonPositiveDepth

_BASELINE_EPS = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same camera at a different raster resolution."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    @property
    def matrix(self) -> np.ndarray:
        """4x4 camera-to-world matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


Camera = tuple[Pose, Intrinsics]


@dataclass
class EpipolarMask:
    """Token admissibility between one query view and one key view.

    grid[q, k] is True when key token k may attend query token q.
    """

    query_view: int
    key_view: int
    grid: np.ndarray = field(repr=False)


def look_at_pose(eye, target, up=(0.0, -1.0, 0.0)) -> Pose:
    """Pose whose +z axis points from eye towards target.

    `up` defaults to -y because image y points down.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z = fwd / n
    upv = np.asarray(up, dtype=np.float64)
    x = np.cross(-upv, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        # forward parallel to up: pick an arbitrary orthogonal x
        x = np.cross(np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0]), z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    return Pose(R, eye)


def project(point: np.ndarray, pose: Pose, K: Intrinsics):
    """Project world points to pixel coordinates and camera depth.

    Accepts a single 3-vector or an (..., 3) array. Raises BehindCamera
    if any point has camera-frame z <= 0.
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    cam = pose.world_to_cam(pts.reshape(-1, 3))
    z = cam[:, 2]
    if np.any(z <= 0):
        raise BehindCamera(f"{int(np.sum(z <= 0))} point(s) have camera depth <= 0")
    pix = np.empty((cam.shape[0], 2))
    pix[:, 0] = K.fx * cam[:, 0] / z + K.cx
    pix[:, 1] = K.fy * cam[:, 1] / z + K.cy
    if single:
        return pix[0], float(z[0])
    return pix.reshape(pts.shape[:-1] + (2,)), z.reshape(pts.shape[:-1])


def project_valid(points: np.ndarray, pose: Pose, K: Intrinsics):
    """Vectorized projection that flags z <= 0 instead of raising.

    Returns (pixels (..., 2), depth (...,), valid (...,)); pixel values for
    invalid points are unspecified.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pose.world_to_cam(pts)
    z = cam[:, 2]
    valid = z > 0
    zsafe = np.where(valid, z, 1.0)
    pix = np.empty((pts.shape[0], 2))
    pix[:, 0] = K.fx * cam[:, 0] / zsafe + K.cx
    pix[:, 1] = K.fy * cam[:, 1] / zsafe + K.cy
    shape = np.asarray(points).shape[:-1]
    return pix.reshape(shape + (2,)), z.reshape(shape), valid.reshape(shape)


def unproject(pixel: np.ndarray, depth, pose: Pose, K: Intrinsics) -> np.ndarray:
    """Lift pixels with camera depth to world points.

    Accepts a single (2,) pixel with scalar depth or (..., 2) with (...)
    depths. Raises NonPositiveDepth if any depth <= 0.
    """
    pix = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveDepth("depth must be positive")
    single = pix.ndim == 1
    pix2 = pix.reshape(-1, 2)
    dflat = np.broadcast_to(d, pix.shape[:-1]).reshape(-1) if not single else d.reshape(-1)
    x = (pix2[:, 0] - K.cx) / K.fx * dflat
    y = (pix2[:, 1] - K.cy) / K.fy * dflat
    cam = np.stack([x, y, dflat], axis=-1)
    world = pose.cam_to_world(cam)
    if single:
        return world[0]
    return world.reshape(pix.shape[:-1] + (3,))


def pixel_centers(rows: int, cols: int, K: Intrinsics | None = None) -> np.ndarray:
    """(rows, cols, 2) array of continuous (u, v) cell centers.

    When K is given the cells are patches of K's image plane (token centers);
    otherwise the grid is its own raster.
    """
    if K is None:
        su = sv = 1.0
    else:
        su = K.width / cols
        sv = K.height / rows
    u = (np.arange(cols) + 0.5) * su
    v = (np.arange(rows) + 0.5) * sv
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def epipolar_mask(
    query_cam: Camera, key_cam: Camera, token_grid: tuple[int, int], band_px: float
) -> EpipolarMask:
    """Admissibility of key tokens per query token via epipolar distance.

    A key token is admissible when its patch center lies within band_px
    pixels of the epipolar line induced by the query patch center. With a
    degenerate baseline the mask is all-true, and any row that would end up
    empty falls back to all-true.
    """
    if not band_px > 0:
        raise BadRange(f"band_px must be positive, got {band_px}")
    qpose, qK = query_cam
    kpose, kK = key_cam
    rows, cols = token_grid
    n_tokens = rows * cols

    baseline = np.linalg.norm(qpose.center - kpose.center)
    if baseline < _BASELINE_EPS:
        grid = np.ones((n_tokens, n_tokens), dtype=bool)
        return EpipolarMask(query_view=-1, key_view=-1, grid=grid)

    q_centers = pixel_centers(rows, cols, qK).reshape(-1, 2)
    k_centers = pixel_centers(rows, cols, kK).reshape(-1, 2)

    # Query ray in world coords, expressed in the key camera.
    Kq_inv = np.linalg.inv(qK.matrix)
    dirs_q = (np.concatenate([q_centers, np.ones((n_tokens, 1))], axis=1) @ Kq_inv.T) @ qpose.rotation.T
    Kk = kK.matrix
    Rk_w2c = kpose.rotation.T
    epipole_h = Kk @ (Rk_w2c @ (qpose.center - kpose.center))
    dirs_h = (dirs_q @ Rk_w2c.T) @ Kk.T
    lines = np.cross(np.broadcast_to(epipole_h, dirs_h.shape), dirs_h)

    norm = np.hypot(lines[:, 0], lines[:, 1])
    degenerate = norm < 1e-12
    norm_safe = np.where(degenerate, 1.0, norm)
    k_h = np.concatenate([k_centers, np.ones((n_tokens, 1))], axis=1)
    dist = np.abs(lines @ k_h.T) / norm_safe[:, None]
    grid = dist <= band_px
    grid[degenerate, :] = True
    empty = ~grid.any(axis=1)
    grid[empty, :] = True
    return EpipolarMask(query_view=-1, key_view=-1, grid=grid)


def view_overlap(
    cam_a: Camera,
    cam_b: Camera,
    depth_map_a: np.ndarray,
    valid_a: np.ndarray | None = None,
) -> float:
    """Fraction of view-a pixels whose 3D points land inside view b.

    A pixel counts when its unprojected point has positive depth in b and
    projects inside b's image bounds. Pixels with invalid depth in a are
    excluded from the denominator.
    """
    pose_a, K_a = cam_a
    pose_b, K_b = cam_b
    depth = np.asarray(depth_map_a, dtype=np.float64)
    h, w = depth.shape
    if valid_a is None:
        valid_a = np.isfinite(depth) & (depth > 0)
    else:
        valid_a = np.asarray(valid_a, dtype=bool) & np.isfinite(depth) & (depth > 0)
    total = int(valid_a.sum())
    if total == 0:
        return 0.0
    centers = pixel_centers(h, w)[valid_a]
    world = unproject(centers, depth[valid_a], pose_a, K_a)
    pix, z, in_front = project_valid(world, pose_b, K_b)
    inside = (
        in_front
        & (pix[:, 0] >= 0.0)
        & (pix[:, 0] < K_b.width)
        & (pix[:, 1] >= 0.0)
        & (pix[:, 1] < K_b.height)
    )
    return float(inside.sum()) / total


def resize_intrinsics_grid(K: Intrinsics, rows: int, cols: int) -> Intrinsics:
    """Intrinsics of the token grid raster covering the same field of view."""
    return K.scaled(cols, rows)
