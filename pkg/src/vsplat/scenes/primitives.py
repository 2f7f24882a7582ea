"""Analytic scenes (spheres, axis-aligned boxes, ground plane) with Lambert
shading, and a vectorized ray tracer used as the ground-truth oracle.

Rays are cast with camera-frame z component 1, so the intersection
parameter t is exactly the camera z-depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import Intrinsics, Pose

_EPS = 1e-6


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray


@dataclass
class Box:
    bmin: np.ndarray
    bmax: np.ndarray
    albedo: np.ndarray


@dataclass
class GroundPlane:
    """Horizontal plane y = level (y points down, so the plane sits below
    cameras at positive level); normal faces up (-y)."""

    level: float
    albedo: np.ndarray


@dataclass
class AnalyticScene:
    spheres: list[Sphere] = field(default_factory=list)
    boxes: list[Box] = field(default_factory=list)
    planes: list[GroundPlane] = field(default_factory=list)
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.3, -0.9, 0.3]) / np.linalg.norm([0.3, -0.9, 0.3]))
    ambient: float = 0.25
    background: np.ndarray = field(default_factory=lambda: np.array([0.04, 0.05, 0.09]))

    @property
    def primitive_count(self) -> int:
        return len(self.spheres) + len(self.boxes) + len(self.planes)

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=np.float64)
        for s in self.spheres:
            if np.linalg.norm(p - s.center) <= s.radius + margin:
                return True
        for b in self.boxes:
            if np.all(p >= b.bmin - margin) and np.all(p <= b.bmax + margin):
                return True
        return False


def _intersect_spheres(o, dirs, spheres):
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    for s in spheres:
        oc = o - s.center
        a = np.einsum("nd,nd->n", dirs, dirs)
        b = 2.0 * dirs @ oc
        c = oc @ oc - s.radius**2
        disc = b * b - 4 * a * c
        hit = disc > 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t1 = (-b - sq) / (2 * a)
        t2 = (-b + sq) / (2 * a)
        t = np.where(t1 > _EPS, t1, t2)
        ok = hit & (t > _EPS) & (t < t_best)
        if ok.any():
            pts = o + dirs[ok] * t[ok, None]
            t_best[ok] = t[ok]
            normal[ok] = (pts - s.center) / s.radius
            albedo[ok] = s.albedo
    return t_best, normal, albedo


def _intersect_boxes(o, dirs, boxes):
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    for bx in boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t_lo = (bx.bmin - o)[None, :] * inv
            t_hi = (bx.bmax - o)[None, :] * inv
        t_near = np.minimum(t_lo, t_hi)
        t_far = np.maximum(t_lo, t_hi)
        # parallel rays outside the slab never hit
        parallel = np.abs(dirs) < 1e-12
        outside = (o[None, :] < bx.bmin[None, :]) | (o[None, :] > bx.bmax[None, :])
        t_near = np.where(parallel & outside, np.inf, np.where(parallel, -np.inf, t_near))
        t_far = np.where(parallel & outside, -np.inf, np.where(parallel, np.inf, t_far))
        enter_axis = np.argmax(t_near, axis=1)
        t_enter = t_near[np.arange(n), enter_axis]
        t_exit = np.min(t_far, axis=1)
        t = np.where(t_enter > _EPS, t_enter, t_exit)
        ok = (t_exit >= np.maximum(t_enter, _EPS)) & (t > _EPS) & (t < t_best)
        if ok.any():
            t_best[ok] = t[ok]
            ax = enter_axis[ok]
            sign = -np.sign(dirs[ok, ax])
            nrm = np.zeros((int(ok.sum()), 3))
            nrm[np.arange(len(ax)), ax] = sign
            # rays starting inside exit through a far face
            inside_start = t_enter[ok] <= _EPS
            if inside_start.any():
                exit_axis = np.argmin(t_far[ok], axis=1)
                sub = np.flatnonzero(inside_start)
                nrm[sub] = 0.0
                nrm[sub, exit_axis[sub]] = np.sign(dirs[ok][sub, exit_axis[sub]])
            normal[ok] = nrm
            albedo[ok] = bx.albedo
    return t_best, normal, albedo


def _intersect_planes(o, dirs, planes):
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    up = np.array([0.0, -1.0, 0.0])
    for pl in planes:
        dy = dirs[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (pl.level - o[1]) / dy
        ok = (np.abs(dy) > 1e-12) & (t > _EPS) & (t < t_best)
        if ok.any():
            t_best[ok] = t[ok]
            normal[ok] = up
            albedo[ok] = pl.albedo
    return t_best, normal, albedo


def raytrace(scene: AnalyticScene, camera: tuple[Pose, Intrinsics]):
    """Render ground truth for one camera.

    Returns (rgb (3, H, W) in [0, 1], depth (H, W) camera-z meters,
    valid (H, W) bool); missed pixels carry the background color and
    invalid depth.
    """
    pose, K = camera
    h, w = K.height, K.width
    us = (np.arange(w) + 0.5 - K.cx) / K.fx
    vs = (np.arange(h) + 0.5 - K.cy) / K.fy
    uu, vv = np.meshgrid(us, vs)
    dirs_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ pose.rotation.T
    o = pose.translation

    results = [
        _intersect_spheres(o, dirs, scene.spheres),
        _intersect_boxes(o, dirs, scene.boxes),
        _intersect_planes(o, dirs, scene.planes),
    ]
    t = np.full(dirs.shape[0], np.inf)
    normal = np.zeros_like(dirs)
    albedo = np.zeros_like(dirs)
    for tc, nc, ac in results:
        closer = tc < t
        t = np.where(closer, tc, t)
        normal[closer] = nc[closer]
        albedo[closer] = ac[closer]

    valid = np.isfinite(t)
    # light_dir points from the surface toward the light
    light = scene.light_dir / np.linalg.norm(scene.light_dir)
    lambert = np.maximum(0.0, normal @ light)
    shade = scene.ambient + (1.0 - scene.ambient) * lambert
    rgb = np.where(valid[:, None], albedo * shade[:, None], scene.background[None, :])
    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.where(valid, t, 0.0)
    return (
        np.moveaxis(rgb.reshape(h, w, 3), -1, 0),
        depth.reshape(h, w),
        valid.reshape(h, w),
    )
