"""Seeded scene generation: outward-facing reference ring (sparse overlap),
virtual/novel cameras on an exterior sphere looking inward."""

from __future__ import annotations

import numpy as np

from ..geom import Intrinsics, Pose, look_at_pose
from .bundle import BundleView, SceneBundle
from .primitives import AnalyticScene, Box, GroundPlane, Sphere, raytrace

RING_RADIUS = 1.2
HFOV_DEG = 70.0
PRIM_RADIUS = (3.5, 8.5)
VRT_RADIUS = (5.0, 8.0)
NVS_RADIUS = (9.0, 12.0)
GROUND_LEVEL = 1.8


def ring_intrinsics(resolution: int) -> Intrinsics:
    f = 0.5 * resolution / np.tan(np.deg2rad(HFOV_DEG / 2.0))
    c = resolution / 2.0
    return Intrinsics(f, f, c, c, resolution, resolution)


def reference_ring(resolution: int, n_ref: int = 6) -> list[tuple[Pose, Intrinsics]]:
    """Outward-facing cameras, evenly spaced on a ring around the origin."""
    K = ring_intrinsics(resolution)
    cams = []
    for i in range(n_ref):
        ang = 2.0 * np.pi * i / n_ref
        d = np.array([np.cos(ang), 0.0, np.sin(ang)])
        eye = RING_RADIUS * d
        cams.append((look_at_pose(eye, eye + 4.0 * d), K))
    return cams


def _sample_inward_camera(rng, radius_range, K):
    r = rng.uniform(*radius_range)
    az = rng.uniform(0.0, 2.0 * np.pi)
    elev = rng.uniform(np.deg2rad(-25.0), np.deg2rad(35.0))
    eye = r * np.array([np.cos(elev) * np.cos(az), -np.sin(elev), np.cos(elev) * np.sin(az)])
    target = rng.uniform(-1.0, 1.0, size=3)
    return (look_at_pose(eye, target), K)


def generate_scene(seed: int, resolution: int = 64, n_ref: int = 6,
                   n_vrt_candidates: int = 12, n_nvs: int = 2):
    """Build the analytic scene and all candidate cameras for one seed.

    Returns (scene, ref_cams, vrt_candidate_cams, nvs_cams); reproducible
    bit-exactly from (seed, arguments).
    """
    rng = np.random.default_rng(seed)
    scene = AnalyticScene()
    scene.planes.append(
        GroundPlane(level=GROUND_LEVEL, albedo=rng.uniform(0.25, 0.6, size=3))
    )
    n_prim = int(rng.integers(3, 11))
    for _ in range(n_prim):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        rad = rng.uniform(*PRIM_RADIUS)
        y = rng.uniform(-2.0, 1.2)
        center = np.array([rad * np.cos(ang), y, rad * np.sin(ang)])
        albedo = rng.uniform(0.15, 0.95, size=3)
        if rng.random() < 0.5:
            scene.spheres.append(Sphere(center=center, radius=rng.uniform(0.6, 1.7), albedo=albedo))
        else:
            half = rng.uniform(0.4, 1.3, size=3)
            scene.boxes.append(Box(bmin=center - half, bmax=center + half, albedo=albedo))
    light = np.array([rng.uniform(-1, 1), -rng.uniform(0.6, 1.0), rng.uniform(-1, 1)])
    scene.light_dir = light / np.linalg.norm(light)
    scene.background = rng.uniform(0.02, 0.10, size=3)

    ref_cams = reference_ring(resolution, n_ref)
    K = ring_intrinsics(resolution)

    def sample_many(count, radius_range):
        cams = []
        while len(cams) < count:
            cam = _sample_inward_camera(rng, radius_range, K)
            if not scene.contains(cam[0].center, margin=0.4):
                cams.append(cam)
        return cams

    vrt_cams = sample_many(n_vrt_candidates, VRT_RADIUS)
    nvs_cams = sample_many(n_nvs, NVS_RADIUS)
    return scene, ref_cams, vrt_cams, nvs_cams


def render_bundle(scene: AnalyticScene, scene_id: str,
                  ref_cams, vrt_cams, nvs_cams) -> SceneBundle:
    """Ray-trace ground truth RGB-D for every view into a SceneBundle."""
    bundle = SceneBundle(scene_id=scene_id)
    for role, cams in (("ref", ref_cams), ("vrt", vrt_cams), ("nvs", nvs_cams)):
        for i, (pose, K) in enumerate(cams):
            rgb, depth, valid = raytrace(scene, (pose, K))
            bundle.views.append(
                BundleView(
                    view_id=f"{role}_{i:02d}", role=role, pose=pose, K=K,
                    rgb=rgb, depth=depth, valid=valid,
                )
            )
    return bundle
