"""Synthetic scenes, ray-traced ground truth, bundle IO."""

from .bundle import BundleView, SceneBundle, load_bundle, save_bundle
from .generate import generate_scene, reference_ring, render_bundle, ring_intrinsics
from .primitives import AnalyticScene, Box, GroundPlane, Sphere, raytrace

__all__ = [
    "AnalyticScene",
    "Sphere",
    "Box",
    "GroundPlane",
    "raytrace",
    "generate_scene",
    "render_bundle",
    "reference_ring",
    "ring_intrinsics",
    "BundleView",
    "SceneBundle",
    "save_bundle",
    "load_bundle",
]
