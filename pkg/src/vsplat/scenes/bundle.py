"""Scene bundles: reference/virtual/novel views with ground-truth RGB-D.

On-disk layout:
    cameras.json   per view: id, role (ref|vrt|nvs), width/height,
                   3x3 intrinsics row-major, 4x4 camera-to-world row-major
    rgb/<id>.png   8-bit color
    depth/<id>.pfm little-endian float depth, 0 where invalid
                   (required for reference views, optional otherwise)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import imageio
from ..errors import MalformedJson, MissingFile, ResolutionMismatch
from ..geom import Intrinsics, Pose

ROLES = ("ref", "vrt", "nvs")


@dataclass
class BundleView:
    view_id: str
    role: str
    pose: Pose
    K: Intrinsics
    rgb: np.ndarray | None = None
    depth: np.ndarray | None = None
    valid: np.ndarray | None = None

    @property
    def camera(self):
        return (self.pose, self.K)


@dataclass
class SceneBundle:
    scene_id: str
    views: list[BundleView] = field(default_factory=list)

    def by_role(self, role: str) -> list[BundleView]:
        return [v for v in self.views if v.role == role]

    @property
    def refs(self):
        return self.by_role("ref")

    @property
    def vrts(self):
        return self.by_role("vrt")

    @property
    def novels(self):
        return self.by_role("nvs")

    @property
    def resolution(self) -> tuple[int, int]:
        k = self.views[0].K
        return k.height, k.width


def save_bundle(bundle: SceneBundle, path):
    path = Path(path)
    (path / "rgb").mkdir(parents=True, exist_ok=True)
    (path / "depth").mkdir(parents=True, exist_ok=True)
    meta = {"scene_id": bundle.scene_id, "views": []}
    for v in bundle.views:
        meta["views"].append(
            {
                "id": v.view_id,
                "role": v.role,
                "width": v.K.width,
                "height": v.K.height,
                "intrinsics": v.K.matrix.tolist(),
                "cam_to_world": v.pose.matrix.tolist(),
            }
        )
        if v.rgb is not None:
            imageio.save_png(path / "rgb" / f"{v.view_id}.png", v.rgb)
        if v.depth is not None:
            depth = np.where(v.valid, v.depth, 0.0) if v.valid is not None else v.depth
            imageio.save_pfm(path / "depth" / f"{v.view_id}.pfm", depth.astype(np.float32))
    (path / "cameras.json").write_text(json.dumps(meta, indent=1))


def _parse_view(path: Path, rec: dict) -> BundleView:
    try:
        kmat = np.asarray(rec["intrinsics"], dtype=np.float64)
        pmat = np.asarray(rec["cam_to_world"], dtype=np.float64)
        if kmat.shape != (3, 3) or pmat.shape != (4, 4):
            raise ValueError("bad matrix shapes")
        if abs(np.linalg.det(kmat)) < 1e-12:
            raise ValueError("intrinsics not invertible")
        K = Intrinsics(
            fx=float(kmat[0, 0]), fy=float(kmat[1, 1]),
            cx=float(kmat[0, 2]), cy=float(kmat[1, 2]),
            width=int(rec["width"]), height=int(rec["height"]),
        )
        pose = Pose(pmat[:3, :3], pmat[:3, 3])
        role = rec["role"]
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        return BundleView(view_id=str(rec["id"]), role=role, pose=pose, K=K)
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedJson(f"{path}: invalid view record: {exc}") from exc


def load_bundle(path) -> SceneBundle:
    path = Path(path)
    camfile = path / "cameras.json"
    if not camfile.is_file():
        raise MissingFile(f"no cameras.json under {path}")
    try:
        meta = json.loads(camfile.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"{camfile}: {exc}") from exc
    if "views" not in meta or not meta["views"]:
        raise MalformedJson(f"{camfile}: no views listed")

    bundle = SceneBundle(scene_id=str(meta.get("scene_id", path.name)))
    for rec in meta["views"]:
        view = _parse_view(camfile, rec)
        rgb_path = path / "rgb" / f"{view.view_id}.png"
        if rgb_path.is_file():
            view.rgb = imageio.load_png(rgb_path)
            if view.rgb.shape[1:] != (view.K.height, view.K.width):
                raise ResolutionMismatch(
                    f"{rgb_path}: image {view.rgb.shape[1:]} vs camera "
                    f"({view.K.height}, {view.K.width})"
                )
        depth_path = path / "depth" / f"{view.view_id}.pfm"
        if depth_path.is_file():
            depth = imageio.load_pfm(depth_path)
            if depth.shape != (view.K.height, view.K.width):
                raise ResolutionMismatch(f"{depth_path}: depth {depth.shape}")
            view.depth = depth
            view.valid = depth > 0
        elif view.role == "ref":
            raise MissingFile(f"reference view {view.view_id} has no depth map")
        else:
            view.depth = np.zeros((view.K.height, view.K.width))
            view.valid = np.zeros((view.K.height, view.K.width), dtype=bool)
        bundle.views.append(view)

    h, w = bundle.resolution
    for v in bundle.views:
        if (v.K.height, v.K.width) != (h, w):
            raise ResolutionMismatch(f"view {v.view_id} is {v.K.height}x{v.K.width}, bundle is {h}x{w}")
    return bundle
