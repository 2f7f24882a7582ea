"""Run configuration: flat key=value files with an include directive."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

DATA_ROOT_ENV = "VSPLAT_DATA_ROOT"


@dataclass
class RunConfig:
    # seeds / determinism
    seed: int = 0
    threads: int = 1
    # model
    d_e: int = 64
    n_stages: int = 4          # ELF blocks in the backbone
    translator_blocks: int = 1  # ELF blocks in the translator bottleneck
    heads: int = 4
    cc: int = 2
    cs: int = 1
    patch: int = 8
    band_px: float = 12.0      # 1.5x patch size
    mlp_ratio: int = 4
    unet_widths: tuple = (64, 128, 256)
    depth_bins: int = 32       # B depth candidates
    sh_degree: int = 1         # l
    gaussians_per_pixel: int = 1  # N
    near: float = 0.5
    far: float = 100.0
    # losses
    lambda1: float = 1000.0
    lambda2: float = 0.1
    lambda3: float = 100.0
    lambda4: float = 0.001
    depth_loss_weight: float = 1.0
    cls_loss_weight: float = 0.1
    chamfer_weight: float = 0.0
    # optimizer
    lr: float = 1e-3
    horizon: int = 2000
    encoder_pretrain_steps: int = 400
    backbone_steps: int = 1200
    translator_steps: int = 1200
    # data
    resolution: int = 64
    n_ref: int = 6
    n_vrt: int = 6
    n_vrt_candidates: int = 12
    n_nvs: int = 2
    dataset_path: str = ""
    backbone_ckpt: str = ""
    pipeline_ckpt: str = ""
    # toggles
    dng: bool = False
    invert_overlap: bool = False
    zbuffer_mode: str = "expected"

    def validate(self):
        if not (self.lambda1 > 0 and self.lambda3 > 0):
            raise ConfigError("lambda1 and lambda3 must be positive")
        if not self.lambda2 > 0:
            raise ConfigError("lambda2 must be positive")
        if self.lambda4 < 0:
            raise ConfigError("lambda4 must be non-negative")
        if self.resolution % self.patch:
            raise ConfigError(f"resolution {self.resolution} not divisible by patch {self.patch}")
        if self.d_e % self.heads:
            raise ConfigError(f"heads {self.heads} must divide d_e {self.d_e}")
        if self.cc < 1 or self.cs < 1:
            raise ConfigError("cc and cs must be >= 1")
        if self.translator_blocks != 1:
            raise ConfigError("translator uses exactly one bottleneck ELF block")
        if not 0 <= self.sh_degree <= 3:
            raise ConfigError("sh_degree must be in [0, 3]")
        if self.gaussians_per_pixel < 1:
            raise ConfigError("gaussians_per_pixel must be >= 1")
        if self.depth_bins < 2:
            raise ConfigError("depth_bins must be >= 2")
        if not (0 < self.near < self.far):
            raise ConfigError("need 0 < near < far")
        if self.zbuffer_mode not in ("expected", "hard"):
            raise ConfigError(f"unknown zbuffer_mode {self.zbuffer_mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if len(self.unet_widths) != 3:
            raise ConfigError("unet_widths needs exactly 3 entries")
        return self

    @property
    def grid(self) -> tuple[int, int]:
        g = self.resolution // self.patch
        return (g, g)

    def resolved_dataset_path(self) -> Path:
        p = Path(self.dataset_path)
        root = os.environ.get(DATA_ROOT_ENV)
        if not p.is_absolute() and root:
            return Path(root) / p
        return p

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["unet_widths"] = list(self.unet_widths)
        return json.dumps(d)

    @staticmethod
    def from_json(blob: str) -> "RunConfig":
        d = json.loads(blob)
        d["unet_widths"] = tuple(d["unet_widths"])
        return RunConfig(**d).validate()


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(name: str, raw: str):
    f = _FIELDS[name]
    raw = raw.strip()
    try:
        if f.type in ("int",):
            return int(raw)
        if f.type in ("float",):
            return float(raw)
        if f.type in ("bool",):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if f.type in ("tuple",):
            return tuple(int(x) for x in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from exc


def _parse_into(path: Path, values: dict, stack: tuple):
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.resolve() in stack:
        raise ConfigError(f"config include cycle at {path}")
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            target = (path.parent / line[len("include "):].strip()).resolve()
            _parse_into(target, values, stack + (path.resolve(),))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        values[key] = _convert(key, raw)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Config from an optional file plus programmatic overrides."""
    values: dict = {}
    if path is not None:
        _parse_into(Path(path), values, ())
    if overrides:
        for k, v in overrides.items():
            if k not in _FIELDS:
                raise ConfigError(f"unknown config key {k!r}")
            values[k] = v
    return RunConfig(**values).validate()
