"""Image file IO: 8-bit PNG for color, little-endian PFM for float buffers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, MissingFile


def save_png(path, rgb: np.ndarray):
    """rgb: (3, H, W) float in [0, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.moveaxis(rgb, 0, -1), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"image not found: {path}")
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(arr, -1, 0)


def save_pfm(path, data: np.ndarray):
    """Grayscale (H, W) or color (3, H, W) float map, little-endian PFM.

    PFM stores scanlines bottom-to-top; a negative scale marks endianness.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3:
        img = np.moveaxis(data, 0, -1)
        header = b"PF"
    elif data.ndim == 2:
        img = data
        header = b"Pf"
    else:
        raise DataError(f"pfm expects 2D or (3, H, W) data, got shape {data.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(img[::-1].astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"pfm not found: {path}")
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise DataError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * (3 if header == b"PF" else 1)
        data = np.frombuffer(fh.read(), dtype=dtype, count=count)
    if header == b"PF":
        img = data.reshape(h, w, 3)[::-1]
        return np.moveaxis(img, -1, 0).astype(np.float64)
    return data.reshape(h, w)[::-1].astype(np.float64)
