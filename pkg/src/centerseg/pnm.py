"""8-bit PPM/PGM image I/O (thin wrappers over Pillow)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _read(path: str | Path, mode: str) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != mode:
            raise ValueError(f"{path}: expected {mode} image, got {img.mode}")
        return np.asarray(img, dtype=np.uint8).copy()


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """``rgb`` is ``[H, W, 3]`` uint8."""
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), "RGB").save(path, format="PPM")


def read_ppm(path: str | Path) -> np.ndarray:
    return _read(path, "RGB")


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(gray, dtype=np.uint8), "L").save(path, format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    return _read(path, "L")


def image_to_array(rgb: np.ndarray) -> np.ndarray:
    """uint8 ``[H, W, 3]`` -> float ``[3, H, W]`` in [0, 1]."""
    return rgb.transpose(2, 0, 1).astype(np.float64) / 255.0
