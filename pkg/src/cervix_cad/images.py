"""Image loading, resizing and saving.

All pipeline stages exchange images as uint8 RGB arrays of shape
``(height, width, 3)``. Network input is 224x224, matching the
backbones' expected receptive field.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from cervix_cad.errors import DataError

INPUT_SIZE = 224  # side length fed to the descriptor backbones


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an image file to a uint8 RGB array of shape (h, w, 3)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise DataError(f"image not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"decoded image has unexpected shape {arr.shape}: {path}")
    return arr


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a uint8 RGB array to disk; format follows the extension."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected uint8 (h, w, 3) image, got {image.dtype} {image.shape}")
    try:
        Image.fromarray(image, mode="RGB").save(path)
    except OSError as exc:
        raise DataError(f"cannot write image {path}: {exc}") from exc


def resize_image(image: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """Bilinear-resize an RGB image to a square of side ``size``."""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected uint8 (h, w, 3) image, got {image.dtype} {image.shape}")
    if image.shape[0] == size and image.shape[1] == size:
        return image
    resized = Image.fromarray(image, mode="RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)
