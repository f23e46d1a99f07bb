"""Image transforms used for augmentation.

Two families:

* exact, deterministic ops (quarter-turn rotations, flips) used by the
  first balancing stage; these never interpolate, so replaying them is
  bit-exact;
* a seeded random jitter (contrast, brightness, small rotation, small
  translation) used by the second stage.

A transform chain is recorded as a ``|``-joined provenance string (for
example ``rot90|jitter``) plus an integer seed, and can be replayed
exactly with :func:`apply_chain`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from cervix_cad.errors import DataError

# Jitter parameter ranges. Rotation is in degrees, brightness in
# intensity counts, translation in whole pixels per axis.
JITTER_CONTRAST = (0.8, 1.2)
JITTER_BRIGHTNESS = (-40.0, 40.0)
JITTER_ROTATION = (-15.0, 15.0)
JITTER_TRANSLATION = 10

KINDS = ("rotate", "flip_h", "flip_v", "brightness", "contrast", "translate")


@dataclass(frozen=True)
class TransformSpec:
    """One parameterized transform step."""

    kind: str
    rotate_degrees: float = 0.0
    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    translate_dx: int = 0
    translate_dy: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown transform kind {self.kind!r}")
        if self.contrast_factor <= 0:
            raise DataError("contrast_factor must be positive")


def _check_image(image: np.ndarray) -> None:
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected uint8 (h, w, 3) image, got {image.dtype} {image.shape}")


def rotate(image: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Rotate counterclockwise; quarter turns are exact, other angles
    use bilinear resampling with black fill on the same-size canvas.
    """
    _check_image(image)
    quarter, rem = divmod(angle_degrees % 360.0, 90.0)
    if rem == 0.0:
        return np.ascontiguousarray(np.rot90(image, int(quarter)))
    img = Image.fromarray(image, mode="RGB").rotate(
        angle_degrees, resample=Image.BILINEAR, fillcolor=(0, 0, 0)
    )
    return np.asarray(img, dtype=np.uint8)


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    """Mirror left-right (exact)."""
    _check_image(image)
    return np.ascontiguousarray(image[:, ::-1])


def flip_vertical(image: np.ndarray) -> np.ndarray:
    """Mirror top-bottom (exact)."""
    _check_image(image)
    return np.ascontiguousarray(image[::-1])


def adjust_brightness(image: np.ndarray, delta: float) -> np.ndarray:
    """Add ``delta`` to every channel. The delta itself clamps to
    [-255, 255] and pixel values clamp to [0, 255].
    """
    _check_image(image)
    delta = min(255.0, max(-255.0, float(delta)))
    out = image.astype(np.float64) + delta
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    """Scale pixel deviations from the channel midpoint 128 by ``factor``."""
    _check_image(image)
    if factor <= 0:
        raise DataError("contrast factor must be positive")
    out = (image.astype(np.float64) - 128.0) * factor + 128.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift by whole pixels (positive = right/down), filling with black."""
    _check_image(image)
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    src = image[
        max(0, -dy) : min(h, h - dy),
        max(0, -dx) : min(w, w - dx),
    ]
    out[max(0, dy) : min(h, h + dy), max(0, dx) : min(w, w + dx)] = src
    return out


def apply_transform(image: np.ndarray, spec: TransformSpec, seed: int = 0) -> np.ndarray:
    """Apply one transform step. Deterministic for a fixed (spec, seed);
    the seed is accepted for interface uniformity and unused here since
    every kind is fully parameterized.
    """
    if spec.kind == "rotate":
        return rotate(image, spec.rotate_degrees)
    if spec.kind == "flip_h":
        return flip_horizontal(image)
    if spec.kind == "flip_v":
        return flip_vertical(image)
    if spec.kind == "brightness":
        return adjust_brightness(image, spec.brightness_delta)
    if spec.kind == "contrast":
        return adjust_contrast(image, spec.contrast_factor)
    if spec.kind == "translate":
        return translate(image, spec.translate_dx, spec.translate_dy)
    raise DataError(f"unknown transform kind {spec.kind!r}")


def draw_jitter(rng: np.random.Generator) -> list[TransformSpec]:
    """Draw the stage-two random chain: contrast, brightness, rotation,
    translation, with parameters uniform over the module ranges.

    The draw order is part of the format: replaying with the same seed
    must reproduce the same parameters.
    """
    factor = rng.uniform(*JITTER_CONTRAST)
    delta = rng.uniform(*JITTER_BRIGHTNESS)
    angle = rng.uniform(*JITTER_ROTATION)
    dx, dy = (
        int(v) for v in rng.integers(-JITTER_TRANSLATION, JITTER_TRANSLATION + 1, size=2)
    )
    return [
        TransformSpec("contrast", contrast_factor=factor),
        TransformSpec("brightness", brightness_delta=delta),
        TransformSpec("rotate", rotate_degrees=angle),
        TransformSpec("translate", translate_dx=dx, translate_dy=dy),
    ]


def random_jitter(image: np.ndarray, seed: int) -> np.ndarray:
    """Apply the seeded stage-two random chain."""
    rng = np.random.default_rng(seed)
    out = image
    for spec in draw_jitter(rng):
        out = apply_transform(out, spec)
    return out


# Provenance tokens for deterministic single-step chains.
TOKEN_SPECS: dict[str, TransformSpec] = {
    "rot90": TransformSpec("rotate", rotate_degrees=90.0),
    "rot180": TransformSpec("rotate", rotate_degrees=180.0),
    "rot270": TransformSpec("rotate", rotate_degrees=270.0),
    "fliph": TransformSpec("flip_h"),
    "flipv": TransformSpec("flip_v"),
}

# Stage-one expansion ops in application order; together with the
# identity they give the fivefold expansion of the smallest class.
STAGE1_ORDER = ("rot90", "rot180", "rot270", "fliph")

JITTER_TOKEN = "jitter"
ORIGINAL_TOKEN = "original"
SYNTHETIC_TOKEN = "synthetic"


def apply_chain(image: np.ndarray, provenance: str, seed: int) -> np.ndarray:
    """Replay a provenance chain on a source image.

    ``provenance`` is ``original`` or a ``|``-joined sequence of
    deterministic tokens and ``jitter``; ``seed`` feeds the jitter RNG.
    """
    out = image
    for token in provenance.split("|"):
        if token == ORIGINAL_TOKEN:
            continue
        if token in TOKEN_SPECS:
            out = apply_transform(out, TOKEN_SPECS[token])
        elif token == JITTER_TOKEN:
            out = random_jitter(out, seed)
        else:
            raise DataError(f"unknown transform token {token!r} in provenance {provenance!r}")
    return out
