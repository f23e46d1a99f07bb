"""Shared non-fixture test helpers, importable from any test module."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from onnx_builder import tiny_backbone  # noqa: F401  (re-exported)


def make_image(seed: int, size: int = 224) -> np.ndarray:
    """Deterministic random RGB uint8 image."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)


def write_class_dirs(
    root: Path, counts: dict[str, int], size: int = 64, seed: int = 0
) -> Path:
    """Build an input tree with one PNG subdirectory per class."""
    from cervix_cad.images import save_image

    rng = np.random.default_rng(seed)
    for label, count in counts.items():
        class_dir = root / label
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            save_image(class_dir / f"{label}_{i:03d}.png", img)
    return root
