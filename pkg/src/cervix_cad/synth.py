"""Synthetic fixture datasets: Gaussian-blob descriptors.

Generates a manifest plus three descriptor caches directly, bypassing
images and backbones, so the evaluation pipeline can be exercised
end-to-end without model files. Class means differ only in a chosen
number of informative dimensions (spread evenly over the three
descriptor blocks) and are rescaled so the smallest pairwise mean
distance equals ``separation`` times the within-class standard
deviation.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from cervix_cad.descriptors import DESCRIPTOR_LEN, DescriptorCache, write_cache
from cervix_cad.errors import ConfigError
from cervix_cad.fusion import FUSED_LEN
from cervix_cad.manifest import (
    BINARY_CLASSES,
    TERNARY_CLASSES,
    ManifestRow,
    write_manifest,
)
from cervix_cad.transforms import SYNTHETIC_TOKEN

CACHE_NAMES = {"rn50": "rn50.cdc", "rn101": "rn101.cdc", "rn152": "rn152.cdc"}


def informative_dims(count: int) -> np.ndarray:
    """Indices of the informative dimensions: the leading columns of
    each 2048-wide block, dealt as evenly as the count allows."""
    if not 1 <= count <= FUSED_LEN:
        raise ConfigError(f"informative dimension count must be in [1, {FUSED_LEN}]")
    per_block = [count // 3 + (1 if b < count % 3 else 0) for b in range(3)]
    dims = []
    for b, width in enumerate(per_block):
        dims.extend(b * DESCRIPTOR_LEN + j for j in range(width))
    return np.array(dims, dtype=np.int64)


def make_blobs(
    scheme: str,
    samples_per_class: int,
    separation: float,
    informative: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Sample the descriptor matrix: (values, labels, classes).

    Within-class noise is unit-variance Gaussian on every dimension;
    the informative dimensions additionally carry class-mean offsets
    with minimum pairwise distance ``separation``.
    """
    if scheme == "binary":
        classes = BINARY_CLASSES
    elif scheme == "ternary":
        classes = TERNARY_CLASSES
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if samples_per_class < 1:
        raise ConfigError("samples_per_class must be positive")
    if separation <= 0:
        raise ConfigError("separation must be positive")

    dims = informative_dims(informative)
    rng = np.random.default_rng(seed)
    n_classes = len(classes)

    offsets = rng.normal(size=(n_classes, dims.size))
    pair_dists = [
        np.linalg.norm(offsets[i] - offsets[j])
        for i in range(n_classes)
        for j in range(i + 1, n_classes)
    ]
    offsets *= separation / min(pair_dists)

    means = np.zeros((n_classes, FUSED_LEN))
    means[:, dims] = offsets

    labels = np.repeat(np.arange(n_classes), samples_per_class)
    values = means[labels] + rng.standard_normal((labels.size, FUSED_LEN))
    return values, labels, classes


def write_synthetic(
    out_dir: str | os.PathLike,
    scheme: str,
    samples_per_class: int,
    separation: float,
    informative: int = FUSED_LEN,
    seed: int = 0,
) -> Path:
    """Write manifest plus the three per-block caches; returns the
    manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values, labels, classes = make_blobs(
        scheme, samples_per_class, separation, informative, seed
    )
    rows = [
        ManifestRow(
            f"synthetic/{classes[label]}_{i:05d}", classes[label], SYNTHETIC_TOKEN, 0
        )
        for i, label in enumerate(labels)
    ]
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, rows)
    ids = [row.path for row in rows]
    for b, variant in enumerate(("rn50", "rn101", "rn152")):
        block = values[:, b * DESCRIPTOR_LEN : (b + 1) * DESCRIPTOR_LEN]
        cache = DescriptorCache(variant, block.astype(np.float32), ids)
        write_cache(out_dir / CACHE_NAMES[variant], cache)
    return manifest_path
