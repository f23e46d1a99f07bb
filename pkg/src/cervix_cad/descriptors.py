"""Descriptor extraction and the binary descriptor cache.

A backbone is a serialized inference graph whose head was removed at
the global-average-pool cut, so a 224x224 RGB image maps to a
2048-length descriptor. Input normalization constants live inside the
graph; this module feeds raw pixel values.

Cache file layout (little-endian throughout): magic ``CDC1``; one byte
variant code (0=rn50, 1=rn101, 2=rn152, 3=fused); u32 row count n; u32
descriptor length d; n*d float32 values row-major; then n image ids,
each a u32 byte length followed by UTF-8 text. Row i of the matrix
belongs to image id i, which equals the manifest path of the image.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from cervix_cad.errors import DataError
from cervix_cad.images import INPUT_SIZE, load_image
from cervix_cad.manifest import ManifestRow
from cervix_cad.onnx_graph import OnnxGraph, load_graph

DESCRIPTOR_LEN = 2048

CACHE_MAGIC = b"CDC1"
VARIANT_CODES = {"rn50": 0, "rn101": 1, "rn152": 2, "fused": 3}
CODE_VARIANTS = {code: name for name, code in VARIANT_CODES.items()}
BACKBONE_VARIANTS = ("rn50", "rn101", "rn152")


@dataclass
class DescriptorCache:
    """An (n, d) float32 descriptor matrix aligned with its image ids."""

    variant: str
    matrix: np.ndarray
    image_ids: list[str]

    def __post_init__(self):
        if self.variant not in VARIANT_CODES:
            raise DataError(f"unknown cache variant {self.variant!r}")
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise DataError(f"cache matrix must be 2-D, got shape {self.matrix.shape}")
        if self.matrix.shape[0] != len(self.image_ids):
            raise DataError(
                f"cache has {self.matrix.shape[0]} rows but "
                f"{len(self.image_ids)} image ids"
            )


def write_cache(path: str | os.PathLike, cache: DescriptorCache) -> None:
    """Serialize a cache; the write is atomic (temp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, d = cache.matrix.shape
    parts = [
        CACHE_MAGIC,
        struct.pack("<BII", VARIANT_CODES[cache.variant], n, d),
        cache.matrix.astype("<f4", copy=False).tobytes(),
    ]
    for image_id in cache.image_ids:
        encoded = image_id.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_cache(path: str | os.PathLike) -> DescriptorCache:
    """Parse a cache file, validating the header and structure."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read cache {path}: {exc}") from exc
    header_len = len(CACHE_MAGIC) + struct.calcsize("<BII")
    if len(buf) < header_len or buf[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise DataError(f"cache {path} is invalid: bad magic")
    code, n, d = struct.unpack_from("<BII", buf, len(CACHE_MAGIC))
    if code not in CODE_VARIANTS:
        raise DataError(f"cache {path} is invalid: unknown variant code {code}")
    matrix_bytes = n * d * 4
    if len(buf) < header_len + matrix_bytes:
        raise DataError(f"cache {path} is invalid: truncated matrix")
    matrix = np.frombuffer(
        buf, dtype="<f4", count=n * d, offset=header_len
    ).reshape(n, d).copy()
    pos = header_len + matrix_bytes
    image_ids = []
    for _ in range(n):
        if pos + 4 > len(buf):
            raise DataError(f"cache {path} is invalid: truncated id index")
        (length,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + length > len(buf):
            raise DataError(f"cache {path} is invalid: truncated id index")
        image_ids.append(buf[pos : pos + length].decode("utf-8"))
        pos += length
    if pos != len(buf):
        raise DataError(f"cache {path} is invalid: {len(buf) - pos} trailing bytes")
    return DescriptorCache(CODE_VARIANTS[code], matrix, image_ids)


@dataclass
class Backbone:
    """A loaded head-removed inference graph for one network variant."""

    variant: str
    graph: OnnxGraph


def load_backbone(path: str | os.PathLike, variant: str) -> Backbone:
    """Load a serialized backbone and verify its descriptor length.

    A declared output other than 2048 values means the graph still has
    a classification head (or is not a descriptor graph at all).
    """
    if variant not in BACKBONE_VARIANTS:
        raise DataError(f"unknown backbone variant {variant!r}")
    graph = load_graph(path)
    shape = graph.output_info.shape
    flat = [s for s in shape if s is not None and s != 1]
    if flat != [DESCRIPTOR_LEN]:
        raise DataError(
            f"graph {path} declares output shape {shape}, expected "
            f"{DESCRIPTOR_LEN} descriptor values; was the classifier "
            f"head removed before export?"
        )
    return Backbone(variant, graph)


def extract(backbone: Backbone, image: np.ndarray) -> np.ndarray:
    """Descriptor for one 224x224 RGB image.

    The image is fed as raw [0, 255] values in NCHW float32 layout; the
    graph applies its own normalization.
    """
    if image.shape != (INPUT_SIZE, INPUT_SIZE, 3) or image.dtype != np.uint8:
        raise DataError(
            f"extract needs a uint8 {INPUT_SIZE}x{INPUT_SIZE}x3 image, "
            f"got {image.dtype} {image.shape}"
        )
    batch = image.astype(np.float32).transpose(2, 0, 1)[np.newaxis]
    outputs = backbone.graph.run({backbone.graph.input_info.name: batch})
    vector = next(iter(outputs.values())).reshape(-1)
    if vector.shape != (DESCRIPTOR_LEN,):
        raise DataError(
            f"graph produced {vector.shape[0]} values, expected {DESCRIPTOR_LEN}"
        )
    if not np.all(np.isfinite(vector)):
        raise DataError("graph produced non-finite descriptor values")
    return vector.astype(np.float32)


def extract_all(
    backbone: Backbone,
    rows: Sequence[ManifestRow],
    images_dir: str | os.PathLike,
    cache_path: str | os.PathLike,
) -> DescriptorCache:
    """Extract descriptors for every manifest row into a cache file.

    If a cache already exists it must match this manifest exactly, in
    which case nothing is recomputed; any other existing file is an
    error rather than a silent recompute.
    """
    cache_path = Path(cache_path)
    images_dir = Path(images_dir)
    ids = [row.path for row in rows]
    if cache_path.exists():
        existing = read_cache(cache_path)  # raises if corrupt
        if (
            existing.variant == backbone.variant
            and existing.matrix.shape == (len(ids), DESCRIPTOR_LEN)
            and existing.image_ids == ids
        ):
            return existing
        raise DataError(
            f"cache {cache_path} exists but does not match the manifest "
            f"(variant {existing.variant}, {len(existing.image_ids)} rows); "
            f"delete it to re-extract"
        )
    matrix = np.empty((len(rows), DESCRIPTOR_LEN), dtype=np.float32)
    for i, row in enumerate(rows):
        matrix[i] = extract(backbone, load_image(images_dir / row.path))
    cache = DescriptorCache(backbone.variant, matrix, ids)
    write_cache(cache_path, cache)
    return cache
