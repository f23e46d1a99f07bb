"""Descriptor fusion and min-max feature scaling.

Fusion concatenates the three backbone descriptor sets row-wise into
6144-length vectors. Scaling maps each feature to
``(s - s_min) / (s_max - s_min)`` with statistics taken from training
rows only; held-out values may therefore land outside [0, 1], which is
intentional (the map stays affine and strictly monotone).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cervix_cad.descriptors import DESCRIPTOR_LEN, DescriptorCache
from cervix_cad.errors import DataError
from cervix_cad.manifest import ManifestRow, label_indices

FUSED_LEN = 3 * DESCRIPTOR_LEN


@dataclass
class FeatureMatrix:
    """Per-sample feature rows with aligned class labels.

    ``values`` is (n, d) float64, ``labels`` is (n,) integer class
    indices into ``classes``.
    """

    values: np.ndarray
    labels: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got {self.values.shape}")
        if self.values.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.values.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("feature matrix contains non-finite values")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= len(self.classes)
        ):
            raise DataError("labels out of range for the declared classes")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def subset(self, indices: np.ndarray) -> "FeatureMatrix":
        """Row subset preserving label alignment."""
        return FeatureMatrix(self.values[indices], self.labels[indices], self.classes)

    def block(self, start: int, stop: int) -> "FeatureMatrix":
        """Column slice (for per-backbone blocks of a fused matrix)."""
        return FeatureMatrix(self.values[:, start:stop], self.labels, self.classes)


def fuse(
    c50: DescriptorCache,
    c101: DescriptorCache,
    c152: DescriptorCache,
    rows: Sequence[ManifestRow],
) -> FeatureMatrix:
    """Concatenate the three descriptor sets in rn50, rn101, rn152 order.

    All caches must be aligned with the manifest: identical image-id
    sequences. The first mismatching id is named in the error.
    """
    manifest_ids = [row.path for row in rows]
    for cache in (c50, c101, c152):
        if cache.matrix.shape[1] != DESCRIPTOR_LEN:
            raise DataError(
                f"{cache.variant} cache has d={cache.matrix.shape[1]}, "
                f"expected {DESCRIPTOR_LEN}"
            )
        if cache.image_ids != manifest_ids:
            for i, (got, want) in enumerate(zip(cache.image_ids, manifest_ids)):
                if got != want:
                    raise DataError(
                        f"{cache.variant} cache misaligned with manifest at row "
                        f"{i}: cache has {got!r}, manifest has {want!r}"
                    )
            raise DataError(
                f"{cache.variant} cache has {len(cache.image_ids)} rows, "
                f"manifest has {len(manifest_ids)}"
            )
    values = np.hstack(
        [c.matrix.astype(np.float64) for c in (c50, c101, c152)]
    )
    labels, classes = label_indices(rows)
    return FeatureMatrix(values, labels, classes)


@dataclass
class MinMaxScaler:
    """Per-feature training minima and maxima."""

    mins: np.ndarray = field(default=None)
    maxs: np.ndarray = field(default=None)

    def fit(self, values: np.ndarray) -> "MinMaxScaler":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DataError("scaler needs a non-empty 2-D matrix")
        self.mins = values.min(axis=0)
        self.maxs = values.max(axis=0)
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        if self.mins is None:
            raise DataError("scaler is not fitted")
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.mins.shape[0]:
            raise DataError(
                f"scaler fitted on d={self.mins.shape[0]}, "
                f"got matrix of shape {values.shape}"
            )
        span = self.maxs - self.mins
        # Constant features carry no information; they map to 0, the
        # image of s_min.
        safe = np.where(span == 0, 1.0, span)
        out = (values - self.mins) / safe
        out[:, span == 0] = 0.0
        return out


def fit_scaler(train: FeatureMatrix) -> MinMaxScaler:
    """Fit per-feature min/max statistics on training rows only."""
    return MinMaxScaler().fit(train.values)


def apply_scaler(scaler: MinMaxScaler, m: FeatureMatrix) -> FeatureMatrix:
    """Rescale a matrix with previously fitted statistics (no clamping)."""
    return FeatureMatrix(scaler.transform(m.values), m.labels, m.classes)
