"""Dataset manifests.

A manifest is a tab-separated file with one row per image::

    <relative-path>\t<label>\t<provenance>\t<seed>

``label`` is one of the literal class names (``normal``/``abnormal`` for
the binary task, ``type1``/``type2``/``type3`` for the ternary one),
``provenance`` is ``original`` for source images or a textual transform
chain for augmented copies, and ``seed`` is the integer that seeded the
row's stochastic transforms (0 for deterministic rows).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cervix_cad.errors import DataError

# Class order is fixed: index 1 ("abnormal") is the positive class of the
# binary task, and the ternary types keep their numeric order.
BINARY_CLASSES = ("normal", "abnormal")
TERNARY_CLASSES = ("type1", "type2", "type3")

N_COLUMNS = 4


@dataclass(frozen=True)
class ManifestRow:
    """One image: where it lives, what it is, and how it was made."""

    path: str
    label: str
    provenance: str
    seed: int

    def to_line(self) -> str:
        return f"{self.path}\t{self.label}\t{self.provenance}\t{self.seed}"


def classes_for(labels: Iterable[str]) -> tuple[str, ...]:
    """Return the class tuple a set of labels belongs to.

    Raises
    ------
    DataError
        If labels mix the binary and ternary families or contain an
        unknown name.
    """
    seen = set(labels)
    if not seen:
        raise DataError("manifest contains no rows")
    if seen <= set(BINARY_CLASSES):
        return BINARY_CLASSES
    if seen <= set(TERNARY_CLASSES):
        return TERNARY_CLASSES
    bad = sorted(seen - set(BINARY_CLASSES) - set(TERNARY_CLASSES))
    if bad:
        raise DataError(f"unknown labels: {', '.join(bad)}")
    raise DataError("manifest mixes binary and ternary labels")


def read_manifest(path: str | os.PathLike) -> list[ManifestRow]:
    """Parse a manifest TSV, validating structure row by row."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc

    rows: list[ManifestRow] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != N_COLUMNS:
            raise DataError(
                f"{path}:{lineno}: expected {N_COLUMNS} tab-separated "
                f"columns, got {len(parts)}"
            )
        rel, label, provenance, seed_text = parts
        if not rel:
            raise DataError(f"{path}:{lineno}: empty image path")
        try:
            seed = int(seed_text)
        except ValueError:
            raise DataError(
                f"{path}:{lineno}: seed column must be an integer, "
                f"got {seed_text!r}"
            ) from None
        rows.append(ManifestRow(rel, label, provenance, seed))

    classes_for(row.label for row in rows)  # validates the label family
    return rows


def write_manifest(path: str | os.PathLike, rows: Sequence[ManifestRow]) -> None:
    """Write rows as a manifest TSV (one row per line, trailing newline)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "".join(row.to_line() + "\n" for row in rows)
    path.write_text(body, encoding="utf-8")


def label_indices(
    rows: Sequence[ManifestRow], classes: Sequence[str] | None = None
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Encode row labels as integer class indices.

    Returns the ``(labels, classes)`` pair where ``labels[i]`` indexes
    into ``classes``.
    """
    if classes is None:
        classes = classes_for(row.label for row in rows)
    lookup = {name: i for i, name in enumerate(classes)}
    try:
        encoded = np.array([lookup[row.label] for row in rows], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not in classes {classes}") from None
    return encoded, tuple(classes)


def class_counts(rows: Sequence[ManifestRow]) -> dict[str, int]:
    """Count rows per class label, keyed in class order."""
    labels, classes = label_indices(rows)
    return {name: int(np.sum(labels == i)) for i, name in enumerate(classes)}
