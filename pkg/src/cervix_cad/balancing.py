"""Class balancing by augmentation.

Binary scheme: one stage; every minority class is augmented up to the
majority count. Ternary scheme: two stages; stage one brings every
class to five times the smallest class count using exact rotate/flip
copies, stage two multiplies every class by five again with random
jitter, so the final target is twenty-five times the smallest count.

Plans are pure arithmetic over class counts. Each augmented copy is
described by the class label, the index of its source image within the
class, a transform chain, and a seed, so executing a plan is exactly
reproducible. Classes that already exceed a stage target (impossible
for binary, rare for ternary) are deterministically subsampled to it.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cervix_cad.errors import ConfigError, DataError
from cervix_cad.images import load_image, save_image
from cervix_cad.manifest import ManifestRow
from cervix_cad.transforms import JITTER_TOKEN, STAGE1_ORDER, apply_chain

SCHEMES = ("binary", "ternary")

# Jitter seeds drawn by the planner; 0 is reserved for rows with no
# stochastic transform.
_SEED_RANGE = (1, 2**63)


@dataclass(frozen=True)
class PlanEntry:
    """One augmented image to generate: apply ``chain`` (in order) to
    the ``source_index``-th image of class ``label``."""

    label: str
    source_index: int
    chain: tuple[str, ...]
    seed: int

    @property
    def provenance(self) -> str:
        return "|".join(self.chain)


@dataclass
class BalancingPlan:
    """Everything needed to rebalance a dataset deterministically."""

    scheme: str
    stage_targets: tuple[int, ...]  # per-class count after each stage
    keep: dict[str, list[int]] = field(default_factory=dict)  # retained originals
    entries: list[PlanEntry] = field(default_factory=list)

    @property
    def target_per_class(self) -> int:
        return self.stage_targets[-1]

    def planned_counts(self, class_counts: dict[str, int]) -> dict[str, int]:
        """Per-class counts the plan will produce (originals + copies)."""
        added = Counter(e.label for e in self.entries)
        return {
            label: len(self.keep.get(label, range(count))) + added[label]
            for label, count in class_counts.items()
        }


def _stage1_chain(round_index: int, rng: np.random.Generator) -> tuple[tuple[str, ...], int]:
    """Chain for the ``round_index``-th expansion pass over a class.

    The first four rounds are the exact rotate/flip ops; further rounds
    (needed only when a class is outnumbered more than fivefold) fall
    back to seeded jitter so copies stay distinct.
    """
    if round_index < len(STAGE1_ORDER):
        return (STAGE1_ORDER[round_index],), 0
    return (JITTER_TOKEN,), int(rng.integers(*_SEED_RANGE))


def _expand_class(
    label: str, count: int, target: int, rng: np.random.Generator
) -> list[PlanEntry]:
    """Entries bringing a class of ``count`` sources up to ``target``."""
    entries = []
    for t in range(target - count):
        round_index, source_index = divmod(t, count)
        chain, seed = _stage1_chain(round_index, rng)
        entries.append(PlanEntry(label, source_index, chain, seed))
    return entries


def plan_balancing(
    class_counts: dict[str, int], scheme: str, rng_seed: int
) -> BalancingPlan:
    """Build the deterministic augmentation plan for a dataset.

    ``class_counts`` maps label to source-image count; iteration order
    fixes the order of plan entries and of RNG consumption.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown balancing scheme {scheme!r}")
    expected = 2 if scheme == "binary" else 3
    if len(class_counts) != expected:
        raise DataError(
            f"{scheme} scheme needs {expected} classes, got {len(class_counts)}"
        )
    for label, count in class_counts.items():
        if count < 1:
            raise DataError(f"class {label!r} has no images")

    rng = np.random.default_rng(rng_seed)

    if scheme == "binary":
        target = max(class_counts.values())
        plan = BalancingPlan("binary", (target,))
        for label, count in class_counts.items():
            plan.keep[label] = list(range(count))
            plan.entries.extend(_expand_class(label, count, target, rng))
        return plan

    stage1 = 5 * min(class_counts.values())
    stage2 = 5 * stage1
    plan = BalancingPlan("ternary", (stage1, stage2))
    stage1_entries: dict[str, list[PlanEntry]] = {}
    for label, count in class_counts.items():
        if count > stage1:
            # Surplus class: subsample originals to the stage-1 target.
            chosen = rng.permutation(count)[:stage1]
            plan.keep[label] = sorted(int(i) for i in chosen)
            stage1_entries[label] = []
        else:
            plan.keep[label] = list(range(count))
            stage1_entries[label] = _expand_class(label, count, stage1, rng)
        plan.entries.extend(stage1_entries[label])

    # Stage two: four jitter copies of every stage-1 image, rep-major.
    for label in class_counts:
        stage1_items = [
            (idx, ()) for idx in plan.keep[label]
        ] + [(e.source_index, e.chain) for e in stage1_entries[label]]
        for _rep in range(4):
            for source_index, chain in stage1_items:
                seed = int(rng.integers(*_SEED_RANGE))
                plan.entries.append(
                    PlanEntry(label, source_index, chain + (JITTER_TOKEN,), seed)
                )
    return plan


def execute_plan(
    plan: BalancingPlan,
    source_rows: Sequence[ManifestRow],
    images_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
) -> list[ManifestRow]:
    """Generate the plan's augmented images and return the balanced
    manifest rows (kept originals plus augmented copies, grouped by
    class in source order).

    ``images_dir`` is the directory source-row paths are relative to;
    augmented images are written under ``out_dir`` next to their
    sources. Rerunning with the same plan rewrites identical files.
    """
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)

    by_class: dict[str, list[ManifestRow]] = {}
    for row in source_rows:
        by_class.setdefault(row.label, []).append(row)

    for label in plan.keep:
        if label not in by_class:
            raise DataError(f"plan references class {label!r} absent from manifest")

    out_rows: list[ManifestRow] = []
    entries_by_class: dict[str, list[PlanEntry]] = {}
    for entry in plan.entries:
        entries_by_class.setdefault(entry.label, []).append(entry)

    for label, class_rows in by_class.items():
        kept = plan.keep.get(label, list(range(len(class_rows))))
        for idx in kept:
            if idx >= len(class_rows):
                raise DataError(
                    f"plan references source {idx} of class {label!r}, "
                    f"which has only {len(class_rows)} images"
                )
            out_rows.append(class_rows[idx])

        cache: dict[int, np.ndarray] = {}
        for counter, entry in enumerate(entries_by_class.get(label, [])):
            if entry.source_index >= len(class_rows):
                raise DataError(
                    f"plan references source {entry.source_index} of class "
                    f"{label!r}, which has only {len(class_rows)} images"
                )
            src_row = class_rows[entry.source_index]
            if entry.source_index not in cache:
                cache[entry.source_index] = load_image(images_dir / src_row.path)
            image = apply_chain(cache[entry.source_index], entry.provenance, entry.seed)

            src = Path(src_row.path)
            rel = src.with_name(f"{src.stem}__aug{counter:05d}.png")
            save_image(out_dir / rel, image)
            out_rows.append(
                ManifestRow(str(rel), label, entry.provenance, entry.seed)
            )

    counts = Counter(row.label for row in out_rows)
    for label, n in counts.items():
        if n != plan.target_per_class:
            raise DataError(
                f"balancing produced {n} images for class {label!r}, "
                f"expected {plan.target_per_class}"
            )
    return out_rows
