"""Pipeline orchestration: dataset preparation and the full run.

A full run executes prepare, extract (one per backbone), fuse,
evaluate and report in order. Each stage writes a stamp containing the
resolved-configuration hash when it succeeds; a later run with the
same hash and intact outputs skips the stage. A missing or mismatched
stamp marks the stage's outputs stale: they are deleted and rebuilt.
"""

from __future__ import annotations

import os
import shutil
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from cervix_cad.balancing import execute_plan, plan_balancing
from cervix_cad.config import ExperimentConfig
from cervix_cad.descriptors import (
    DescriptorCache,
    extract_all,
    load_backbone,
    read_cache,
    write_cache,
)
from cervix_cad.errors import CadError, DataError
from cervix_cad.evaluate import MetricsReport, run_experiment
from cervix_cad.fusion import FeatureMatrix, fuse
from cervix_cad.images import load_image, resize_image, save_image
from cervix_cad.manifest import (
    BINARY_CLASSES,
    TERNARY_CLASSES,
    ManifestRow,
    label_indices,
    read_manifest,
    write_manifest,
)
from cervix_cad.reporting import (
    emit_report,
    parse_metrics_tsv,
    render_per_fold_tsv,
    render_tsv,
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
BACKBONES = ("rn50", "rn101", "rn152")

GROUPS_SUFFIX = ".groups.tsv"
_AUG_MARK = "__aug"


def center_crop(image: np.ndarray, frac: float) -> np.ndarray:
    """Keep the centered ``frac`` portion of each dimension."""
    h, w = image.shape[:2]
    ch = max(1, int(round(h * frac)))
    cw = max(1, int(round(w * frac)))
    top = (h - ch) // 2
    left = (w - cw) // 2
    return image[top : top + ch, left : left + cw]


def groups_path(manifest_path: str | os.PathLike) -> Path:
    manifest_path = Path(manifest_path)
    return manifest_path.with_name(manifest_path.name + GROUPS_SUFFIX)


def _source_of(row: ManifestRow) -> str:
    """Source image path of a manifest row (augmented rows are named
    ``<source stem>__augNNNNN.png`` next to their source)."""
    if _AUG_MARK not in row.path:
        return row.path
    prefix, _, _ = row.path.rpartition(_AUG_MARK)
    return f"{prefix}.png"


def prepare_dataset(
    input_dir: str | os.PathLike,
    scheme: str,
    seed: int,
    out_dir: str | os.PathLike,
    fallback_crop: float | None = None,
    split_before_augment: bool = False,
) -> Path:
    """Decode, optionally crop, resize, balance; returns the manifest path.

    The input directory must contain one subdirectory per class label.
    Outputs land under ``out_dir``: lossless 224x224 images below
    ``images/<label>/`` and ``manifest.tsv`` with paths relative to
    ``out_dir``. With ``split_before_augment`` a sidecar
    ``manifest.tsv.groups.tsv`` maps every row to its source image so
    evaluation can keep augmented copies in their source's fold.
    """
    input_dir = Path(input_dir)
    out_dir = Path(out_dir)
    classes = BINARY_CLASSES if scheme == "binary" else TERNARY_CLASSES

    source_rows: list[ManifestRow] = []
    counts: dict[str, int] = {}
    for label in classes:
        class_dir = input_dir / label
        if not class_dir.is_dir():
            raise DataError(f"missing class directory {class_dir}")
        files = sorted(
            p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise DataError(f"class directory {class_dir} contains no images")
        seen_stems = set()
        for path in files:
            if path.stem in seen_stems:
                raise DataError(
                    f"duplicate image stem {path.stem!r} in {class_dir}"
                )
            seen_stems.add(path.stem)
            image = load_image(path)
            if fallback_crop is not None:
                image = center_crop(image, fallback_crop)
            image = resize_image(image)
            rel = f"images/{label}/{path.stem}.png"
            save_image(out_dir / rel, image)
            source_rows.append(ManifestRow(rel, label, "original", 0))
        counts[label] = len(files)

    plan = plan_balancing(counts, scheme, seed)
    rows = execute_plan(plan, source_rows, out_dir, out_dir)
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, rows)

    if split_before_augment:
        body = "".join(f"{row.path}\t{_source_of(row)}\n" for row in rows)
        groups_path(manifest_path).write_text(body, encoding="utf-8")
    return manifest_path


def _evaluate_to_reports(
    manifest_path: Path,
    fused_cache_path: Path,
    variants: Sequence[str],
    ks: Sequence[int],
    seed: int,
    c_param: float,
    gamma: float,
    per_fold_mean: bool,
) -> list[MetricsReport]:
    """Shared by the evaluate stage and the evaluate subcommand."""
    rows = read_manifest(manifest_path)
    cache = read_cache(fused_cache_path)
    ids = [row.path for row in rows]
    if cache.image_ids != ids:
        raise DataError(
            f"cache {fused_cache_path} is not aligned with {manifest_path}"
        )
    labels, classes = label_indices(rows)
    features = FeatureMatrix(cache.matrix.astype(np.float64), labels, classes)

    groups = None
    sidecar = groups_path(manifest_path)
    if sidecar.exists():
        mapping = {}
        for lineno, line in enumerate(
            sidecar.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{sidecar}:{lineno}: expected 2 columns")
            mapping[parts[0]] = parts[1]
        try:
            groups = [mapping[row.path] for row in rows]
        except KeyError as exc:
            raise DataError(f"{sidecar} has no group for {exc.args[0]!r}") from None

    reports: list[MetricsReport] = []
    for k in ks:
        reports.extend(
            run_experiment(
                features,
                variants,
                k,
                seed,
                c_param=c_param,
                gamma=gamma,
                per_fold_mean=per_fold_mean,
                groups=groups,
            )
        )
    return reports


class _Stage:
    def __init__(self, name: str, outputs: list[Path], run: Callable[[], None]):
        self.name = name
        self.outputs = outputs
        self.run = run


def run_pipeline(config: ExperimentConfig) -> dict:
    """Execute all stages, skipping those already done for this config.

    Returns artifact paths plus the set of skipped stage names.
    """
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stamp_dir = out / ".stamps"
    config_hash = config.content_hash()

    data_dir = out / "data"
    manifest_path = data_dir / "manifest.tsv"
    cache_dir = out / "cache"
    cache_paths = {v: cache_dir / f"{v}.cdc" for v in BACKBONES}
    fused_path = cache_dir / "fused.cdc"
    report_dir = out / "report"
    metrics_tsv = report_dir / "metrics.tsv"
    per_fold_tsv = report_dir / "per_fold.tsv"
    report_txt = report_dir / "report.txt"
    metrics_svg = report_dir / "metrics.svg"
    resolved_txt = report_dir / "config_resolved.txt"

    def do_prepare():
        prepare_dataset(
            config.dataset_dir,
            config.scheme,
            config.seed,
            data_dir,
            fallback_crop=config.fallback_crop,
            split_before_augment=config.split_before_augment,
        )

    def make_extract(variant: str):
        def do_extract():
            rows = read_manifest(manifest_path)
            backbone = load_backbone(config.model_paths[variant], variant)
            extract_all(backbone, rows, data_dir, cache_paths[variant])

        return do_extract

    def do_fuse():
        rows = read_manifest(manifest_path)
        caches = [read_cache(cache_paths[v]) for v in BACKBONES]
        fused = fuse(*caches, rows)
        write_cache(
            fused_path,
            DescriptorCache(
                "fused", fused.values.astype(np.float32), [r.path for r in rows]
            ),
        )

    def do_evaluate():
        reports = _evaluate_to_reports(
            manifest_path,
            fused_path,
            config.variants,
            config.k,
            config.seed,
            config.c,
            config.gamma,
            config.per_fold_mean,
        )
        report_dir.mkdir(parents=True, exist_ok=True)
        metrics_tsv.write_text(render_tsv(reports), encoding="utf-8")
        per_fold_tsv.write_text(render_per_fold_tsv(reports), encoding="utf-8")
        resolved_txt.write_text(
            "\n".join(config.resolved_lines()) + "\n", encoding="utf-8"
        )

    def do_report():
        reports = parse_metrics_tsv(metrics_tsv)
        emit_report(reports, "text", report_txt, config.resolved_lines())
        emit_report(reports, "svg", metrics_svg)

    prepare_outputs = [manifest_path]
    if config.split_before_augment:
        prepare_outputs.append(groups_path(manifest_path))
    stages = [
        _Stage("prepare", prepare_outputs, do_prepare),
        *[
            _Stage(f"extract-{v}", [cache_paths[v]], make_extract(v))
            for v in BACKBONES
        ],
        _Stage("fuse", [fused_path], do_fuse),
        _Stage(
            "evaluate", [metrics_tsv, per_fold_tsv, resolved_txt], do_evaluate
        ),
        _Stage("report", [report_txt, metrics_svg], do_report),
    ]

    skipped = set()
    for stage in stages:
        stamp = stamp_dir / f"{stage.name}.stamp"
        fresh = (
            stamp.exists()
            and stamp.read_text(encoding="utf-8") == config_hash
            and all(p.exists() for p in stage.outputs)
        )
        if fresh:
            skipped.add(stage.name)
            continue
        # Stale: invalidate before rework so an interrupted stage can
        # never pass for a finished one.
        if stamp.exists():
            stamp.unlink()
        for p in stage.outputs:
            if p.exists():
                p.unlink()
        if stage.name == "prepare" and data_dir.exists():
            shutil.rmtree(data_dir)
        try:
            stage.run()
        except CadError as exc:
            raise type(exc)(f"stage {stage.name} failed: {exc}") from exc
        missing = [p for p in stage.outputs if not p.exists()]
        if missing:
            raise DataError(
                f"stage {stage.name} finished without producing {missing[0]}"
            )
        stamp_dir.mkdir(parents=True, exist_ok=True)
        stamp.write_text(config_hash, encoding="utf-8")

    return {
        "manifest": manifest_path,
        "caches": cache_paths,
        "fused": fused_path,
        "metrics_tsv": metrics_tsv,
        "per_fold_tsv": per_fold_tsv,
        "report_txt": report_txt,
        "metrics_svg": metrics_svg,
        "skipped": skipped,
    }
