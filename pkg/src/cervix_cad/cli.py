"""Command line entry point.

Subcommands: prepare, extract, fuse, evaluate, report, run, synth.
Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from cervix_cad import __version__
from cervix_cad.config import (
    parse_crop,
    parse_k_list,
    parse_variant_list,
    validate_config,
)
from cervix_cad.descriptors import (
    BACKBONE_VARIANTS,
    DescriptorCache,
    extract_all,
    load_backbone,
    read_cache,
    write_cache,
)
from cervix_cad.errors import CadError, ConfigError, DataError
from cervix_cad.evaluate import VARIANTS, run_experiment
from cervix_cad.fusion import FUSED_LEN, FeatureMatrix, fuse
from cervix_cad.manifest import label_indices, read_manifest
from cervix_cad.pipeline import (
    _evaluate_to_reports,
    groups_path,
    prepare_dataset,
    run_pipeline,
)
from cervix_cad.reporting import (
    FORMATS,
    emit_report,
    parse_metrics_tsv,
    render_per_fold_tsv,
    render_tsv,
)
from cervix_cad.synth import write_synthetic


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cervix-cad",
        description="Descriptor-fusion classification pipeline for cervigrams.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="decode, resize, augment and balance a dataset")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--scheme", required=True, choices=("binary", "ternary"))
    p.add_argument("--seed", required=True, type=_u64)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--fallback-crop", default=None, metavar="center:FRAC")
    p.add_argument("--split-before-augment", action="store_true")

    p = sub.add_parser("extract", help="run one backbone over a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--variant", required=True, choices=BACKBONE_VARIANTS)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("fuse", help="concatenate three descriptor caches")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--rn50", required=True, type=Path)
    p.add_argument("--rn101", required=True, type=Path)
    p.add_argument("--rn152", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("evaluate", help="cross-validate pipeline variants")
    p.add_argument(
        "--features",
        required=True,
        nargs="+",
        type=Path,
        help="one fused cache, or the rn50, rn101, rn152 caches in order",
    )
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--k", default="5,10")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--seed", required=True, type=_u64)
    p.add_argument("--c", default=1.0, type=_positive_float)
    p.add_argument("--gamma", default=0.1, type=float)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--per-fold-mean", action="store_true")
    p.add_argument("--c-grid", default=None, help="comma-separated penalty values")

    p = sub.add_parser("report", help="render a metrics table to text, tsv or svg")
    p.add_argument("--metrics", required=True, type=Path)
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True, type=Path)

    p = sub.add_parser("synth", help="generate a synthetic fixture dataset")
    p.add_argument("--scheme", required=True, choices=("binary", "ternary"))
    p.add_argument("--samples-per-class", required=True, type=int)
    p.add_argument("--sep", default=10.0, type=_positive_float)
    p.add_argument(
        "--informative",
        default=None,
        type=int,
        help="informative dimension count (default: all)",
    )
    p.add_argument("--seed", required=True, type=_u64)
    p.add_argument("--out", required=True, type=Path)
    return parser


def _cmd_prepare(args) -> int:
    crop = parse_crop(args.fallback_crop) if args.fallback_crop else None
    manifest = prepare_dataset(
        args.input,
        args.scheme,
        args.seed,
        args.out,
        fallback_crop=crop,
        split_before_augment=args.split_before_augment,
    )
    print(manifest)
    return 0


def _cmd_extract(args) -> int:
    rows = read_manifest(args.manifest)
    backbone = load_backbone(args.model, args.variant)
    extract_all(backbone, rows, Path(args.manifest).parent, args.out)
    print(args.out)
    return 0


def _cmd_fuse(args) -> int:
    rows = read_manifest(args.manifest)
    caches = [read_cache(p) for p in (args.rn50, args.rn101, args.rn152)]
    matrix = fuse(*caches, rows)
    write_cache(
        args.out,
        DescriptorCache("fused", matrix.values.astype(np.float32), [r.path for r in rows]),
    )
    print(args.out)
    return 0


def _load_features(paths: list[Path], manifest_path: Path) -> FeatureMatrix:
    rows = read_manifest(manifest_path)
    if len(paths) == 3:
        return fuse(*(read_cache(p) for p in paths), rows)
    if len(paths) != 1:
        raise ConfigError(
            f"--features takes one fused cache or three backbone caches, got {len(paths)}"
        )
    cache = read_cache(paths[0])
    if cache.image_ids != [r.path for r in rows]:
        raise DataError(f"cache {paths[0]} is not aligned with {manifest_path}")
    if cache.matrix.shape[1] != FUSED_LEN:
        raise DataError(
            f"single-cache evaluation expects fused width {FUSED_LEN}, "
            f"got {cache.matrix.shape[1]}"
        )
    labels, classes = label_indices(rows)
    return FeatureMatrix(cache.matrix.astype(np.float64), labels, classes)


def _cmd_evaluate(args) -> int:
    ks = parse_k_list(args.k)
    variants = parse_variant_list(args.variants)
    if not 0.0 <= args.gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0, 1], got {args.gamma}")
    features = _load_features(args.features, args.manifest)

    groups = None
    sidecar = groups_path(args.manifest)
    if sidecar.exists():
        mapping = dict(
            line.split("\t")
            for line in sidecar.read_text(encoding="utf-8").splitlines()
            if line.strip()
        )
        rows = read_manifest(args.manifest)
        groups = [mapping[r.path] for r in rows]

    c_values = (
        [args.c]
        if args.c_grid is None
        else [_positive_float(v) for v in args.c_grid.split(",") if v.strip()]
    )
    reports = []
    for k in ks:
        for c_value in c_values:
            for report in run_experiment(
                features,
                variants,
                k,
                args.seed,
                c_param=c_value,
                gamma=args.gamma,
                per_fold_mean=args.per_fold_mean,
                groups=groups,
            ):
                if len(c_values) > 1:
                    report.variant = f"{report.variant}@C={c_value:g}"
                reports.append(report)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.tsv").write_text(render_tsv(reports), encoding="utf-8")
    (out_dir / "per_fold.tsv").write_text(
        render_per_fold_tsv(reports), encoding="utf-8"
    )
    print(out_dir / "metrics.tsv")
    return 0


def _cmd_report(args) -> int:
    reports = parse_metrics_tsv(args.metrics)
    names = {"text": "report.txt", "tsv": "metrics.tsv", "svg": "metrics.svg"}
    out = emit_report(reports, args.format, Path(args.out) / names[args.format])
    print(out)
    return 0


def _cmd_run(args) -> int:
    config = validate_config(args.config)
    artifacts = run_pipeline(config)
    print(artifacts["metrics_tsv"])
    return 0


def _cmd_synth(args) -> int:
    if args.samples_per_class < 1:
        raise ConfigError("--samples-per-class must be positive")
    informative = args.informative if args.informative is not None else FUSED_LEN
    manifest = write_synthetic(
        args.out,
        args.scheme,
        args.samples_per_class,
        args.sep,
        informative=informative,
        seed=args.seed,
    )
    print(manifest)
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "extract": _cmd_extract,
    "fuse": _cmd_fuse,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "run": _cmd_run,
    "synth": _cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
