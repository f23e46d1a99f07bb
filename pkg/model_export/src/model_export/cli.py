"""Command line entry point.

    export_models --variants rn50,rn101,rn152 --out exported/

writes one ``<variant>.onnx`` per requested variant plus
``export_manifest.tsv`` with content hashes, parity-checking every graph
against its source model on a small probe set before recording it.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from model_export.backbone import VARIANTS, build_source_model
from model_export.errors import ExportError
from model_export.export import (
    MANIFEST_NAME,
    TOLERANCE,
    export_backbone,
    parity_check,
    write_export_manifest,
    write_probe_images,
)


def _parse_variants(text: str) -> list[str]:
    variants = [v.strip() for v in text.split(",") if v.strip()]
    if not variants:
        raise ExportError("no variants requested")
    for v in variants:
        if v not in VARIANTS:
            raise ExportError(
                f"unknown variant {v!r}, expected one of {', '.join(VARIANTS)}"
            )
    return list(dict.fromkeys(variants))


def run(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="export_models",
        description="Export head-removed residual networks as portable "
        "descriptor graphs.",
    )
    parser.add_argument(
        "--variants",
        default=",".join(VARIANTS),
        help="comma-separated subset of rn50,rn101,rn152 (default: all)",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--weights",
        default="pretrained",
        help="'pretrained', 'random', or a state_dict path (default: pretrained)",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--sample-images",
        nargs="*",
        default=None,
        help="224x224 probe images for the parity check (default: built-in probes)",
    )
    parser.add_argument("--tolerance", type=float, default=TOLERANCE)
    args = parser.parse_args(argv)

    try:
        variants = _parse_variants(args.variants)
        out_dir = Path(args.out)
        entries = []
        with tempfile.TemporaryDirectory(prefix="probes_") as tmp:
            samples = args.sample_images or write_probe_images(tmp, seed=args.seed)
            for variant in variants:
                model = build_source_model(variant, args.weights, args.seed)
                manifest = export_backbone(variant, out_dir, model=model)
                report = parity_check(
                    out_dir / manifest.path, samples, model, args.tolerance
                )
                entries.append(manifest)
                print(
                    f"{variant}: {manifest.path} sha256 {manifest.sha256[:12]} "
                    f"output {manifest.output_len} parity {report.worst:.2e} "
                    f"over {len(report.deviations)} images"
                )
        write_export_manifest(out_dir / MANIFEST_NAME, entries)
        print(f"wrote {out_dir / MANIFEST_NAME}")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
