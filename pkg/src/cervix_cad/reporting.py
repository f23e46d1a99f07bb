"""Report rendering: text and TSV tables, SVG bar chart.

The TSV layout is fixed: header
``validation\tvariant\tspecificity\tsensitivity\taccuracy`` and
percentages with two decimals. The SVG is written by hand with fixed
number formatting so identical inputs produce identical bytes; no
timestamps, ids or library version strings are embedded.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

from cervix_cad.errors import DataError
from cervix_cad.evaluate import Metrics, MetricsReport

TSV_HEADER = "validation\tvariant\tspecificity\tsensitivity\taccuracy"

_BAR_COLORS = ("#4c72b0", "#dd8452", "#55a868")
_BAR_LABELS = ("specificity", "sensitivity", "accuracy")


def _check(reports: Sequence[MetricsReport]) -> None:
    if not reports:
        raise DataError("no evaluation results to report")


def render_tsv(reports: Sequence[MetricsReport]) -> str:
    """Summary table, one row per (validation, variant)."""
    _check(reports)
    lines = [TSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.k}-fold\t{r.variant}\t{r.summary.specificity:.2f}"
            f"\t{r.summary.sensitivity:.2f}\t{r.summary.accuracy:.2f}"
        )
    return "\n".join(lines) + "\n"


def render_per_fold_tsv(reports: Sequence[MetricsReport]) -> str:
    """Per-fold metrics, one row per (validation, variant, fold)."""
    _check(reports)
    lines = ["validation\tvariant\tfold\tspecificity\tsensitivity\taccuracy"]
    for r in reports:
        for fold, m in enumerate(r.per_fold):
            lines.append(
                f"{r.k}-fold\t{r.variant}\t{fold}\t{m.specificity:.2f}"
                f"\t{m.sensitivity:.2f}\t{m.accuracy:.2f}"
            )
    return "\n".join(lines) + "\n"


def render_text(
    reports: Sequence[MetricsReport], config_lines: Sequence[str] = ()
) -> str:
    """Aligned table for terminals, with optional provenance block.

    Ternary sensitivity/specificity are macro-averaged one-vs-rest
    values, noted in the footer so single numbers are unambiguous.
    """
    _check(reports)
    rows = [("validation", "variant", "spec.", "sen.", "acc.")]
    for r in reports:
        rows.append(
            (
                f"{r.k}-fold",
                r.variant,
                f"{r.summary.specificity:.2f}",
                f"{r.summary.sensitivity:.2f}",
                f"{r.summary.accuracy:.2f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    out = []
    if config_lines:
        out.append("# configuration")
        out.extend(f"#   {line}" for line in config_lines)
        out.append("")
    for i, row in enumerate(rows):
        out.append(
            "  ".join(
                cell.ljust(w) if j < 2 else cell.rjust(w)
                for j, (cell, w) in enumerate(zip(row, widths))
            ).rstrip()
        )
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    flagged = [r for r in reports if r.summary.zero_denominator]
    if flagged:
        out.append("")
        out.append(
            "warning: zero-denominator rates reported as 0 for: "
            + ", ".join(f"{r.variant}@{r.k}-fold" for r in flagged)
        )
    out.append("")
    out.append(
        "note: multiclass sensitivity/specificity are macro-averaged "
        "one-vs-rest rates."
    )
    return "\n".join(out) + "\n"


def render_svg(reports: Sequence[MetricsReport]) -> str:
    """Grouped bar chart: one group per report row, three metric bars.

    Deterministic output: fixed canvas arithmetic and two-decimal
    coordinates only.
    """
    _check(reports)
    bar_w, gap, group_pad = 22, 4, 26
    left, top, bottom = 60, 46, 64
    plot_h = 240.0
    group_w = 3 * bar_w + 2 * gap
    width = left + len(reports) * (group_w + group_pad) + 30
    height = int(top + plot_h + bottom)

    def y(value: float) -> float:
        return top + plot_h * (1.0 - value / 100.0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        '<g font-family="sans-serif" font-size="11">',
    ]
    for tick in range(0, 101, 20):
        ty = y(tick)
        parts.append(
            f'<line x1="{left}" y1="{ty:.2f}" x2="{width - 20}" y2="{ty:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{ty + 4:.2f}" text-anchor="end" '
            f'fill="#444444">{tick}</text>'
        )
    for i, (color, label) in enumerate(zip(_BAR_COLORS, _BAR_LABELS)):
        lx = left + i * 110
        parts.append(
            f'<rect x="{lx}" y="14" width="12" height="12" fill="{color}"/>'
        )
        parts.append(f'<text x="{lx + 16}" y="24" fill="#222222">{label}</text>')
    for gi, r in enumerate(reports):
        gx = left + gi * (group_w + group_pad) + group_pad / 2.0
        values = (
            r.summary.specificity,
            r.summary.sensitivity,
            r.summary.accuracy,
        )
        for bi, (value, color) in enumerate(zip(values, _BAR_COLORS)):
            bx = gx + bi * (bar_w + gap)
            by = y(value)
            parts.append(
                f'<rect x="{bx:.2f}" y="{by:.2f}" width="{bar_w}" '
                f'height="{top + plot_h - by:.2f}" fill="{color}"/>'
            )
            parts.append(
                f'<text x="{bx + bar_w / 2.0:.2f}" y="{by - 3:.2f}" '
                f'text-anchor="middle" font-size="8" fill="#333333">'
                f"{value:.1f}</text>"
            )
        cx = gx + group_w / 2.0
        base = top + plot_h
        parts.append(
            f'<text x="{cx:.2f}" y="{base + 16:.2f}" text-anchor="middle" '
            f'fill="#222222">{_escape(r.variant)}</text>'
        )
        parts.append(
            f'<text x="{cx:.2f}" y="{base + 30:.2f}" text-anchor="middle" '
            f'fill="#666666">{r.k}-fold</text>'
        )
    parts.append(
        f'<line x1="{left}" y1="{top + plot_h:.2f}" x2="{width - 20}" '
        f'y2="{top + plot_h:.2f}" stroke="#444444" stroke-width="1"/>'
    )
    parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


_RENDERERS = {
    "text": render_text,
    "tsv": render_tsv,
    "svg": render_svg,
}

FORMATS = tuple(_RENDERERS)


def emit_report(
    reports: Sequence[MetricsReport],
    fmt: str,
    out: str | os.PathLike,
    config_lines: Sequence[str] = (),
) -> Path:
    """Render one format to a file and return its path."""
    if fmt not in _RENDERERS:
        raise DataError(f"unknown report format {fmt!r}")
    _check(reports)
    if fmt == "text":
        body = render_text(reports, config_lines)
    else:
        body = _RENDERERS[fmt](reports)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(body, encoding="utf-8")
    return out


def parse_metrics_tsv(path: str | os.PathLike) -> list[MetricsReport]:
    """Read a summary TSV back into report entries (for re-rendering)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read metrics table {path}: {exc}") from exc
    if not lines or lines[0] != TSV_HEADER:
        raise DataError(f"{path} does not start with the metrics header")
    reports = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
        validation, variant, spec, sen, acc = parts
        if not validation.endswith("-fold"):
            raise DataError(f"{path}:{lineno}: bad validation field {validation!r}")
        try:
            k = int(validation[: -len("-fold")])
            metrics = Metrics(float(sen), float(spec), float(acc))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        reports.append(MetricsReport(variant, k, 0, metrics))
    if not reports:
        raise DataError(f"{path} contains no metric rows")
    return reports
