import numpy as np
import pytest

from cervix_cad.errors import DataError
from cervix_cad.evaluate import Metrics, MetricsReport
from cervix_cad.reporting import (
    FORMATS,
    TSV_HEADER,
    emit_report,
    parse_metrics_tsv,
    render_per_fold_tsv,
    render_svg,
    render_text,
    render_tsv,
)


def _report(variant="fusion", k=5, sens=91.25, spec=96.5, acc=93.004):
    summary = Metrics(sens, spec, acc)
    per_fold = [Metrics(sens - 1.0, spec - 0.5, acc + 0.25) for _ in range(k)]
    return MetricsReport(variant, k, 7, summary, per_fold, np.eye(2, dtype=np.int64))


def test_tsv_layout():
    text = render_tsv([_report()])
    lines = text.splitlines()
    assert lines[0] == TSV_HEADER
    assert lines[1] == "5-fold\tfusion\t96.50\t91.25\t93.00"
    assert text.endswith("\n")


def test_tsv_rounds_to_two_decimals():
    text = render_tsv([_report(acc=99.999)])
    assert "\t100.00" in text.splitlines()[1]


def test_per_fold_tsv_layout():
    text = render_per_fold_tsv([_report(k=3)])
    lines = text.splitlines()
    assert lines[0] == "validation\tvariant\tfold\tspecificity\tsensitivity\taccuracy"
    assert len(lines) == 4
    assert lines[1].split("\t")[:3] == ["3-fold", "fusion", "0"]


def test_text_table_alignment_and_footer():
    text = render_text([_report(), _report(variant="rn50", k=10)])
    lines = text.splitlines()
    assert lines[0].startswith("validation")
    assert set(lines[1]) <= {"-", " "}
    assert any("macro-averaged" in line for line in lines)
    assert "10-fold" in text and "rn50" in text


def test_text_configuration_block():
    text = render_text([_report()], config_lines=["seed = 7", "k = 5"])
    lines = text.splitlines()
    assert lines[0] == "# configuration"
    assert lines[1] == "#   seed = 7"
    assert lines[2] == "#   k = 5"


def test_text_zero_denominator_warning():
    report = _report()
    report.summary.zero_denominator = True
    text = render_text([report])
    assert "zero-denominator" in text
    assert "fusion@5-fold" in text


def test_svg_structure():
    text = render_svg([_report(), _report(variant="rn101")])
    assert text.startswith("<svg ")
    assert text.rstrip().endswith("</svg>")
    assert text.count("<rect") >= 7  # background + legend + 6 bars
    assert "fusion" in text and "rn101" in text
    assert "sensitivity" in text and "specificity" in text and "accuracy" in text


def test_svg_is_deterministic_and_free_of_volatile_content():
    a = render_svg([_report()])
    b = render_svg([_report()])
    assert a == b
    lowered = a.lower()
    for banned in ("timestamp", "date", "id=", "version", "generated"):
        assert banned not in lowered


def test_svg_escapes_markup_in_variant_names():
    text = render_svg([_report(variant="a<b&c")])
    assert "a&lt;b&amp;c" in text
    assert "a<b&c" not in text


def test_svg_bar_heights_track_values():
    tall = render_svg([_report(acc=100.0)])
    short = render_svg([_report(acc=50.0)])

    def bar_height(svg):
        # accuracy is the third bar of the group
        rects = [l for l in svg.splitlines() if l.startswith("<rect x=")]
        return float(rects[-1].split('height="')[1].split('"')[0])

    assert bar_height(tall) > bar_height(short)


def test_emit_report_round_trip(tmp_path):
    reports = [_report(), _report(variant="rn152", k=10, acc=88.0)]
    out = emit_report(reports, "tsv", tmp_path / "metrics.tsv")
    parsed = parse_metrics_tsv(out)
    assert [(r.variant, r.k) for r in parsed] == [("fusion", 5), ("rn152", 10)]
    assert parsed[0].summary.sensitivity == pytest.approx(91.25)
    assert parsed[0].summary.specificity == pytest.approx(96.5)
    assert parsed[1].summary.accuracy == pytest.approx(88.0)


def test_emit_report_formats(tmp_path):
    assert set(FORMATS) == {"text", "tsv", "svg"}
    for fmt in FORMATS:
        path = emit_report([_report()], fmt, tmp_path / f"report.{fmt}")
        assert path.exists()
        assert path.read_text(encoding="utf-8")
    with pytest.raises(DataError, match="unknown report format"):
        emit_report([_report()], "pdf", tmp_path / "report.pdf")


def test_empty_reports_rejected(tmp_path):
    for renderer in (render_tsv, render_text, render_svg, render_per_fold_tsv):
        with pytest.raises(DataError, match="no evaluation results"):
            renderer([])


def test_parse_metrics_tsv_errors(tmp_path):
    path = tmp_path / "metrics.tsv"
    path.write_text("wrong header\n")
    with pytest.raises(DataError, match="header"):
        parse_metrics_tsv(path)
    path.write_text(TSV_HEADER + "\nonly\tfour\tcol\tumns\n")
    with pytest.raises(DataError, match=r":2: expected 5 columns"):
        parse_metrics_tsv(path)
    path.write_text(TSV_HEADER + "\nfive-fold\tfusion\t1\t2\t3\n")
    with pytest.raises(DataError, match=r":2:"):
        parse_metrics_tsv(path)
    path.write_text(TSV_HEADER + "\n5fold\tfusion\t1\t2\t3\n")
    with pytest.raises(DataError, match="bad validation field"):
        parse_metrics_tsv(path)
    path.write_text(TSV_HEADER + "\n")
    with pytest.raises(DataError, match="no metric rows"):
        parse_metrics_tsv(path)
    with pytest.raises(DataError, match="cannot read"):
        parse_metrics_tsv(tmp_path / "absent.tsv")
