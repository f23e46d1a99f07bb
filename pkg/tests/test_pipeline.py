from collections import Counter

import numpy as np
import pytest

from cervix_cad.config import ExperimentConfig
from cervix_cad.errors import DataError
from cervix_cad.images import INPUT_SIZE, load_image, save_image
from cervix_cad.manifest import read_manifest
from cervix_cad.pipeline import (
    center_crop,
    groups_path,
    prepare_dataset,
    run_pipeline,
)
from cervix_cad.reporting import parse_metrics_tsv
from helpers import make_image, write_class_dirs


def test_center_crop_geometry():
    image = make_image(0, size=100)
    cropped = center_crop(image, 0.5)
    assert cropped.shape == (50, 50, 3)
    assert np.array_equal(cropped, image[25:75, 25:75])
    tall = np.zeros((100, 40, 3), dtype=np.uint8)
    assert center_crop(tall, 0.5).shape == (50, 20, 3)
    assert center_crop(image, 1.0).shape == image.shape
    # a tiny fraction still leaves at least one pixel
    assert center_crop(image, 0.001).shape == (1, 1, 3)


def test_prepare_balances_binary_dataset(tmp_path):
    src = write_class_dirs(tmp_path / "raw", {"normal": 2, "abnormal": 3})
    manifest_path = prepare_dataset(src, "binary", seed=1, out_dir=tmp_path / "out")
    rows = read_manifest(manifest_path)
    by_label = Counter(row.label for row in rows)
    assert by_label == {"normal": 3, "abnormal": 3}
    for row in rows:
        image = load_image(tmp_path / "out" / row.path)
        assert image.shape == (INPUT_SIZE, INPUT_SIZE, 3)
    originals = [row for row in rows if row.provenance == "original"]
    assert len(originals) == 5


def test_prepare_balances_ternary_dataset(tmp_path):
    src = write_class_dirs(
        tmp_path / "raw", {"type1": 2, "type2": 3, "type3": 2}, size=32
    )
    manifest_path = prepare_dataset(src, "ternary", seed=0, out_dir=tmp_path / "out")
    rows = read_manifest(manifest_path)
    by_label = Counter(row.label for row in rows)
    # fivefold expansion of the smallest class, then fivefold again
    assert by_label == {"type1": 50, "type2": 50, "type3": 50}


def test_prepare_applies_fallback_crop(tmp_path):
    src = tmp_path / "raw"
    (src / "normal").mkdir(parents=True)
    (src / "abnormal").mkdir(parents=True)
    # black frame around a white center: cropping keeps only white
    framed = np.zeros((100, 100, 3), dtype=np.uint8)
    framed[25:75, 25:75] = 255
    save_image(src / "normal" / "framed.png", framed)
    save_image(src / "abnormal" / "other.png", framed)
    manifest_path = prepare_dataset(
        src, "binary", seed=0, out_dir=tmp_path / "out", fallback_crop=0.5
    )
    rows = read_manifest(manifest_path)
    out_image = load_image(tmp_path / "out" / rows[0].path)
    assert out_image.min() == 255


def test_prepare_writes_groups_sidecar(tmp_path):
    src = write_class_dirs(tmp_path / "raw", {"normal": 2, "abnormal": 4}, size=32)
    manifest_path = prepare_dataset(
        src, "binary", seed=3, out_dir=tmp_path / "out", split_before_augment=True
    )
    sidecar = groups_path(manifest_path)
    assert sidecar.exists()
    mapping = dict(
        line.split("\t") for line in sidecar.read_text().splitlines() if line
    )
    rows = read_manifest(manifest_path)
    assert set(mapping) == {row.path for row in rows}
    for row in rows:
        if row.provenance == "original":
            assert mapping[row.path] == row.path
        else:
            assert "__aug" in row.path
            assert mapping[row.path] == row.path.rpartition("__aug")[0] + ".png"
            assert mapping[row.path] in {r.path for r in rows}


def test_prepare_rejects_bad_input_trees(tmp_path):
    src = tmp_path / "raw"
    (src / "normal").mkdir(parents=True)
    save_image(src / "normal" / "a.png", make_image(0, size=32))
    with pytest.raises(DataError, match="missing class directory"):
        prepare_dataset(src, "binary", seed=0, out_dir=tmp_path / "out")
    (src / "abnormal").mkdir()
    with pytest.raises(DataError, match="contains no images"):
        prepare_dataset(src, "binary", seed=0, out_dir=tmp_path / "out")


def test_prepare_rejects_duplicate_stems(tmp_path):
    src = tmp_path / "raw"
    for label in ("normal", "abnormal"):
        (src / label).mkdir(parents=True)
        save_image(src / label / "a.png", make_image(0, size=32))
    from PIL import Image

    Image.fromarray(make_image(1, size=32)).save(src / "normal" / "a.jpg")
    with pytest.raises(DataError, match="duplicate image stem"):
        prepare_dataset(src, "binary", seed=0, out_dir=tmp_path / "out")


def _config(tmp_path, backbone_dir, **overrides) -> ExperimentConfig:
    src = write_class_dirs(tmp_path / "raw", {"normal": 3, "abnormal": 4}, size=32)
    defaults = dict(
        dataset_dir=src,
        scheme="binary",
        seed=11,
        model_paths={v: backbone_dir / f"{v}.onnx" for v in ("rn50", "rn101", "rn152")},
        out_dir=tmp_path / "out",
        k=[2],
        variants=["rn50", "fusion", "fusion+lda"],
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


ALL_STAGES = {
    "prepare",
    "extract-rn50",
    "extract-rn101",
    "extract-rn152",
    "fuse",
    "evaluate",
    "report",
}


def test_run_pipeline_produces_all_artifacts(tmp_path, backbone_dir):
    config = _config(tmp_path, backbone_dir)
    result = run_pipeline(config)
    assert result["skipped"] == set()
    for key in ("manifest", "fused", "metrics_tsv", "per_fold_tsv", "report_txt", "metrics_svg"):
        assert result[key].exists(), key
    for cache_path in result["caches"].values():
        assert cache_path.exists()
    reports = parse_metrics_tsv(result["metrics_tsv"])
    assert [(r.variant, r.k) for r in reports] == [
        ("rn50", 2),
        ("fusion", 2),
        ("fusion+lda", 2),
    ]
    assert result["metrics_svg"].read_text().startswith("<svg ")
    assert "validation" in result["report_txt"].read_text()


def test_run_pipeline_skips_fresh_stages(tmp_path, backbone_dir):
    config = _config(tmp_path, backbone_dir)
    first = run_pipeline(config)
    before = first["metrics_tsv"].read_bytes()
    second = run_pipeline(config)
    assert second["skipped"] == ALL_STAGES
    assert second["metrics_tsv"].read_bytes() == before


def test_run_pipeline_reruns_stage_with_missing_output(tmp_path, backbone_dir):
    config = _config(tmp_path, backbone_dir)
    first = run_pipeline(config)
    first["metrics_svg"].unlink()
    second = run_pipeline(config)
    assert second["skipped"] == ALL_STAGES - {"report"}
    assert second["metrics_svg"].exists()


def test_run_pipeline_invalidates_on_config_change(tmp_path, backbone_dir):
    config = _config(tmp_path, backbone_dir)
    run_pipeline(config)
    changed = _config(tmp_path, backbone_dir, c=2.0)
    result = run_pipeline(changed)
    # every stage stamp carries the config hash, so all stages rerun
    assert result["skipped"] == set()


def test_run_pipeline_reruns_after_corrupted_stamp(tmp_path, backbone_dir):
    config = _config(tmp_path, backbone_dir)
    result = run_pipeline(config)
    stamp = config.out_dir / ".stamps" / "report.stamp"
    stamp.write_text("not-the-hash")
    second = run_pipeline(config)
    assert "report" not in second["skipped"]
    assert second["metrics_svg"].read_bytes() == result["metrics_svg"].read_bytes()


def test_run_pipeline_is_deterministic_across_directories(tmp_path, backbone_dir):
    a = run_pipeline(_config(tmp_path, backbone_dir))
    b_root = tmp_path / "again"
    b_root.mkdir()
    src = write_class_dirs(b_root / "raw", {"normal": 3, "abnormal": 4}, size=32)
    b = run_pipeline(
        ExperimentConfig(
            dataset_dir=src,
            scheme="binary",
            seed=11,
            model_paths={
                v: backbone_dir / f"{v}.onnx" for v in ("rn50", "rn101", "rn152")
            },
            out_dir=b_root / "out",
            k=[2],
            variants=["rn50", "fusion", "fusion+lda"],
        )
    )
    assert a["metrics_tsv"].read_bytes() == b["metrics_tsv"].read_bytes()
    assert a["per_fold_tsv"].read_bytes() == b["per_fold_tsv"].read_bytes()
    assert a["metrics_svg"].read_bytes() == b["metrics_svg"].read_bytes()


def test_run_pipeline_wraps_stage_errors(tmp_path, backbone_dir):
    config = _config(tmp_path, backbone_dir)
    config.model_paths["rn101"] = tmp_path / "missing.onnx"
    with pytest.raises(DataError, match="stage extract-rn101 failed"):
        run_pipeline(config)
