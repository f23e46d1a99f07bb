"""Acceptance gate: export verification across all three variants.

Every exported graph must declare a 2048-length output, match its
source model within 1e-4 on probe images, and load directly into the
classification pipeline's descriptor extractor.
"""

import numpy as np

from cervix_cad.descriptors import extract, load_backbone
from cervix_cad.onnx_graph import load_graph
from model_export.backbone import VARIANTS, build_source_model
from model_export.export import (
    MANIFEST_NAME,
    export_backbone,
    parity_check,
    read_export_manifest,
    write_export_manifest,
    write_probe_images,
)


def test_export_verification(tmp_path):
    out = tmp_path / "exported"
    models = {}
    entries = []
    for variant in VARIANTS:
        models[variant] = build_source_model(variant, "random", seed=20250801)
        entries.append(export_backbone(variant, out, model=models[variant]))
    write_export_manifest(out / MANIFEST_NAME, entries)
    assert [e.variant for e in read_export_manifest(out / MANIFEST_NAME)] == list(
        VARIANTS
    )

    probes = write_probe_images(tmp_path / "probes", seed=3)
    rng = np.random.default_rng(11)
    for entry in entries:
        assert entry.output_len == 2048
        graph_path = out / entry.path
        assert tuple(load_graph(graph_path).output_info.shape) == (1, 2048)

        report = parity_check(graph_path, probes, models[entry.variant])
        assert report.passed, f"{entry.variant} parity worst {report.worst:.3e}"
        assert report.worst < 1e-4

        backbone = load_backbone(graph_path, entry.variant)
        image = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
        vector = extract(backbone, image)
        assert vector.shape == (2048,)
        assert np.isfinite(vector).all()
