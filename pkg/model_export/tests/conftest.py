import pytest

from model_export.backbone import build_source_model
from model_export.export import export_backbone, write_probe_images


@pytest.fixture(scope="session")
def rn50_export(tmp_path_factory):
    """One seeded rn50 export shared across the session: (dir, manifest, model)."""
    out = tmp_path_factory.mktemp("exported")
    model = build_source_model("rn50", "random", seed=0)
    manifest = export_backbone("rn50", out, model=model)
    return out, manifest, model


@pytest.fixture(scope="session")
def probes(tmp_path_factory):
    return write_probe_images(tmp_path_factory.mktemp("probes"), seed=1)
