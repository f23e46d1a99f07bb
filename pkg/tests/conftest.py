from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for helpers / onnx_builder

from helpers import make_image, tiny_backbone  # noqa: E402


@pytest.fixture()
def image() -> np.ndarray:
    return make_image(0)


@pytest.fixture(scope="session")
def backbone_dir(tmp_path_factory) -> Path:
    """Three distinct fast descriptor graphs, shared across the session."""
    root = tmp_path_factory.mktemp("backbones")
    for seed, name in enumerate(("rn50", "rn101", "rn152")):
        (root / f"{name}.onnx").write_bytes(tiny_backbone(seed))
    return root


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "::" not in nodeid:
                continue
            module = nodeid.split("::")[0].rpartition("/")[2]
            if not module.startswith("test_acceptance"):
                continue
            name = nodeid.split("::")[-1].removeprefix("test_")
            verdict = "PASS" if outcome == "passed" else "FAIL"
            lines.append((name, verdict))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{name}: {verdict}")
