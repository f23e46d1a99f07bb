"""ONNX export of the descriptor models plus parity verification.

Exported graphs are self-contained: weights and the input normalization
constants travel inside the file, so a consumer feeds raw pixel values
and reads a 2048-length descriptor. Every export is verified before its
manifest row exists, and :func:`parity_check` replays sample images
through both the serialized graph (under the pipeline's numpy runtime,
the reference runtime in this deployment) and the source torch model.
"""

from __future__ import annotations

import contextlib
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from cervix_cad.onnx_graph import load_graph

from model_export.backbone import (
    DESCRIPTOR_LEN,
    INPUT_SIZE,
    build_source_model,
)
from model_export.errors import ExportError

OPSET = 13
TOLERANCE = 1e-4
MANIFEST_NAME = "export_manifest.tsv"

_COLUMNS = ("variant", "path", "sha256", "output_len")


@dataclass
class ExportManifest:
    """Provenance record for one exported graph.

    ``path`` is the graph file name, relative to the directory holding
    the manifest; the graphs always sit next to export_manifest.tsv.
    """

    variant: str
    path: str
    sha256: str
    output_len: int


@dataclass
class ParityReport:
    """Per-image deviation between a graph and its source model."""

    graph: str
    deviations: list[float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.deviations)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


@contextlib.contextmanager
def _onnx_package_optional():
    """Allow torch.onnx.export to run without the onnx package.

    The exporter post-processes its serialized bytes through a hook that
    inlines onnxscript-defined functions, and that hook unconditionally
    imports onnx. Plain ATen traces contain no such functions, so when
    onnx is unavailable the hook is replaced with identity.
    """
    try:
        import onnx  # noqa: F401

        yield
        return
    except ImportError:
        pass
    try:
        from torch.onnx._internal.torchscript_exporter import onnx_proto_utils
    except ImportError as exc:
        raise ExportError(
            "neither the onnx package nor the expected torch exporter "
            f"internals are available: {exc}"
        ) from exc
    original = onnx_proto_utils._add_onnxscript_fn
    onnx_proto_utils._add_onnxscript_fn = lambda model_bytes, custom_opsets: model_bytes
    try:
        yield
    finally:
        onnx_proto_utils._add_onnxscript_fn = original


def _verify(path: Path, variant: str) -> None:
    """Parse the written file and check its declared tensor shapes.

    A graph that fails verification is deleted so no stale artifact can
    be mistaken for a valid export.
    """
    try:
        graph = load_graph(path)
        in_shape = tuple(graph.input_info.shape)
        out_shape = tuple(graph.output_info.shape)
    except Exception as exc:
        path.unlink(missing_ok=True)
        raise ExportError(f"{variant} graph failed verification: {exc}") from exc
    if in_shape != (1, 3, INPUT_SIZE, INPUT_SIZE) or out_shape != (1, DESCRIPTOR_LEN):
        path.unlink(missing_ok=True)
        raise ExportError(
            f"{variant} graph declares input {in_shape} and output {out_shape}, "
            f"expected (1, 3, {INPUT_SIZE}, {INPUT_SIZE}) -> (1, {DESCRIPTOR_LEN}); "
            "was the classification head removed?"
        )


def export_backbone(
    variant: str,
    out_dir: str | Path,
    weights: str = "pretrained",
    seed: int = 0,
    model: torch.nn.Module | None = None,
) -> ExportManifest:
    """Write ``<variant>.onnx`` under out_dir and return its manifest row.

    ``model`` overrides the source model construction; by default the
    variant is built via :func:`build_source_model`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = build_source_model(variant, weights, seed)
    model.eval()
    path = out_dir / f"{variant}.onnx"
    dummy = torch.zeros(1, 3, INPUT_SIZE, INPUT_SIZE)
    with _onnx_package_optional(), warnings.catch_warnings():
        # the legacy exporter is pinned on purpose: the replacement
        # needs onnxscript, which this tool must not depend on
        warnings.simplefilter("ignore", DeprecationWarning)
        try:
            torch.onnx.export(
                model,
                (dummy,),
                str(path),
                opset_version=OPSET,
                input_names=["image"],
                output_names=["descriptor"],
                dynamo=False,
            )
        except ExportError:
            raise
        except Exception as exc:
            path.unlink(missing_ok=True)
            raise ExportError(f"exporting {variant} failed: {exc}") from exc
    _verify(path, variant)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return ExportManifest(variant, path.name, digest, DESCRIPTOR_LEN)


def _load_sample(path: str | Path) -> np.ndarray:
    """Read one RGB probe image, rejecting anything but 224x224."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
    except OSError as exc:
        raise ExportError(f"cannot read sample image {path}: {exc}") from exc
    if arr.shape != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ExportError(
            f"sample image {path} is {arr.shape[1]}x{arr.shape[0]}, "
            f"expected {INPUT_SIZE}x{INPUT_SIZE}"
        )
    return arr


def parity_check(
    graph_path: str | Path,
    sample_images: Sequence[str | Path],
    source_model: torch.nn.Module,
    tolerance: float = TOLERANCE,
) -> ParityReport:
    """Compare the serialized graph against its source model.

    Every sample image is pushed through both the graph and the torch
    model; the report carries the largest per-component absolute
    deviation for each image. Divergence beyond tolerance is an error.
    """
    if not sample_images:
        raise ExportError("parity check needs at least one sample image")
    graph = load_graph(graph_path)
    source_model.eval()
    deviations = []
    for sample in sample_images:
        arr = _load_sample(sample)
        batch = arr.astype(np.float32).transpose(2, 0, 1)[np.newaxis]
        ours = graph.run({graph.input_info.name: batch})[graph.output_info.name]
        with torch.no_grad():
            theirs = source_model(torch.from_numpy(batch)).numpy()
        deviations.append(float(np.abs(ours - theirs).max()))
    report = ParityReport(str(graph_path), deviations, tolerance)
    if not report.passed:
        raise ExportError(
            f"graph {graph_path} diverges from its source model: worst "
            f"deviation {report.worst:.3e} exceeds tolerance {tolerance:.1e}"
        )
    return report


def write_probe_images(directory: str | Path, seed: int = 0, count: int = 2) -> list[Path]:
    """Deterministic probe set: one all-zero frame plus seeded noise."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        if i == 0:
            arr = np.zeros((INPUT_SIZE, INPUT_SIZE, 3), dtype=np.uint8)
        else:
            arr = rng.integers(0, 256, size=(INPUT_SIZE, INPUT_SIZE, 3), dtype=np.uint8)
        path = directory / f"probe_{i}.png"
        Image.fromarray(arr).save(path)
        paths.append(path)
    return paths


def write_export_manifest(path: str | Path, entries: Sequence[ExportManifest]) -> None:
    """Serialize manifest rows as a header line plus one row per graph."""
    if not entries:
        raise ExportError("refusing to write an empty export manifest")
    lines = ["\t".join(_COLUMNS)]
    for e in entries:
        lines.append(f"{e.variant}\t{e.path}\t{e.sha256}\t{e.output_len}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_export_manifest(path: str | Path) -> list[ExportManifest]:
    """Parse a manifest written by :func:`write_export_manifest`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot read export manifest {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != _COLUMNS:
        raise ExportError(f"{path}:1: expected header {' '.join(_COLUMNS)}")
    entries = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(_COLUMNS):
            raise ExportError(
                f"{path}:{number}: expected {len(_COLUMNS)} columns, got {len(fields)}"
            )
        variant, name, digest, length = fields
        try:
            entries.append(ExportManifest(variant, name, digest, int(length)))
        except ValueError as exc:
            raise ExportError(f"{path}:{number}: {exc}") from exc
    if not entries:
        raise ExportError(f"{path}: manifest contains no rows")
    return entries
