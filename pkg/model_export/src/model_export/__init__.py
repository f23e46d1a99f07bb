"""Export tool: torchvision residual networks to portable descriptor graphs."""

__version__ = "0.1.0"

from model_export.backbone import VARIANTS, HeadlessDescriptor, build_source_model
from model_export.errors import ExportError
from model_export.export import (
    ExportManifest,
    ParityReport,
    export_backbone,
    parity_check,
    read_export_manifest,
    write_export_manifest,
    write_probe_images,
)

__all__ = [
    "ExportError",
    "ExportManifest",
    "HeadlessDescriptor",
    "ParityReport",
    "VARIANTS",
    "__version__",
    "build_source_model",
    "export_backbone",
    "parity_check",
    "read_export_manifest",
    "write_export_manifest",
    "write_probe_images",
]
