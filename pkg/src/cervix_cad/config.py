"""Experiment configuration: line-oriented ``key = value`` files.

Unknown keys, type errors and missing mandatory fields are reported
with their line numbers. Defaults: c = 1.0, gamma = 0.1, k = 5,10 and
all five pipeline variants.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from cervix_cad.errors import ConfigError
from cervix_cad.evaluate import VARIANTS
from cervix_cad.manifest import BINARY_CLASSES, TERNARY_CLASSES

MODEL_KEYS = ("model_rn50", "model_rn101", "model_rn152")


@dataclass
class ExperimentConfig:
    """Typed, validated pipeline configuration."""

    dataset_dir: Path
    scheme: str
    seed: int
    model_paths: dict[str, Path]
    out_dir: Path
    k: list[int] = field(default_factory=lambda: [5, 10])
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    c: float = 1.0
    gamma: float = 0.1
    fallback_crop: float | None = None
    split_before_augment: bool = False
    per_fold_mean: bool = False

    def resolved_lines(self) -> list[str]:
        """Canonical ``key = value`` lines with all defaults filled."""
        lines = [
            f"dataset_dir = {self.dataset_dir}",
            f"scheme = {self.scheme}",
            f"seed = {self.seed}",
        ]
        for key in MODEL_KEYS:
            variant = key.removeprefix("model_")
            lines.append(f"{key} = {self.model_paths[variant]}")
        lines.extend(
            [
                f"k = {','.join(str(v) for v in self.k)}",
                f"variants = {','.join(self.variants)}",
                f"c = {self.c}",
                f"gamma = {self.gamma}",
                f"fallback_crop = "
                + ("none" if self.fallback_crop is None else f"center:{self.fallback_crop}"),
                f"split_before_augment = {str(self.split_before_augment).lower()}",
                f"per_fold_mean = {str(self.per_fold_mean).lower()}",
                f"out_dir = {self.out_dir}",
            ]
        )
        return lines

    def content_hash(self) -> str:
        """Hash of the resolved configuration, used for stage stamps."""
        body = "\n".join(self.resolved_lines())
        return hashlib.sha256(body.encode("utf-8")).hexdigest()

    def classes(self) -> tuple[str, ...]:
        return BINARY_CLASSES if self.scheme == "binary" else TERNARY_CLASSES


def parse_crop(text: str) -> float:
    """Parse a ``center:<frac>`` crop argument."""
    if not text.startswith("center:"):
        raise ConfigError(
            f"crop must look like center:<fraction>, got {text!r}"
        )
    try:
        frac = float(text.removeprefix("center:"))
    except ValueError:
        raise ConfigError(f"crop fraction is not a number in {text!r}") from None
    if not 0.0 < frac <= 1.0:
        raise ConfigError(f"crop fraction must be in (0, 1], got {frac}")
    return frac


def _parse_bool(value: str, key: str, lineno: int) -> bool:
    if value in ("true", "false"):
        return value == "true"
    raise ConfigError(f"line {lineno}: {key} must be true or false, got {value!r}")


def parse_k_list(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"fold list must be comma-separated integers, got {text!r}") from None
    if not ks or any(k < 2 for k in ks):
        raise ConfigError(f"every fold count must be at least 2, got {text!r}")
    return ks


def parse_variant_list(text: str) -> list[str]:
    variants = [part.strip() for part in text.split(",") if part.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(
            f"unknown variants: {', '.join(unknown)} (known: {', '.join(VARIANTS)})"
        )
    if not variants:
        raise ConfigError("variant list is empty")
    return variants


def validate_config(path: str | os.PathLike) -> ExperimentConfig:
    """Parse and validate a configuration file.

    All referenced paths must exist; seed, dataset_dir, scheme, the
    three model paths and out_dir are mandatory.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
        raw[key] = (value, lineno)

    known = {
        "dataset_dir",
        "scheme",
        "seed",
        "out_dir",
        "k",
        "variants",
        "c",
        "gamma",
        "fallback_crop",
        "split_before_augment",
        "per_fold_mean",
        *MODEL_KEYS,
    }
    for key, (_value, lineno) in raw.items():
        if key not in known:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")

    def require(key: str) -> tuple[str, int]:
        if key not in raw:
            raise ConfigError(f"{path}: missing mandatory key {key!r}")
        return raw[key]

    value, lineno = require("scheme")
    if value not in ("binary", "ternary"):
        raise ConfigError(
            f"{path}: line {lineno}: scheme must be binary or ternary, got {value!r}"
        )
    scheme = value

    value, lineno = require("seed")
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError(f"{path}: line {lineno}: seed must be an integer") from None
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"{path}: line {lineno}: seed must fit in 64 bits")

    value, lineno = require("dataset_dir")
    dataset_dir = Path(value)
    if not dataset_dir.is_dir():
        raise ConfigError(f"{path}: line {lineno}: dataset_dir {value!r} does not exist")

    model_paths = {}
    for key in MODEL_KEYS:
        value, lineno = require(key)
        model_path = Path(value)
        if not model_path.is_file():
            raise ConfigError(f"{path}: line {lineno}: {key} {value!r} does not exist")
        model_paths[key.removeprefix("model_")] = model_path

    value, _lineno = require("out_dir")
    out_dir = Path(value)

    config = ExperimentConfig(dataset_dir, scheme, seed, model_paths, out_dir)

    if "k" in raw:
        value, lineno = raw["k"]
        try:
            config.k = parse_k_list(value)
        except ConfigError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    if "variants" in raw:
        value, lineno = raw["variants"]
        try:
            config.variants = parse_variant_list(value)
        except ConfigError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    if "c" in raw:
        value, lineno = raw["c"]
        try:
            config.c = float(value)
        except ValueError:
            raise ConfigError(f"{path}: line {lineno}: c must be a number") from None
        if config.c <= 0:
            raise ConfigError(f"{path}: line {lineno}: c must be positive")
    if "gamma" in raw:
        value, lineno = raw["gamma"]
        try:
            config.gamma = float(value)
        except ValueError:
            raise ConfigError(f"{path}: line {lineno}: gamma must be a number") from None
        if not 0.0 <= config.gamma <= 1.0:
            raise ConfigError(f"{path}: line {lineno}: gamma must be in [0, 1]")
    if "fallback_crop" in raw:
        value, lineno = raw["fallback_crop"]
        if value != "none":
            try:
                config.fallback_crop = parse_crop(value)
            except ConfigError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    if "split_before_augment" in raw:
        value, lineno = raw["split_before_augment"]
        config.split_before_augment = _parse_bool(value, "split_before_augment", lineno)
    if "per_fold_mean" in raw:
        value, lineno = raw["per_fold_mean"]
        config.per_fold_mean = _parse_bool(value, "per_fold_mean", lineno)

    return config
