"""Cross-validation harness, confusion matrices and metrics.

Folds are stratified: within each class, samples are shuffled by the
seed and dealt round-robin, with the dealing position carried from one
class to the next so overall fold sizes stay as even as possible.

Per-fold confusion matrices are summed into one pooled matrix per
variant before metrics are computed (a per-fold-mean alternative is
available). The binary positive class is index 1 (abnormal):
sensitivity is the detection rate of disease.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cervix_cad.errors import ConfigError, DataError
from cervix_cad.fusion import FeatureMatrix, MinMaxScaler
from cervix_cad.lda import DEFAULT_SHRINKAGE, fit_lda, project
from cervix_cad.svm import (
    DEFAULT_C,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    GRAM_MAX,
    decision_scores,
    predict_multiclass,
    train_binary,
    train_multiclass,
)

VARIANTS = ("rn50", "rn101", "rn152", "fusion", "fusion+lda")
_BLOCK_INDEX = {"rn50": 0, "rn101": 1, "rn152": 2}


@dataclass
class FoldSplit:
    """Per-sample fold assignment for k-fold cross-validation."""

    k: int
    assignments: np.ndarray
    seed: int


def stratified_kfold(labels: np.ndarray, k: int, seed: int) -> FoldSplit:
    """Stratified assignment: per-class seeded shuffle, then round-robin
    dealing with the fold pointer continuing across classes."""
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")
    rng = np.random.default_rng(seed)
    assignments = np.full(labels.shape[0], -1, dtype=np.int64)
    pointer = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            raise DataError(
                f"class {c} has {members.size} samples, fewer than k={k}"
            )
        for idx in rng.permutation(members):
            assignments[idx] = pointer % k
            pointer += 1
    return FoldSplit(k, assignments, seed)


def grouped_stratified_kfold(
    labels: np.ndarray, groups: Sequence[str], k: int, seed: int
) -> FoldSplit:
    """Stratified assignment that keeps whole groups together.

    Used when augmented copies must stay in their source image's fold;
    groups are dealt instead of samples, so per-class fold sizes can
    differ by more than one when group sizes do.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")
    if len(groups) != labels.shape[0]:
        raise DataError(f"{len(groups)} group keys for {labels.shape[0]} samples")
    group_label: dict[str, int] = {}
    group_members: dict[str, list[int]] = {}
    group_order: list[str] = []
    for i, g in enumerate(groups):
        if g not in group_label:
            group_label[g] = labels[i]
            group_members[g] = []
            group_order.append(g)
        elif group_label[g] != labels[i]:
            raise DataError(f"group {g!r} spans multiple classes")
        group_members[g].append(i)

    rng = np.random.default_rng(seed)
    assignments = np.full(labels.shape[0], -1, dtype=np.int64)
    pointer = 0
    for c in np.unique(labels):
        class_groups = [g for g in group_order if group_label[g] == c]
        if len(class_groups) < k:
            raise DataError(
                f"class {c} has {len(class_groups)} groups, fewer than k={k}"
            )
        for gi in rng.permutation(len(class_groups)):
            fold = pointer % k
            pointer += 1
            assignments[group_members[class_groups[gi]]] = fold
    return FoldSplit(k, assignments, seed)


def confusion_matrix(
    truth: np.ndarray, predicted: np.ndarray, n_classes: int
) -> np.ndarray:
    """C x C count matrix, rows = truth, columns = prediction."""
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise DataError("truth and prediction vectors differ in length")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return counts


@dataclass
class Metrics:
    """Sensitivity, specificity and accuracy in percent."""

    sensitivity: float
    specificity: float
    accuracy: float
    zero_denominator: bool = False


def _rate(numerator: float, denominator: float) -> tuple[float, bool]:
    if denominator == 0:
        return 0.0, True
    return 100.0 * numerator / denominator, False


def compute_metrics(counts: np.ndarray) -> Metrics:
    """Metrics of one confusion matrix.

    Binary: sensitivity TP/(TP+FN), specificity TN/(TN+FP) with class 1
    positive. Ternary: macro-averaged one-vs-rest sensitivity and
    specificity, accuracy trace/total. A zero denominator yields 0 for
    that term and sets the warning flag.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or total == 0:
        raise DataError(f"confusion matrix of shape {counts.shape} with {total} entries")
    c = counts.shape[0]
    accuracy, acc_flag = _rate(float(np.trace(counts)), float(total))
    if c == 2:
        tp, fn = counts[1, 1], counts[1, 0]
        tn, fp = counts[0, 0], counts[0, 1]
        sens, s_flag = _rate(tp, tp + fn)
        spec, p_flag = _rate(tn, tn + fp)
        return Metrics(sens, spec, accuracy, s_flag or p_flag or acc_flag)
    sens_terms, spec_terms, flag = [], [], acc_flag
    for i in range(c):
        tp = counts[i, i]
        fn = counts[i].sum() - tp
        fp = counts[:, i].sum() - tp
        tn = total - tp - fn - fp
        sens, s_flag = _rate(tp, tp + fn)
        spec, p_flag = _rate(tn, tn + fp)
        sens_terms.append(sens)
        spec_terms.append(spec)
        flag = flag or s_flag or p_flag
    return Metrics(
        float(np.mean(sens_terms)), float(np.mean(spec_terms)), accuracy, flag
    )


@dataclass
class MetricsReport:
    """Evaluation result for one (variant, k) pair."""

    variant: str
    k: int
    seed: int
    summary: Metrics
    per_fold: list[Metrics] = field(default_factory=list)
    pooled_counts: np.ndarray | None = None


def _variant_features(features: FeatureMatrix, variant: str) -> FeatureMatrix:
    if variant in ("fusion", "fusion+lda"):
        return features
    if variant not in _BLOCK_INDEX:
        raise ConfigError(f"unknown pipeline variant {variant!r}")
    if features.dim % 3 != 0:
        raise DataError(
            f"cannot slice variant {variant!r} from a matrix of width "
            f"{features.dim} (not divisible by 3)"
        )
    width = features.dim // 3
    start = _BLOCK_INDEX[variant] * width
    return features.block(start, start + width)


def _fit_and_predict(
    train: FeatureMatrix,
    test: FeatureMatrix,
    with_lda: bool,
    c_param: float,
    gamma: float,
    tol: float,
    max_iter: int,
    seed_parts: list[int],
    gram: np.ndarray | None = None,
) -> np.ndarray:
    """Already-scaled train/test in, held-out predictions out."""
    if with_lda:
        model = fit_lda(train, gamma)
        train = project(model, train)
        test = project(model, test)
        gram = None  # projection invalidates any precomputed gram
    if len(train.classes) == 2:
        svm = train_binary(train, c_param, tol, max_iter, seed=seed_parts, gram=gram)
        return (decision_scores(svm, test.values) >= 0).astype(np.int64)
    msvm = train_multiclass(train, c_param, tol, max_iter, seed=seed_parts, gram=gram)
    return predict_multiclass(msvm, test.values)


def run_experiment(
    features: FeatureMatrix,
    variants: Sequence[str],
    k: int,
    seed: int,
    c_param: float = DEFAULT_C,
    gamma: float = DEFAULT_SHRINKAGE,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    per_fold_mean: bool = False,
    groups: Sequence[str] | None = None,
) -> list[MetricsReport]:
    """Cross-validate every requested variant on one feature matrix.

    Per fold: scaler fit on the training rows, optional discriminant
    fit on the training rows, SVM trained, held-out rows scored. The
    pooled confusion matrix feeds the summary metrics unless
    ``per_fold_mean`` asks for the mean of per-fold metrics instead.
    """
    if groups is None:
        split = stratified_kfold(features.labels, k, seed)
    else:
        split = grouped_stratified_kfold(features.labels, groups, k, seed)
    n_classes = len(features.classes)
    for variant in variants:
        _variant_features(features, variant)  # validate names and widths upfront
    can_split = features.dim % 3 == 0
    counts: list[list[np.ndarray]] = [[] for _ in variants]
    for fold in range(k):
        test_idx = np.flatnonzero(split.assignments == fold)
        train_idx = np.flatnonzero(split.assignments != fold)
        scaler = MinMaxScaler().fit(features.values[train_idx])
        train = FeatureMatrix(
            scaler.transform(features.values[train_idx]),
            features.labels[train_idx],
            features.classes,
        )
        test = FeatureMatrix(
            scaler.transform(features.values[test_idx]),
            features.labels[test_idx],
            features.classes,
        )
        # Gram of scaled rows decomposes over column blocks, so the three
        # per-backbone grams also assemble the fusion gram (plus the bias
        # column's all-ones contribution).
        blocks: dict[int, np.ndarray] = {}
        if can_split and train_idx.size <= GRAM_MAX:
            wanted: set[int] = set()
            for variant in variants:
                if variant in _BLOCK_INDEX:
                    wanted.add(_BLOCK_INDEX[variant])
                elif variant == "fusion":
                    wanted.update(_BLOCK_INDEX.values())
            width = features.dim // 3
            for b in sorted(wanted):
                part = train.values[:, b * width : (b + 1) * width]
                blocks[b] = part @ part.T
        for vi, variant in enumerate(variants):
            if variant in _BLOCK_INDEX and _BLOCK_INDEX[variant] in blocks:
                gram = blocks[_BLOCK_INDEX[variant]] + 1.0
            elif variant == "fusion" and len(blocks) == 3:
                gram = blocks[0] + blocks[1] + blocks[2] + 1.0
            else:
                gram = None
            predicted = _fit_and_predict(
                _variant_features(train, variant),
                _variant_features(test, variant),
                variant == "fusion+lda",
                c_param,
                gamma,
                tol,
                max_iter,
                seed_parts=[seed, vi, k, fold],
                gram=gram,
            )
            counts[vi].append(
                confusion_matrix(test.labels, predicted, n_classes)
            )
    reports = []
    for vi, variant in enumerate(variants):
        fold_counts = counts[vi]
        pooled = np.sum(fold_counts, axis=0)
        per_fold = [compute_metrics(m) for m in fold_counts]
        if per_fold_mean:
            summary = Metrics(
                float(np.mean([m.sensitivity for m in per_fold])),
                float(np.mean([m.specificity for m in per_fold])),
                float(np.mean([m.accuracy for m in per_fold])),
                any(m.zero_denominator for m in per_fold),
            )
        else:
            summary = compute_metrics(pooled)
        reports.append(MetricsReport(variant, k, seed, summary, per_fold, pooled))
    return reports
