"""Acceptance gate: the pipeline's published behavioral guarantees.

One test per guarantee, each self-timed against its stated budget.
Tolerances are part of the contract and appear inline; the synthetic
end-to-end runs use frozen generator seeds so expected scores are
stable across machines.
"""

import shutil
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from cervix_cad.balancing import plan_balancing
from cervix_cad.cli import main
from cervix_cad.descriptors import read_cache
from cervix_cad.evaluate import (
    VARIANTS,
    compute_metrics,
    run_experiment,
    stratified_kfold,
)
from cervix_cad.fusion import FeatureMatrix, MinMaxScaler, fuse
from cervix_cad.lda import compute_scatter, fisher_criterion, fit_lda
from cervix_cad.manifest import read_manifest
from cervix_cad.svm import train_binary
from helpers import tiny_backbone, write_class_dirs


class Budget:
    """Wall-clock budget check for one criterion."""

    def __init__(self, seconds: float):
        self.seconds = seconds
        self.start = time.perf_counter()

    def assert_within(self):
        elapsed = time.perf_counter() - self.start
        assert elapsed < self.seconds, (
            f"criterion exceeded its {self.seconds:.0f}s budget ({elapsed:.1f}s)"
        )


def test_balancing_arithmetic():
    budget = Budget(1.0)

    binary = plan_balancing({"normal": 75, "abnormal": 374}, "binary", rng_seed=0)
    assert binary.stage_targets == (374,)
    counts = binary.planned_counts({"normal": 75, "abnormal": 374})
    assert counts == {"normal": 374, "abnormal": 374}
    assert sum(counts.values()) == 748

    raw = {"type1": 226, "type2": 63, "type3": 87}
    ternary = plan_balancing(raw, "ternary", rng_seed=0)
    assert ternary.stage_targets == (315, 1575)
    counts = ternary.planned_counts(raw)
    assert counts == {"type1": 315 * 5, "type2": 315 * 5, "type3": 315 * 5}
    assert sum(counts.values()) == 4725
    # after stage 1 every class holds exactly 315 images: the kept
    # originals plus the exact rotate/flip copies (seed 0 entries)
    for label in raw:
        stage1_copies = sum(
            1 for e in ternary.entries if e.label == label and e.seed == 0
        )
        assert len(ternary.keep[label]) + stage1_copies == 315

    budget.assert_within()


def _metrics_oracle(counts: np.ndarray) -> tuple[float, float, float]:
    """Sensitivity, specificity, accuracy in exact rational arithmetic."""

    def rate(num: int, den: int) -> Fraction:
        return Fraction(0) if den == 0 else Fraction(100 * num, den)

    total = int(counts.sum())
    c = counts.shape[0]
    acc = rate(int(np.trace(counts)), total)
    if c == 2:
        tp, fn = int(counts[1, 1]), int(counts[1, 0])
        tn, fp = int(counts[0, 0]), int(counts[0, 1])
        return float(rate(tp, tp + fn)), float(rate(tn, tn + fp)), float(acc)
    sens = Fraction(0)
    spec = Fraction(0)
    for i in range(c):
        tp = int(counts[i, i])
        fn = int(counts[i].sum()) - tp
        fp = int(counts[:, i].sum()) - tp
        tn = total - tp - fn - fp
        sens += rate(tp, tp + fn)
        spec += rate(tn, tn + fp)
    return float(sens / c), float(spec / c), float(acc)


def test_metric_formulas():
    budget = Budget(1.0)
    rng = np.random.default_rng(42)
    for trial in range(50):
        c = 2 if trial % 2 == 0 else 3
        counts = rng.integers(0, 200, size=(c, c))
        if trial % 10 == 0:
            counts[rng.integers(0, c)] = 0  # exercise zero denominators
        if counts.sum() == 0:
            counts[0, 0] = 1
        got = compute_metrics(counts)
        sens, spec, acc = _metrics_oracle(counts)
        assert abs(got.sensitivity - sens) <= 1e-12
        assert abs(got.specificity - spec) <= 1e-12
        assert abs(got.accuracy - acc) <= 1e-12
    budget.assert_within()


def test_lda_correctness():
    budget = Budget(10.0)
    rng = np.random.default_rng(7)

    # (a) two-class direction matches the regularized closed form
    for trial in range(5):
        d = 8
        a = rng.normal(size=(20, d))
        b = rng.normal(size=(20, d)) + rng.normal(scale=2.0, size=d)
        m = FeatureMatrix(
            np.vstack([a, b]), np.repeat([0, 1], 20), ("normal", "abnormal")
        )
        model = fit_lda(m, shrinkage=0.1)
        scatter = compute_scatter(m)
        tau = np.trace(scatter.within) / d
        sw = 0.9 * scatter.within + 0.1 * tau * np.eye(d)
        oracle = np.linalg.solve(sw, scatter.class_means[1] - scatter.class_means[0])
        oracle /= np.linalg.norm(oracle)
        cosine = abs(float(oracle @ model.projection[:, 0]))
        angle = float(np.arccos(min(1.0, cosine)))
        assert angle < 1e-6

    # (b) Fisher maximality against 1000 random orthonormal projections
    # on 20 small three-class instances
    for trial in range(20):
        d = int(rng.integers(3, 7))
        n = int(rng.integers(5, 11))
        centers = rng.normal(scale=2.0, size=(3, d))
        values = np.vstack([rng.normal(size=(n, d)) + centers[c] for c in range(3)])
        m = FeatureMatrix(
            values, np.repeat(np.arange(3), n), ("type1", "type2", "type3")
        )
        model = fit_lda(m)
        scatter = compute_scatter(m)
        fitted = fisher_criterion(model.projection, scatter, model.shrinkage)
        for _ in range(1000):
            q, _ = np.linalg.qr(rng.normal(size=(d, 2)))
            assert fisher_criterion(q, scatter, model.shrinkage) <= fitted + 1e-9

    # (c) translation invariance
    for trial in range(3):
        d = 6
        centers = rng.normal(scale=3.0, size=(3, d))
        values = np.vstack([rng.normal(size=(8, d)) + centers[c] for c in range(3)])
        m = FeatureMatrix(
            values, np.repeat(np.arange(3), 8), ("type1", "type2", "type3")
        )
        shift = rng.normal(scale=100.0, size=d)
        shifted = FeatureMatrix(m.values + shift, m.labels, m.classes)
        assert np.allclose(
            fit_lda(m).projection, fit_lda(shifted).projection, atol=1e-8
        )

    budget.assert_within()


def _qp_oracle_objective(x_aug: np.ndarray, y: np.ndarray, c_param: float) -> float:
    """Dual optimum from a dense interior-point QP solver."""
    from cvxopt import matrix, solvers

    n = x_aug.shape[0]
    q_mat = (y[:, None] * y[None, :]) * (x_aug @ x_aug.T)
    g = np.vstack([np.eye(n), -np.eye(n)])
    h = np.concatenate([np.full(n, c_param), np.zeros(n)])
    options = {
        "show_progress": False,
        "abstol": 1e-12,
        "reltol": 1e-12,
        "feastol": 1e-12,
    }
    sol = solvers.qp(
        matrix(q_mat), matrix(-np.ones(n)), matrix(g), matrix(h), options=options
    )
    alpha = np.asarray(sol["x"]).ravel()
    return float(alpha.sum() - 0.5 * alpha @ q_mat @ alpha)


def test_svm_correctness():
    budget = Budget(30.0)

    # two points at -1 and +1: the margin-1 separator is w=1, b=0
    two_point = FeatureMatrix(
        np.array([[-1.0], [1.0]]), np.array([0, 1]), ("normal", "abnormal")
    )
    model = train_binary(two_point, c_param=10.0)
    assert np.allclose(model.weights, [1.0], atol=1e-9)
    assert abs(model.bias) < 1e-9

    rng = np.random.default_rng(20250801)
    for trial in range(10):
        n_pos = int(rng.integers(6, 15))
        pos = rng.normal(scale=0.6, size=(n_pos, 2)) + [2.0, 2.0]
        neg = rng.normal(scale=0.6, size=(20 - n_pos, 2)) - [2.0, 2.0]
        values = np.vstack([pos, neg])
        labels = np.array([1] * n_pos + [0] * (20 - n_pos))
        order = rng.permutation(20)
        m = FeatureMatrix(values[order], labels[order], ("normal", "abnormal"))

        model = train_binary(m, c_param=1.0, tol=1e-8, max_iter=50000, seed=trial)
        assert model.converged
        history = np.asarray(model.objective_history)
        assert np.all(np.diff(history) >= -1e-9), "dual objective regressed"

        x_aug = np.hstack([m.values, np.ones((20, 1))])
        y = np.where(m.labels == 1, 1.0, -1.0)
        oracle = _qp_oracle_objective(x_aug, y, 1.0)
        rel = abs(float(history[-1]) - oracle) / abs(oracle)
        assert rel < 1e-3, f"dual objective off by {rel:.2e} relative"

    budget.assert_within()


def test_fold_laws():
    budget = Budget(5.0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        n_classes = int(rng.integers(2, 4))
        k = int(rng.integers(2, 11))
        counts = rng.integers(k, 60, size=n_classes)
        labels = np.repeat(np.arange(n_classes), counts)
        rng.shuffle(labels)
        n = labels.size
        split = stratified_kfold(labels, k, seed=int(rng.integers(0, 2**32)))

        # coverage and disjointness: assignments are a partition of 0..n
        assert split.assignments.shape == (n,)
        assert split.assignments.min() >= 0
        assert split.assignments.max() < k
        folds = [np.flatnonzero(split.assignments == f) for f in range(k)]
        assert sum(len(f) for f in folds) == n
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(n))

        # per-class balance within one sample
        for cls in range(n_classes):
            per = np.bincount(split.assignments[labels == cls], minlength=k)
            assert per.max() - per.min() <= 1
    budget.assert_within()


def _synthetic_features(out_dir: Path, args: list[str]):
    assert main(["synth", "--out", str(out_dir)] + args) == 0
    rows = read_manifest(out_dir / "manifest.tsv")
    caches = [read_cache(out_dir / f"{v}.cdc") for v in ("rn50", "rn101", "rn152")]
    return fuse(*caches, rows)


def test_e2e_synthetic_pipeline(tmp_path):
    budget = Budget(120.0)
    features = _synthetic_features(
        tmp_path,
        [
            "--scheme", "ternary",
            "--samples-per-class", "300",
            "--sep", "10.0",  # 10x the unit within-class std
            "--seed", "20250801",
        ],
    )
    for k in (5, 10):
        reports = {
            r.variant: r
            for r in run_experiment(features, list(VARIANTS), k, seed=20250801)
        }
        lda = reports["fusion+lda"].summary
        assert lda.sensitivity == 100.0, f"k={k}: sensitivity {lda.sensitivity}"
        assert lda.specificity == 100.0, f"k={k}: specificity {lda.specificity}"
        assert lda.accuracy == 100.0, f"k={k}: accuracy {lda.accuracy}"
        assert reports["fusion"].summary.accuracy >= 99.0
    budget.assert_within()


def test_noise_ordering(tmp_path):
    budget = Budget(120.0)
    # 144 informative dimensions, the remaining 6000 pure noise
    features = _synthetic_features(
        tmp_path,
        [
            "--scheme", "ternary",
            "--samples-per-class", "200",
            "--sep", "7.0",
            "--informative", "144",
            "--seed", "7",
        ],
    )
    reports = {
        r.variant: r for r in run_experiment(features, list(VARIANTS), 5, seed=7)
    }
    lda_acc = reports["fusion+lda"].summary.accuracy
    fusion_acc = reports["fusion"].summary.accuracy
    single_accs = [reports[v].summary.accuracy for v in ("rn50", "rn101", "rn152")]
    assert lda_acc >= fusion_acc >= max(single_accs), (
        f"ordering violated: lda {lda_acc}, fusion {fusion_acc}, "
        f"singles {single_accs}"
    )
    budget.assert_within()


def test_determinism(tmp_path):
    exe = shutil.which("cervix-cad")
    command = [exe] if exe else [sys.executable, "-m", "cervix_cad.cli"]

    models = tmp_path / "models"
    models.mkdir()
    for seed, name in enumerate(("rn50", "rn101", "rn152")):
        (models / f"{name}.onnx").write_bytes(tiny_backbone(seed))
    write_class_dirs(tmp_path / "raw", {"normal": 3, "abnormal": 4}, size=32)
    out_dir = tmp_path / "out"
    config = tmp_path / "experiment.cfg"
    config.write_text(
        f"""\
dataset_dir = {tmp_path / 'raw'}
scheme = binary
seed = 13
model_rn50 = {models / 'rn50.onnx'}
model_rn101 = {models / 'rn101.onnx'}
model_rn152 = {models / 'rn152.onnx'}
out_dir = {out_dir}
k = 2
"""
    )

    outputs = ("report/metrics.tsv", "report/per_fold.tsv", "report/metrics.svg")
    captured = []
    for _run in range(2):
        if out_dir.exists():
            shutil.rmtree(out_dir)  # force a full cold rerun
        proc = subprocess.run(
            command + ["run", "--config", str(config)],
            capture_output=True,
            text=True,
            timeout=300,
        )
        assert proc.returncode == 0, proc.stderr
        captured.append({rel: (out_dir / rel).read_bytes() for rel in outputs})
    assert captured[0] == captured[1], "reruns differ byte-for-byte"


def test_minmax_laws():
    rng = np.random.default_rng(3)
    train = rng.normal(loc=5.0, scale=20.0, size=(50, 8))
    scaler = MinMaxScaler().fit(train)
    scaled = scaler.transform(train)
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0
    assert np.array_equal(scaled.min(axis=0), np.zeros(8))
    assert np.array_equal(scaled.max(axis=0), np.ones(8))

    constant = np.full((10, 1), 4.2)
    assert np.all(MinMaxScaler().fit(constant).transform(constant) == 0.0)

    scaler = MinMaxScaler().fit(np.array([[0.0], [10.0]]))
    assert scaler.transform(np.array([[12.0]]))[0, 0] == 1.2
