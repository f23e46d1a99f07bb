"""Fisher linear discriminant analysis with shrinkage regularization.

The within-class scatter of high-dimensional descriptor data (d = 6144,
n in the hundreds) is always singular, so the within-class scatter is
blended with a scaled identity,

    S_w~ = (1 - gamma) S_w + gamma (trace(S_w) / d) I,

and the generalized eigenproblem S_b w = lambda S_w~ w is solved in the
subspace spanned by the centered data. Every eigenvector with a
positive Fisher value lies in that span (outside it both scatters
vanish), so the restriction is exact while the cost stays
O(n^2 d + n^3) instead of O(d^3).
"""

from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from cervix_cad.errors import DataError, NumericalError
from cervix_cad.fusion import FeatureMatrix

LDA_MAGIC = b"LDA1"
DEFAULT_SHRINKAGE = 0.1


@dataclass
class ScatterPair:
    """Within- and between-class scatter with the means that built them.

    Materializes d x d matrices; meant for analysis and small problems.
    :func:`fit_lda` never forms these for high-dimensional data.
    """

    within: np.ndarray
    between: np.ndarray
    class_means: np.ndarray
    global_mean: np.ndarray
    class_counts: np.ndarray


@dataclass
class LdaModel:
    """Fitted projection to the C-1 most discriminative directions."""

    projection: np.ndarray  # (d, k), unit-norm columns
    shrinkage: float  # gamma actually used (after any escalation)
    class_count: int
    training_dim: int
    eigenvalues: np.ndarray  # descending Fisher values, length k


def _class_stats(m: FeatureMatrix):
    counts = np.bincount(m.labels, minlength=len(m.classes))
    missing = [m.classes[i] for i in range(len(m.classes)) if counts[i] == 0]
    if missing:
        raise DataError(f"classes with no samples: {', '.join(missing)}")
    means = np.vstack(
        [m.values[m.labels == c].mean(axis=0) for c in range(len(m.classes))]
    )
    return counts, means


def compute_scatter(m: FeatureMatrix) -> ScatterPair:
    """Within- and between-class scatter by direct summation."""
    counts, means = _class_stats(m)
    d = m.dim
    global_mean = m.values.mean(axis=0)
    within = np.zeros((d, d))
    between = np.zeros((d, d))
    for c in range(len(m.classes)):
        dev = m.values[m.labels == c] - means[c]
        within += dev.T @ dev
        offset = means[c] - global_mean
        between += counts[c] * np.outer(offset, offset)
    return ScatterPair(within, between, means, global_mean, counts)


def fisher_criterion(
    projection: np.ndarray, scatter: ScatterPair, shrinkage: float
) -> float:
    """trace((W' S_w~ W)^-1 (W' S_b W)) for a candidate projection."""
    d = scatter.within.shape[0]
    tau = np.trace(scatter.within) / d
    sw = (1.0 - shrinkage) * scatter.within + shrinkage * tau * np.eye(d)
    wsw = projection.T @ sw @ projection
    wsb = projection.T @ scatter.between @ projection
    return float(np.trace(np.linalg.solve(wsw, wsb)))


def fit_lda(m: FeatureMatrix, shrinkage: float = DEFAULT_SHRINKAGE) -> LdaModel:
    """Fit the shrinkage-regularized Fisher projection.

    Keeps the C-1 eigenvectors of largest eigenvalue, unit-normalized,
    ordered by descending eigenvalue, with the largest-magnitude
    component of each made positive. If the regularized within-class
    scatter is numerically singular the shrinkage escalates tenfold
    (capped at 1.0) with a warning before giving up.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise DataError(f"shrinkage must be in [0, 1], got {shrinkage}")
    n_classes = len(m.classes)
    if m.n <= n_classes:
        raise DataError(
            f"need more samples ({m.n}) than classes ({n_classes}) to fit"
        )
    counts, means = _class_stats(m)
    k = n_classes - 1

    global_mean = m.values.mean(axis=0)
    centered = m.values - global_mean

    # Orthonormal basis of the data span. Rank-deficient directions
    # carry no scatter, so they are dropped up front.
    _, svals, vt = scipy.linalg.svd(centered, full_matrices=False)
    if svals.size == 0 or svals[0] == 0.0:
        raise NumericalError("degenerate data: all rows identical")
    rank = int(np.sum(svals > svals[0] * max(centered.shape) * np.finfo(float).eps))
    basis = vt[:rank].T  # (d, r)
    if rank < k:
        raise NumericalError(
            f"data rank {rank} cannot support {k} discriminant directions"
        )

    z = centered @ basis  # (n, r)
    mean_z = (means - global_mean) @ basis  # (C, r)
    sw_r = np.zeros((rank, rank))
    for c in range(n_classes):
        dev = z[m.labels == c] - mean_z[c]
        sw_r += dev.T @ dev
    sb_r = (mean_z * counts[:, None]).T @ mean_z

    tau = np.trace(sw_r) / m.dim  # trace(S_w) computed in the span
    gamma = shrinkage
    while True:
        sw_shrunk = (1.0 - gamma) * sw_r + gamma * tau * np.eye(rank)
        try:
            eigvals, eigvecs = scipy.linalg.eigh(sb_r, sw_shrunk)
            break
        except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
            if gamma >= 1.0:
                raise NumericalError(
                    "within-class scatter singular even at shrinkage 1.0; "
                    "the data has no within-class variation"
                ) from None
            escalated = min(1.0, gamma * 10.0) if gamma > 0 else 1e-3
            warnings.warn(
                f"within-class scatter singular at shrinkage {gamma}; "
                f"escalating to {escalated}",
                RuntimeWarning,
                stacklevel=2,
            )
            gamma = escalated

    order = np.argsort(eigvals)[::-1][:k]
    top_vals = np.clip(eigvals[order], 0.0, None)
    projection = basis @ eigvecs[:, order]  # back to d-space

    norms = np.linalg.norm(projection, axis=0)
    if np.any(norms == 0):
        raise NumericalError("zero-norm discriminant direction")
    projection = projection / norms
    for j in range(projection.shape[1]):
        col = projection[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            projection[:, j] = -col

    return LdaModel(projection, gamma, n_classes, m.dim, top_vals)


def project(model: LdaModel, m: FeatureMatrix) -> FeatureMatrix:
    """Apply a fitted projection, keeping labels aligned."""
    if m.dim != model.training_dim:
        raise DataError(
            f"model was fitted on d={model.training_dim}, got d={m.dim}"
        )
    return FeatureMatrix(m.values @ model.projection, m.labels, m.classes)


def save_lda(path: str | os.PathLike, model: LdaModel) -> None:
    """Serialize: magic, u32 d, u32 k, f64 gamma, column-major f64 matrix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d, k = model.projection.shape
    payload = b"".join(
        [
            LDA_MAGIC,
            struct.pack("<IId", d, k, model.shrinkage),
            model.projection.astype("<f8").tobytes(order="F"),
        ]
    )
    path.write_bytes(payload)


def load_lda(path: str | os.PathLike) -> LdaModel:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read projection model {path}: {exc}") from exc
    header = len(LDA_MAGIC) + struct.calcsize("<IId")
    if len(buf) < header or buf[: len(LDA_MAGIC)] != LDA_MAGIC:
        raise DataError(f"projection model {path} is invalid: bad magic")
    d, k, gamma = struct.unpack_from("<IId", buf, len(LDA_MAGIC))
    expected = header + d * k * 8
    if len(buf) != expected:
        raise DataError(
            f"projection model {path} is invalid: {len(buf)} bytes, "
            f"expected {expected}"
        )
    projection = np.frombuffer(buf, dtype="<f8", offset=header).reshape(
        (d, k), order="F"
    ).copy()
    return LdaModel(projection, gamma, k + 1, d, np.array([]))
