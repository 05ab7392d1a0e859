"""Per-class PCA subspaces and the feature reconstruction error (FRE) score.

A class is modeled by its mean and an orthonormal basis of top principal
directions; the score of a vector is the l2 distance between its centered
version and the projection onto that basis. Bases are computed by thin SVD
of the centered data matrix (never the covariance) and stored as float32;
all scoring arithmetic runs in float64 so that scores recomputed from a
serialized subspace are bit-identical to in-memory ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyModelError, FitError


@dataclass(frozen=True)
class ClassSubspace:
    """Mean + orthonormal PCA basis of one class."""

    class_id: int
    mean: np.ndarray        # (D,) float32
    basis: np.ndarray       # (q, D) float32, orthonormal rows
    q: int
    variance_retained: float
    n_fit: int
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_subspace(
    vectors: np.ndarray, variance_retained: float, class_id: int = -1
) -> ClassSubspace:
    """Fit the top principal directions covering ``variance_retained`` of
    the sample variance (smallest such q; at most min(n-1, D)).

    Row signs are fixed so each basis row's largest-magnitude entry is
    positive, making fits reproducible across runs. All-identical input
    degenerates to a q=1 basis along the first coordinate axis.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise FitError("expected a 2-D sample matrix")
    n, dim = x.shape
    if n < 2:
        raise FitError(f"need at least 2 vectors to fit a subspace, got {n}")
    if not np.isfinite(x).all():
        raise FitError("non-finite value in fit data")
    if not 0 < variance_retained <= 1:
        raise FitError("variance_retained must lie in (0, 1]")

    mean = x.mean(axis=0)
    centered = x - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    mass = s**2
    total = float(mass.sum())
    if total <= n * dim * 1e-24:
        basis = np.zeros((1, dim), dtype=np.float32)
        basis[0, 0] = 1.0
        return ClassSubspace(
            class_id=class_id,
            mean=mean.astype(np.float32),
            basis=basis,
            q=1,
            variance_retained=variance_retained,
            n_fit=n,
            degenerate=True,
        )

    q_max = min(n - 1, dim)
    cumulative = np.cumsum(mass[:q_max])
    reached = np.nonzero(cumulative >= variance_retained * total - 1e-12)[0]
    q = int(reached[0]) + 1 if len(reached) else q_max

    rows = vt[:q]
    flip = rows[np.arange(q), np.argmax(np.abs(rows), axis=1)] < 0
    rows = np.where(flip[:, None], -rows, rows)
    return ClassSubspace(
        class_id=class_id,
        mean=mean.astype(np.float32),
        basis=rows.astype(np.float32),
        q=q,
        variance_retained=variance_retained,
        n_fit=n,
    )


def fre(s: ClassSubspace, u: np.ndarray) -> float:
    """Reconstruction error of one vector against one class subspace."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (s.dim,):
        raise DimensionError(f"vector has shape {u.shape}, expected ({s.dim},)")
    basis = s.basis.astype(np.float64)
    centered = u - s.mean.astype(np.float64)
    residual = centered - basis.T @ (basis @ centered)
    return float(np.linalg.norm(residual))


def fre_batch(s: ClassSubspace, pool: np.ndarray) -> np.ndarray:
    """Reconstruction errors of an (N, D) pool against one subspace."""
    x = np.asarray(pool, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != s.dim:
        raise DimensionError(f"pool has shape {x.shape}, expected (*, {s.dim})")
    basis = s.basis.astype(np.float64)
    centered = x - s.mean.astype(np.float64)
    residual = centered - (centered @ basis.T) @ basis
    return np.linalg.norm(residual, axis=1)


def min_fre(subspaces, u: np.ndarray) -> tuple[float, int]:
    """Minimum FRE over a collection of subspaces and the class achieving
    it; ties go to the smallest class id."""
    items = sorted(subspaces, key=lambda s: s.class_id)
    if not items:
        raise EmptyModelError("no class subspaces fitted")
    best_score, best_cls = np.inf, -1
    for s in items:
        score = fre(s, u)
        if score < best_score:
            best_score, best_cls = score, s.class_id
    return float(best_score), int(best_cls)


def min_fre_batch(subspaces, pool: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``min_fre`` over an (N, D) pool; returns (scores, class
    ids). Tie-breaking to the smallest class id matches the scalar path."""
    items = sorted(subspaces, key=lambda s: s.class_id)
    if not items:
        raise EmptyModelError("no class subspaces fitted")
    scores = np.stack([fre_batch(s, pool) for s in items])
    ids = np.asarray([s.class_id for s in items])
    picks = np.argmin(scores, axis=0)  # argmin takes the first (lowest id) on ties
    return scores[picks, np.arange(pool.shape[0])], ids[picks]
