"""Fréchet distance between feature distributions, plus scaling-table output.

The distance compares two Gaussians fitted to feature sets:
||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The matrix square
root goes through a symmetric eigen-decomposition of S_a^{1/2} S_b S_a^{1/2}
with round-off negatives clamped, which is the numerically robust route.
Covariances use the unbiased (n-1) normalization.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .search import SearchReport
from .verifier import EmbeddingBackend, ScoreWeights

logger = logging.getLogger(__name__)

CSV_HEADER = ["method", "nfes", "alpha", "mean_score", "mean_score_scaled", "fid"]


class FrechetError(ValueError):
    """Invalid inputs or failed numerics in the Fréchet computation."""


@dataclass(frozen=True, eq=False)
class FrechetStats:
    """Sufficient statistics of a feature set: mean, covariance, count."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise FrechetError(f"inconsistent stats shapes: mean {mean.shape}, cov {cov.shape}")
        if self.count < 2:
            raise FrechetError(f"stats need at least 2 samples, got {self.count}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise FrechetError("covariance is not symmetric within 1e-12")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < -1e-10:
            raise FrechetError(f"covariance has eigenvalue {eigvals.min():.3e} below -1e-10")
        for name, arr in (("mean", mean), ("cov", cov)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_stats(features: Sequence[np.ndarray]) -> FrechetStats:
    """Sample mean and unbiased covariance of a feature set (n >= 2)."""
    if len(features) < 2:
        raise FrechetError(f"need at least 2 feature vectors, got {len(features)}")
    arrs = [np.asarray(f, dtype=np.float64) for f in features]
    dim = arrs[0].shape
    if any(a.shape != dim or a.ndim != 1 for a in arrs):
        raise FrechetError("feature vectors must share one dimension")
    mat = np.stack(arrs)
    mean = np.mean(mat, axis=0)
    cov = np.atleast_2d(np.cov(mat, rowvar=False, ddof=1))
    return FrechetStats(mean=mean, cov=cov, count=mat.shape[0])


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """Squared Wasserstein-2 distance between the two fitted Gaussians."""
    if a.dim != b.dim:
        raise FrechetError(f"dimension mismatch: {a.dim} vs {b.dim}")
    try:
        a_half = _psd_sqrt(a.cov)
        inner = a_half @ b.cov @ a_half
        inner = 0.5 * (inner + inner.T)
        vals = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as exc:
        conds = (np.linalg.cond(a.cov), np.linalg.cond(b.cov))
        raise FrechetError(f"eigen-decomposition failed (covariance conds {conds})") from exc
    tr_sqrt = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    value = mean_term + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_sqrt
    if value < -1e-8:
        raise FrechetError(f"distance {value:.3e} below numerical floor -1e-8")
    return max(value, 0.0)


@dataclass(frozen=True)
class ScalingRow:
    method: str
    nfes: int
    alpha: float
    mean_score: float
    mean_score_scaled: float
    fid: float

    def as_list(self) -> list[Any]:
        return [self.method, self.nfes, self.alpha, self.mean_score,
                self.mean_score_scaled, self.fid]


def scaling_curve(reports: Sequence[SearchReport], reference_features: Sequence[np.ndarray],
                  backend: EmbeddingBackend, weights: ScoreWeights) -> list[ScalingRow]:
    """Aggregate reports into (method, NFEs, alpha, mean score, FID) rows.

    Reports are grouped by (strategy, NFEs spent); each group's selected
    samples are embedded and compared against the reference features.
    Groups with a single report get the singleton mean and no FID (nan).
    """
    if not reports:
        logger.warning("scaling_curve called with no reports; emitting no rows")
        return []
    groups: dict[tuple[str, int], list[SearchReport]] = {}
    for report in reports:
        key = (report.config.strategy.value, report.ledger.spent)
        groups.setdefault(key, []).append(report)

    ref_stats = fit_stats(list(reference_features)) if len(reference_features) >= 2 else None
    rows = []
    for (method, nfes), group in groups.items():
        scores = [r.best.scores["combined"] for r in group]
        mean_score = float(np.mean(scores))
        if ref_stats is not None and len(group) >= 2:
            feats = [backend.embed_sample(r.best.sample) for r in group]
            fid = frechet_distance(fit_stats(feats), ref_stats)
        else:
            logger.warning("group %s@%d has too few members for FID; emitting nan", method, nfes)
            fid = float("nan")
        rows.append(ScalingRow(
            method=method, nfes=nfes, alpha=weights.alpha, mean_score=mean_score,
            mean_score_scaled=mean_score * weights.report_scale, fid=fid,
        ))
    return rows


def write_scaling_csv(rows: Sequence[ScalingRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_list())
