"""Distributional and geometric metrics for scoring distilled particle sets
against their target class distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class MetricReport:
    sliced_wasserstein: float
    mmd_rbf: float
    modes_covered: int
    mode_counts: tuple[int, ...]


def _projected_w1(pa: np.ndarray, pb: np.ndarray) -> float:
    """1-D Wasserstein-1 between empirical samples.

    Equal sizes reduce to the mean absolute difference of the sorted
    samples; otherwise both empirical quantile functions are read at the
    midpoint grid of the larger size.
    """
    if pa.shape[0] == pb.shape[0]:
        return float(np.mean(np.abs(np.sort(pa) - np.sort(pb))))
    m = max(pa.shape[0], pb.shape[0])
    q = (np.arange(m) + 0.5) / m
    qa = np.quantile(pa, q, method="inverted_cdf")
    qb = np.quantile(pb, q, method="inverted_cdf")
    return float(np.mean(np.abs(qa - qb)))


def sliced_wasserstein(
    a: np.ndarray, b: np.ndarray, projections: int = 64, seed: int = 0
) -> float:
    """Mean 1-D Wasserstein-1 distance over random unit projections."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ParameterError("point sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(projections):
        u = rng.standard_normal(a.shape[1])
        u /= np.linalg.norm(u)
        total += _projected_w1(a @ u, b @ u)
    return total / projections


def mmd_rbf(a: np.ndarray, b: np.ndarray, bandwidth: float) -> float:
    """Unbiased squared maximum mean discrepancy with an RBF kernel
    exp(-||x - y||^2 / (2 bandwidth^2)), clipped at zero."""
    if not bandwidth > 0:
        raise ParameterError(f"bandwidth must be > 0, got {bandwidth}")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise ParameterError("unbiased estimate needs at least 2 points per set")

    def sq_dists(x, y):
        return (
            (x**2).sum(1)[:, None] + (y**2).sum(1)[None, :] - 2.0 * x @ y.T
        )

    h2 = 2.0 * bandwidth**2
    kaa = np.exp(-np.maximum(sq_dists(a, a), 0.0) / h2)
    kbb = np.exp(-np.maximum(sq_dists(b, b), 0.0) / h2)
    kab = np.exp(-np.maximum(sq_dists(a, b), 0.0) / h2)
    term_a = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    return float(max(term_a + term_b - 2.0 * kab.mean(), 0.0))


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    """Median pairwise distance of the pooled sets (bandwidth heuristic)."""
    x = np.concatenate([np.atleast_2d(a), np.atleast_2d(b)])
    diff = x[:, None, :] - x[None, :, :]
    dists = np.sqrt((diff**2).sum(-1))
    vals = dists[np.triu_indices(x.shape[0], k=1)]
    med = float(np.median(vals))
    return med if med > 0 else 1.0


def mode_coverage(
    points: np.ndarray, centers: np.ndarray, radius: float
) -> tuple[int, tuple[int, ...]]:
    """Count points within `radius` of each center; a mode counts as covered
    when it captures at least 5% of the points."""
    if not radius > 0:
        raise ParameterError(f"radius must be > 0, got {radius}")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    diff = points[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diff**2).sum(-1))
    counts = tuple(int(c) for c in (dists <= radius).sum(axis=0))
    threshold = 0.05 * points.shape[0]
    covered = sum(1 for c in counts if c >= threshold)
    return covered, counts


def metric_report(
    points: np.ndarray,
    target_samples: np.ndarray,
    mode_centers: np.ndarray,
    mode_radius: float | None = None,
    projections: int = 64,
    seed: int = 0,
    bandwidth: float | None = None,
) -> MetricReport:
    """Bundle the three metrics with the default heuristics: median-distance
    bandwidth and mode radius of a quarter of the minimum inter-mode gap."""
    centers = np.atleast_2d(mode_centers)
    if mode_radius is None:
        if centers.shape[0] > 1:
            diff = centers[:, None, :] - centers[None, :, :]
            gaps = np.sqrt((diff**2).sum(-1))
            mode_radius = 0.25 * float(
                gaps[np.triu_indices(centers.shape[0], k=1)].min()
            )
        else:
            mode_radius = 1.0
    if bandwidth is None:
        bandwidth = median_bandwidth(points, target_samples)
    covered, counts = mode_coverage(points, centers, mode_radius)
    return MetricReport(
        sliced_wasserstein=sliced_wasserstein(points, target_samples, projections, seed),
        mmd_rbf=mmd_rbf(points, target_samples, bandwidth),
        modes_covered=covered,
        mode_counts=counts,
    )
