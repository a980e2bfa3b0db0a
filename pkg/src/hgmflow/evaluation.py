"""Detection metrics: AUROC, score histograms, overlap statistics.

The production AUROC is the rank-sum form with average ranks on ties,
O(N log N).  A direct O(N^2) pair counter with identical tie handling lives
alongside it as an independent oracle for tests and demos.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "auroc",
    "auroc_pair_count",
    "pixel_auroc",
    "HistogramPair",
    "histogram_pair",
    "histogram_intersection",
    "write_histogram_csv",
]


def _check_two_classes(flags: np.ndarray) -> None:
    if flags.all() or not flags.any():
        raise ValueError("AUROC needs both normal and anomalous samples")


def auroc(scores, flags) -> float:
    """Probability a random anomalous score outranks a random normal one.

    `flags` marks anomalies with True; ties contribute half. Rank-sum form.
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if scores.shape != flags.shape or scores.ndim != 1:
        raise ValueError("scores and flags must be matching 1-D arrays")
    _check_two_classes(flags)
    # Average ranks: identical scores share the mean of their rank span.
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    mean_rank = upper - (counts - 1) / 2.0  # 1-based
    ranks = mean_rank[inverse]
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos
    rank_sum = ranks[flags].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auroc_pair_count(scores, flags) -> float:
    """O(N^2) pairwise counter; the oracle for the rank-sum implementation."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    _check_two_classes(flags)
    pos = scores[flags]
    neg = scores[~flags]
    wins = 0.0
    for p in pos:
        wins += float(np.sum(p > neg)) + 0.5 * float(np.sum(p == neg))
    return wins / (pos.size * neg.size)


def pixel_auroc(
    maps: np.ndarray, masks: np.ndarray, max_pixels: int = 1_000_000, seed: int = 0
) -> float:
    """AUROC over pixels, subsampled reproducibly past `max_pixels`."""
    scores = np.asarray(maps, dtype=np.float64).reshape(-1)
    flags = np.asarray(masks).reshape(-1) > 0
    if scores.size != flags.size:
        raise ValueError("maps and masks disagree in size")
    if scores.size > max_pixels:
        idx = np.random.default_rng(seed).choice(scores.size, max_pixels, replace=False)
        scores, flags = scores[idx], flags[idx]
    return auroc(scores, flags)


@dataclass
class HistogramPair:
    """Normal and anomalous histograms over one shared set of bin edges."""

    edges: np.ndarray  # (B+1,)
    normal: np.ndarray  # (B,) counts
    anomalous: np.ndarray  # (B,) counts


def histogram_pair(
    normal_values, anomalous_values, bins: int = 50, value_range=None
) -> HistogramPair:
    """Histogram both populations over identical half-open bins.

    Bins follow the numpy convention: [e_i, e_{i+1}) except the final bin,
    which closes on the right so the maximum lands inside.
    """
    normal_values = np.asarray(normal_values, dtype=np.float64)
    anomalous_values = np.asarray(anomalous_values, dtype=np.float64)
    if value_range is None:
        combined = np.concatenate([normal_values, anomalous_values])
        if combined.size == 0:
            raise ValueError("no values to histogram")
        value_range = (float(combined.min()), float(combined.max()))
        if value_range[0] == value_range[1]:
            value_range = (value_range[0] - 0.5, value_range[1] + 0.5)
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    normal, _ = np.histogram(normal_values, bins=edges)
    anomalous, _ = np.histogram(anomalous_values, bins=edges)
    return HistogramPair(edges=edges, normal=normal, anomalous=anomalous)


def histogram_intersection(pair: HistogramPair) -> float:
    """Overlap of the two bin-mass distributions, in [0, 1].

    Each histogram is normalized to unit mass first, so the statistic reads
    as the shared probability mass between normal and anomalous scores.
    """
    n_total = pair.normal.sum()
    a_total = pair.anomalous.sum()
    if n_total == 0 or a_total == 0:
        raise ValueError("both histograms need mass for an overlap statistic")
    p = pair.normal / n_total
    q = pair.anomalous / a_total
    return float(np.minimum(p, q).sum())


def write_histogram_csv(path, pair: HistogramPair) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "normal_count", "anomalous_count"])
        for i in range(pair.normal.size):
            writer.writerow(
                [
                    f"{pair.edges[i]:.10g}",
                    f"{pair.edges[i + 1]:.10g}",
                    int(pair.normal[i]),
                    int(pair.anomalous[i]),
                ]
            )
