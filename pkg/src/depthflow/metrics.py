"""Nonparametric two-sample statistics used as distribution-level oracles."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import binomtest


def energy_distance(x, y):
    """Energy distance between two samples, sqrt(2*E|X-Y| - E|X-X'| - E|Y-Y'|).

    Cross terms use all pairs; within terms use the unbiased (off-diagonal)
    estimator, so two samples from the same distribution score near zero.
    The squared statistic is clamped at zero before the root.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"expected [n, d] samples with equal d, got {x.shape} and {y.shape}")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("need at least two points per sample")
    n, m = x.shape[0], y.shape[0]
    cross = cdist(x, y).mean()
    dxx = cdist(x, x)
    dyy = cdist(y, y)
    within_x = dxx.sum() / (n * (n - 1))
    within_y = dyy.sum() / (m * (m - 1))
    return float(np.sqrt(max(0.0, 2.0 * cross - within_x - within_y)))


def sign_test_pvalue(wins, losses):
    """One-sided sign test: p-value that wins >= observed under a fair coin.

    Ties are excluded by the caller; returns 1.0 when no informative pairs.
    """
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def paired_sign_test(a, b):
    """Test whether paired scores `a` exceed `b`; returns (wins, losses, p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired scores must be 1-D arrays of equal length")
    wins = int(np.sum(a > b))
    losses = int(np.sum(a < b))
    return wins, losses, sign_test_pvalue(wins, losses)
