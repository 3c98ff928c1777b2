"""Two-sample statistics used by the sensitivity experiment."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr

CHUNK = 1024


def _mean_dist(x: np.ndarray, y: np.ndarray) -> float:
    total = 0.0
    for i in range(0, x.shape[0], CHUNK):
        total += float(cdist(x[i:i + CHUNK], y).sum())
    return total / (x.shape[0] * y.shape[0])


def energy_distance(x, y) -> float:
    """V-statistic ``2 E|X - Y| - E|X - X'| - E|Y - Y'|`` (squared energy distance, >= 0)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    val = 2.0 * _mean_dist(x, y) - _mean_dist(x, x) - _mean_dist(y, y)
    return max(val, 0.0)


def spearman(a, b) -> float:
    """Rank correlation; a constant sequence gives ``nan``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return float("nan")
    return float(spearmanr(a, b).statistic)
