"""Concentration measures for the spatial distribution of supply.

Operates on nonnegative per-cell totals (e.g. weekly supply hours per
hexagon). The Gini coefficient uses the sorted closed form, which agrees
with both the mean-absolute-difference definition and the area under the
Lorenz curve; the curve itself is exposed for plotting and for reporting
percentile shares.
"""

from __future__ import annotations

import numpy as np


def _validated(values) -> np.ndarray:
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one cell value")
    if not np.isfinite(x).all():
        raise ValueError("cell values must be finite")
    if (x < 0).any():
        raise ValueError("cell values must be nonnegative")
    if x.sum() <= 0:
        raise ValueError("total supply is zero; concentration is undefined")
    return x


def lorenz(values) -> tuple[np.ndarray, np.ndarray]:
    """Lorenz curve points (population share, cumulative value share).

    Returns two arrays of length n+1 starting at (0, 0) and ending at
    (1, 1), with cells sorted ascending.
    """
    x = np.sort(_validated(values))
    n = x.size
    p = np.arange(n + 1) / n
    share = np.concatenate([[0.0], np.cumsum(x)]) / x.sum()
    return p, share


def gini(values) -> float:
    """Gini coefficient of nonnegative cell values.

    0 for a perfectly even split, (n-1)/n when a single cell holds
    everything.
    """
    x = np.sort(_validated(values))
    n = x.size
    i = np.arange(1, n + 1)
    return float((2.0 * (i * x).sum() / (n * x.sum())) - (n + 1.0) / n)
