"""Cluster bootstrap over drivers.

Resamples whole drivers (all their weekly rows) with replacement so the
within-driver dependence structure is preserved. Sampled copies get fresh
distinct ids — a driver drawn twice enters as two independent clusters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd


@dataclass
class BootstrapResult:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    n_reps: int
    n_failed: int
    replicates: np.ndarray


def resample_drivers(panel: pd.DataFrame, rng: np.random.Generator) -> pd.DataFrame:
    """One driver-level resample with distinct replacement ids."""
    ids = panel["driver_id"].to_numpy()
    uniq = np.unique(ids)
    pick = rng.integers(0, len(uniq), len(uniq))
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.searchsorted(sorted_ids, uniq, side="left")
    stops = np.searchsorted(sorted_ids, uniq, side="right")
    chunks = []
    new_ids = []
    for new, j in enumerate(pick):
        rows = order[starts[j] : stops[j]]
        chunks.append(rows)
        new_ids.append(np.full(len(rows), new + 1, dtype=np.int64))
    out = panel.iloc[np.concatenate(chunks)].copy()
    out["driver_id"] = np.concatenate(new_ids)
    return out.reset_index(drop=True)


def cluster_bootstrap(
    statistic: Callable[[pd.DataFrame], float],
    panel: pd.DataFrame,
    n_reps: int = 199,
    seed: int = 0,
) -> BootstrapResult:
    """Bootstrap a scalar statistic of a driver-week panel.

    Replicates that raise are dropped; losing more than 10% of them is an
    error rather than a silently nosier interval. Same seed, same result.
    """
    est = float(statistic(panel))
    rng = np.random.default_rng(seed)
    reps = []
    n_failed = 0
    for _ in range(n_reps):
        sub = resample_drivers(panel, rng)
        try:
            val = float(statistic(sub))
        except Exception:
            n_failed += 1
            continue
        if np.isfinite(val):
            reps.append(val)
        else:
            n_failed += 1
    if n_failed > 0.1 * n_reps:
        raise RuntimeError(
            f"{n_failed}/{n_reps} bootstrap replicates failed; statistic too fragile to summarize"
        )
    arr = np.array(reps)
    return BootstrapResult(
        estimate=est,
        std_error=float(arr.std(ddof=1)) if arr.size > 1 else float("nan"),
        ci_low=float(np.percentile(arr, 2.5)) if arr.size else float("nan"),
        ci_high=float(np.percentile(arr, 97.5)) if arr.size else float("nan"),
        n_reps=n_reps,
        n_failed=n_failed,
        replicates=arr,
    )
