"""Decomposition of the two-way fixed-effects DiD coefficient.

With staggered adoption the TWFE estimate is a variance-weighted average
of all 2x2 comparisons: each treated cohort against never-treated units,
earlier-treated against later-treated (before the later cohort switches),
and later-treated against earlier-treated (using the already-treated as
controls). Weights are closed-form functions of group sizes and treated
shares and sum to one; the weighted sum of the 2x2 estimates reproduces
the TWFE coefficient exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

CATEGORY_EARLIER = "earlier_vs_later"
CATEGORY_LATER = "later_vs_earlier"
CATEGORY_UNTREATED = "treated_vs_untreated"


@dataclass
class BaconComponent:
    treated_cohort: int
    comparison_cohort: int | None  # None = never-treated pool
    category: str
    weight: float
    estimate: float


@dataclass
class BaconDecomposition:
    components: list[BaconComponent]
    twfe_estimate: float

    def weight_by_category(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for c in self.components:
            out[c.category] = out.get(c.category, 0.0) + c.weight
        return out

    def weighted_sum(self) -> float:
        return float(sum(c.weight * c.estimate for c in self.components))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "treated_cohort": c.treated_cohort,
                    "comparison_cohort": -1 if c.comparison_cohort is None else c.comparison_cohort,
                    "category": c.category,
                    "weight": c.weight,
                    "estimate": c.estimate,
                }
                for c in self.components
            ]
        )


def _pivot_balanced(panel: pd.DataFrame, outcome: str, treatment: str):
    drivers = np.sort(panel["driver_id"].unique())
    weeks = np.sort(panel["week"].unique())
    n, T = len(drivers), len(weeks)
    if len(panel) != n * T or panel.duplicated(["driver_id", "week"]).any():
        raise ValueError("decomposition requires a balanced panel: one row per driver per week")
    d_idx = pd.Index(drivers).get_indexer(panel["driver_id"])
    w_idx = pd.Index(weeks).get_indexer(panel["week"])
    Y = np.full((n, T), np.nan)
    D = np.zeros((n, T))
    Y[d_idx, w_idx] = panel[outcome].to_numpy(dtype=float)
    D[d_idx, w_idx] = panel[treatment].to_numpy(dtype=float)
    if not np.isfinite(Y).all():
        raise ValueError(f"outcome {outcome!r} has missing values; balance the panel first")
    if not np.isin(D, (0.0, 1.0)).all():
        raise ValueError(f"treatment {treatment!r} must be binary")
    if (np.diff(D, axis=1) < 0).any():
        raise ValueError("treatment must be absorbing: no driver may switch back to untreated")
    return drivers, weeks, Y, D


def twfe_beta(Y: np.ndarray, D: np.ndarray) -> float:
    """Two-way within estimate of Y on D for a balanced panel."""
    def demean(M):
        return M - M.mean(axis=1, keepdims=True) - M.mean(axis=0, keepdims=True) + M.mean()

    Dt = demean(D)
    denom = float((Dt * Dt).sum())
    if denom <= 0:
        raise ValueError("no residual treatment variation: every unit shares one timing")
    return float((Dt * demean(Y)).sum() / denom)


def bacon_decompose(
    panel: pd.DataFrame, outcome: str = "num_hour", treatment: str = "enter_treatment"
) -> BaconDecomposition:
    """Split the TWFE DiD estimate into weighted 2x2 comparisons."""
    drivers, weeks, Y, D = _pivot_balanced(panel, outcome, treatment)
    n, T = Y.shape

    first = np.where(D.any(axis=1), D.argmax(axis=1), T)  # position of first treated week
    positions = np.unique(first)
    if 0 in positions:
        bad = int(weeks[0])
        raise ValueError(
            f"cohort treated in every observed week (from week {bad}); "
            "its untreated baseline is empty"
        )
    treated_pos = [int(p) for p in positions if p < T]
    if not treated_pos:
        raise ValueError("no treated drivers in the panel")

    share = {p: float((first == p).sum()) / n for p in positions}
    dbar = {p: (T - p) / T for p in treated_pos}
    ybar = {int(p): Y[first == p].mean(axis=0) for p in positions}

    has_never = T in share

    def window_mean(series: np.ndarray, lo: int, hi: int) -> float:
        return float(series[lo:hi].mean())

    comps: list[tuple[int, int | None, str, float, float]] = []
    for k in treated_pos:
        nk, dk, yk = share[k], dbar[k], ybar[k]
        if has_never:
            nu = share[T]
            skU = (nk + nu) ** 2 * (nk / (nk + nu)) * (nu / (nk + nu)) * dk * (1 - dk)
            yu = ybar[T]
            est = (window_mean(yk, k, T) - window_mean(yk, 0, k)) - (
                window_mean(yu, k, T) - window_mean(yu, 0, k)
            )
            comps.append((k, None, CATEGORY_UNTREATED, skU, est))
        for l in treated_pos:
            if l <= k:
                continue
            nl, dl, yl = share[l], dbar[l], ybar[l]
            nkl = nk / (nk + nl)
            # earlier cohort k treated, later cohort l still clean: window [0, l)
            s_k = ((nk + nl) * (1 - dl)) ** 2 * nkl * (1 - nkl) * (dk - dl) * (1 - dk) / (1 - dl) ** 2
            est_k = (window_mean(yk, k, l) - window_mean(yk, 0, k)) - (
                window_mean(yl, k, l) - window_mean(yl, 0, k)
            )
            comps.append((k, l, CATEGORY_EARLIER, s_k, est_k))
            # later cohort l switches on, earlier k already treated: window [k, T)
            s_l = ((nk + nl) * dk) ** 2 * nkl * (1 - nkl) * dl * (dk - dl) / dk**2
            est_l = (window_mean(yl, l, T) - window_mean(yl, k, l)) - (
                window_mean(yk, l, T) - window_mean(yk, k, l)
            )
            comps.append((l, k, CATEGORY_LATER, s_l, est_l))

    total = sum(s for _, _, _, s, _ in comps)
    if total <= 0:
        raise ValueError("degenerate design: all decomposition weights vanish")
    components = [
        BaconComponent(
            treated_cohort=int(weeks[k]),
            comparison_cohort=None if c is None else int(weeks[c]) if c < T else None,
            category=cat,
            weight=s / total,
            estimate=est,
        )
        for k, c, cat, s, est in comps
    ]
    return BaconDecomposition(components=components, twfe_estimate=twfe_beta(Y, D))
