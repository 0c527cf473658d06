"""Sample restrictions and driver splits for the robustness designs.

Covers the cross-year matched panel, the geographic border sample around
the market boundary, the earnings-share (HH/LH) split, the earnings-
variance tolerance split, and the behavioral feature matrix fed to the
k-means clustering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..geo import ConvexPolygon, convex_hull, hull_within_buffer, signed_distance_batch
from ..simkit.config import VEHICLE_TYPES
from ..simkit.generate import TIME_WINDOWS
from .propensity import balance_diagnostics, fit_propensity

MATCH_COVARIATES = ["num_hour", "num_mile", "num_trip", "num_session", "earnings_week"]


def hull_restricted_ids(
    trips: pd.DataFrame, market_polygon: ConvexPolygon, buffer_km: float = 50.0
) -> np.ndarray:
    """Drivers whose completed-trip activity hull stays near the market.

    The hull over each driver's trip endpoints (origins and dropoffs) must
    lie entirely within ``buffer_km`` of the market polygon; drivers who
    range further are excluded from the estimation sample.
    """
    done = trips.loc[~trips["cancelled"].astype(bool)]
    pts = pd.DataFrame(
        {
            "driver_id": np.concatenate([done["driver_id"]] * 2),
            "x": np.concatenate([done["o_x_km"], done["d_x_km"]]),
            "y": np.concatenate([done["o_y_km"], done["d_y_km"]]),
        }
    )
    keep = []
    for drv, g in pts.groupby("driver_id", sort=True):
        hull = convex_hull(g[["x", "y"]].to_numpy())
        if hull_within_buffer(hull, market_polygon, buffer_km):
            keep.append(drv)
    return np.asarray(keep, dtype=np.int64)


@dataclass
class MatchResult:
    driver_ids: np.ndarray
    n_candidates: int
    balance: pd.DataFrame
    distances: pd.DataFrame  # per-driver per-covariate standardized gaps
    max_smd: float


def match_across_years(
    current: pd.DataFrame,
    prior: pd.DataFrame,
    covariates: list[str] | None = None,
    threshold: float = 0.5,
) -> MatchResult:
    """Keep drivers whose pre-period behavior is stable across years.

    ``current`` and ``prior`` hold one row per driver_id with pre-period
    covariate means. Drivers are matched on id, then retained only when
    every covariate gap is below ``threshold`` pooled standard deviations.
    A propensity fit with the year label as outcome summarizes residual
    imbalance; any post-match SMD at or above 0.1 raises a warning.
    """
    covs = list(covariates) if covariates is not None else list(MATCH_COVARIATES)
    cur = current.set_index("driver_id") if "driver_id" in current.columns else current
    pri = prior.set_index("driver_id") if "driver_id" in prior.columns else prior
    ids = cur.index.intersection(pri.index)
    if len(ids) == 0:
        raise ValueError("no drivers present in both years")
    a = cur.loc[ids, covs].to_numpy(dtype=float)
    b = pri.loc[ids, covs].to_numpy(dtype=float)
    pooled = np.sqrt((a.var(axis=0, ddof=1) + b.var(axis=0, ddof=1)) / 2.0)
    pooled = np.where(pooled > 0, pooled, 1.0)
    gaps = np.abs(a - b) / pooled
    keep = (gaps < threshold).all(axis=1)
    kept = np.asarray(ids)[keep]
    if kept.size == 0:
        raise ValueError("matched sample is empty: every driver shifted regime across years")

    stacked = pd.DataFrame(np.vstack([a[keep], b[keep]]), columns=covs)
    year = np.concatenate([np.ones(keep.sum()), np.zeros(keep.sum())])
    model = fit_propensity(stacked, year)
    w = np.where(year == 1, 1.0, model.scores / (1.0 - model.scores))
    bal = balance_diagnostics(stacked, w, year.astype(bool))
    max_smd = float(np.nanmax(np.abs(bal["smd_post"].to_numpy())))
    if max_smd >= 0.1:
        worst = bal.loc[bal["smd_post"].abs().idxmax(), "covariate"]
        warnings.warn(
            f"cross-year imbalance remains after matching: |SMD|={max_smd:.3f} on {worst}",
            stacklevel=2,
        )
    dist = pd.DataFrame(gaps, columns=covs)
    dist.insert(0, "driver_id", np.asarray(ids))
    return MatchResult(
        driver_ids=kept,
        n_candidates=len(ids),
        balance=bal,
        distances=dist,
        max_smd=max_smd,
    )


def border_sample(
    trips: pd.DataFrame,
    market_polygon: ConvexPolygon,
    band_km: float = 10.0,
    week: pd.Series | np.ndarray | None = None,
) -> pd.DataFrame:
    """Border-band treatment assignment per driver-week.

    A driver-week is treated when at least one completed dropoff lands in
    the inner band (inside the market, within ``band_km`` of the boundary)
    and control when every dropoff stays outside the market with at least
    one in the outer band. Inner activity takes precedence, so the groups
    are disjoint by construction.
    """
    done = trips.loc[~trips["cancelled"].astype(bool)].copy()
    if week is not None:
        done["week"] = np.asarray(week)[~trips["cancelled"].astype(bool).to_numpy()]
    if "week" not in done.columns:
        raise ValueError("trips need a 'week' column (or pass the week argument)")
    d = signed_distance_batch(
        done["d_x_km"].to_numpy(dtype=float),
        done["d_y_km"].to_numpy(dtype=float),
        market_polygon,
    )
    done["_inner"] = (d >= -band_km) & (d < 0)
    done["_outer"] = (d > 0) & (d <= band_km)
    done["_inside"] = d < 0
    g = done.groupby(["driver_id", "week"], sort=True)[["_inner", "_outer", "_inside"]].any()
    out = g.reset_index()
    out["group"] = np.where(
        out["_inner"], "treated", np.where(out["_outer"] & ~out["_inside"], "control", "neither")
    )
    return out.loc[out["group"] != "neither", ["driver_id", "week", "group"]].reset_index(drop=True)


def split_hh_lh(panel: pd.DataFrame, guarantee_share: float = 0.70) -> dict[str, set]:
    """Split drivers by the pre-launch earnings share of passenger payments.

    HH drivers clear the share threshold (strict) in every pre-launch week
    with activity; LH drivers fall at or below it at least once. Drivers
    with no active pre-launch weeks are left out of both groups.
    """
    need = {"earnings_week", "net_passenger_payments"}
    missing = need - set(panel.columns)
    if missing:
        raise ValueError(f"panel is missing columns: {sorted(missing)}")
    pre = panel.loc[(panel["week"] < 0) & (panel["num_trip"] > 0)].copy()
    denom = pre["net_passenger_payments"].to_numpy(dtype=float)
    share = np.divide(
        pre["earnings_week"].to_numpy(dtype=float),
        denom,
        out=np.zeros(len(pre)),
        where=denom > 0,
    )
    pre["_above"] = share > guarantee_share
    flag = pre.groupby("driver_id")["_above"].all()
    return {
        "HH": set(flag.index[flag].tolist()),
        "LH": set(flag.index[~flag].tolist()),
    }


def split_uncertainty(panel: pd.DataFrame, var_col: str = "hourly_earning_var") -> dict[str, set]:
    """Split drivers by within-week earnings-rate dispersion before launch.

    For each pre-launch week the median variance across drivers (among
    those with a defined variance, i.e. at least two trips that week) sets
    the bar. Drivers strictly above the bar in all their defined pre-weeks
    are high tolerance, strictly below in all are low tolerance, everyone
    else lands in others.
    """
    if var_col not in panel.columns:
        raise ValueError(f"panel is missing the within-week variance column {var_col!r}")
    pre = panel.loc[(panel["week"] < 0) & panel[var_col].notna(), ["driver_id", "week", var_col]]
    all_ids = set(panel["driver_id"].unique().tolist())
    if len(pre) == 0:
        return {"low_tolerance": set(), "high_tolerance": set(), "others": all_ids}
    med = pre.groupby("week")[var_col].transform("median")
    above = pre[var_col] > med
    below = pre[var_col] < med
    g = pd.DataFrame({"driver_id": pre["driver_id"], "above": above, "below": below}).groupby(
        "driver_id"
    )
    res = g.agg(hi=("above", "all"), lo=("below", "all"))
    high = set(res.index[res["hi"]].tolist())
    low = set(res.index[res["lo"]].tolist())
    return {
        "low_tolerance": low,
        "high_tolerance": high,
        "others": all_ids - high - low,
    }


def driver_style_features(trips: pd.DataFrame) -> pd.DataFrame:
    """Behavioral feature matrix: time-of-day shares, weekday share, fleet mix.

    One row per driver: the share of trips accepted in each of the eight
    day-part windows, the share accepted Monday through Friday, and the
    share completed in each vehicle class. Rows are ready for row-wise
    standardization upstream of clustering.
    """
    done = trips.loc[~trips["cancelled"].astype(bool)]
    drivers = np.sort(done["driver_id"].unique())
    idx = pd.Index(drivers)
    di = idx.get_indexer(done["driver_id"])
    n = len(drivers)

    hours = pd.to_datetime(done["accept_ts"]).dt.hour.to_numpy()
    W = np.zeros((n, len(TIME_WINDOWS)))
    for j, (lo, hi) in enumerate(TIME_WINDOWS):
        np.add.at(W[:, j], di[(hours >= lo) & (hours < hi)], 1.0)

    wkd = np.zeros(n)
    np.add.at(wkd, di[pd.to_datetime(done["accept_ts"]).dt.dayofweek < 5], 1.0)

    V = np.zeros((n, len(VEHICLE_TYPES)))
    vcode = pd.Categorical(done["vehicle_type"], categories=list(VEHICLE_TYPES)).codes
    np.add.at(V, (di, vcode), 1.0)

    total = np.maximum(W.sum(axis=1), 1.0)
    cols = {}
    for j, (lo, hi) in enumerate(TIME_WINDOWS):
        cols[f"win_{lo:02d}_{hi:02d}"] = W[:, j] / total
    cols["perc_wkd"] = wkd / total
    for j, vt in enumerate(VEHICLE_TYPES):
        cols[f"veh_{vt}"] = V[:, j] / total
    out = pd.DataFrame(cols)
    out.insert(0, "driver_id", drivers)
    return out
