"""Driver-week and zone-week panels built from trip and demand logs.

The driver panel is balanced: one row per driver per week over the full
horizon, zero-activity weeks included with zero counts and zero-valued
ratios. Cohorts are assigned from observed behavior (first completed
dropoff inside the major-market polygon), never from generator internals.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .geo import ConvexPolygon, HexGrid

WEEK_MIN = 7 * 24 * 60

# canonical column order of the driver-week panel CSV
PANEL_COLUMNS = [
    "driver_id",
    "week",
    "num_trip",
    "num_session",
    "num_hour",
    "trip_hour",
    "num_mile",
    "ave_utilization",
    "ave_dur_per_session",
    "ave_n_trip_per_hour",
    "hourly_earning",
    "earning_per_ride",
    "tips",
    "perc_tips",
    "weekly_cancel_rate",
    "driver_rating",
    "rider_wait_time",
    "frac_Hdemand",
    "frac_Phour",
    "enter_treatment",
]

ZONE_COLUMNS = [
    "zone_id",
    "week",
    "intents",
    "requests",
    "completes",
    "price_indicator",
    "in_major_market",
    "high_demand",
]

# peak commute windows, minutes of day: 6-9 AM and 4-7 PM
_PEAK_WINDOWS = ((360, 540), (960, 1140))
SESSION_GAP_HOURS = 2.0


def week_index(timestamp, anchor_monday, n_weeks_pre: int | None = None, n_weeks_post: int | None = None):
    """Week offset of ``timestamp`` relative to the anchor Monday 00:00.

    The anchor week maps to 0 and weeks run Monday-Sunday. When horizon
    bounds are given, timestamps outside ``[-n_weeks_pre, n_weeks_post]``
    raise ``ValueError``.
    """
    ts = pd.to_datetime(timestamp)
    anchor = pd.Timestamp(anchor_monday)
    if anchor.weekday() != 0 or anchor != anchor.normalize():
        raise ValueError("anchor must be a Monday at 00:00")
    scalar = np.isscalar(timestamp) or isinstance(timestamp, (pd.Timestamp, str))
    mins = (pd.DatetimeIndex(np.atleast_1d(np.asarray(ts, dtype="datetime64[ns]"))) - anchor) // pd.Timedelta(minutes=1)
    w = np.floor_divide(np.asarray(mins, dtype=np.int64), WEEK_MIN)
    if n_weeks_pre is not None and (w < -n_weeks_pre).any():
        raise ValueError(f"timestamp before week -{n_weeks_pre} is outside the horizon")
    if n_weeks_post is not None and (w > n_weeks_post).any():
        raise ValueError(f"timestamp after week {n_weeks_post} is outside the horizon")
    return int(w[0]) if scalar else w


def assign_cohorts(
    trips: pd.DataFrame,
    major_market_polygon: ConvexPolygon,
    anchor_monday,
    launch_week: int = 0,
    horizon: int = 12,
) -> pd.DataFrame:
    """First week in ``[launch_week, launch_week + horizon]`` with a completed
    dropoff inside the major-market polygon, per driver.

    Returns a frame with ``driver_id``, nullable integer ``cohort`` (missing
    means never treated within the horizon) and ``first_treatment_ts``.
    """
    drivers = np.unique(trips["driver_id"].to_numpy())
    comp = trips.loc[~trips["cancelled"].to_numpy()]
    out = pd.DataFrame({"driver_id": drivers})
    if len(comp):
        wk = week_index(comp["dropoff_ts"], anchor_monday)
        inside = major_market_polygon.contains(
            comp["d_x_km"].to_numpy(), comp["d_y_km"].to_numpy()
        )
        sel = inside & (wk >= launch_week) & (wk <= launch_week + horizon)
        hits = pd.DataFrame(
            {
                "driver_id": comp["driver_id"].to_numpy()[sel],
                "week": wk[sel],
                "ts": comp["dropoff_ts"].to_numpy()[sel],
            }
        ).sort_values(["driver_id", "ts"], kind="mergesort")
        first = hits.groupby("driver_id", sort=True).first()
        out["cohort"] = out["driver_id"].map(first["week"]).astype("Int64")
        out["first_treatment_ts"] = out["driver_id"].map(first["ts"])
    else:
        out["cohort"] = pd.array([pd.NA] * len(out), dtype="Int64")
        out["first_treatment_ts"] = pd.NaT
    return out


def _peak_cum_minutes(mins: np.ndarray) -> np.ndarray:
    """Cumulative peak-window minutes from the anchor to each minute offset."""
    day, tod = np.divmod(mins, 1440)
    total_per_day = sum(b - a for a, b in _PEAK_WINDOWS)
    out = day.astype(float) * total_per_day
    for a, b in _PEAK_WINDOWS:
        out += np.clip(tod - a, 0, b - a)
    return out


def _sessions_within_week(comp: pd.DataFrame) -> pd.DataFrame:
    """Gap-based session stats per (driver, week): count and mean duration."""
    if not len(comp):
        return pd.DataFrame(columns=["driver_id", "week", "num_session", "ave_dur_per_session"])
    df = comp.sort_values(["driver_id", "week", "accept_ts"], kind="mergesort")
    d = df["driver_id"].to_numpy()
    w = df["week"].to_numpy()
    acc = df["accept_ts"].to_numpy().astype("datetime64[m]").astype(np.int64)
    drop = df["dropoff_ts"].to_numpy().astype("datetime64[m]").astype(np.int64)
    new_group = np.concatenate([[True], (d[1:] != d[:-1]) | (w[1:] != w[:-1])])
    gap_h = np.empty(len(df))
    gap_h[0] = np.inf
    gap_h[1:] = (acc[1:] - drop[:-1]) / 60.0
    new_sess = new_group | (gap_h >= SESSION_GAP_HOURS)
    sid = np.cumsum(new_sess) - 1
    first_acc = np.minimum.reduceat(acc, np.flatnonzero(new_sess))
    last_drop = np.maximum.reduceat(drop, np.flatnonzero(new_sess))
    dur_h = (last_drop - first_acc) / 60.0
    sess = pd.DataFrame(
        {
            "driver_id": d[new_sess],
            "week": w[new_sess],
            "dur": dur_h,
        }
    )
    agg = sess.groupby(["driver_id", "week"], sort=False).agg(
        num_session=("dur", "size"), ave_dur_per_session=("dur", "mean")
    )
    return agg.reset_index()


def _high_demand_hexes(demand: pd.DataFrame | None, comp: pd.DataFrame, grid: HexGrid) -> set:
    """Fine hexes labeled high demand from pre-period data only.

    With a demand log, hexes whose pre-period average weekly intents exceed
    the cross-hex median; without one, the same rule on completed-trip
    origin counts as an intent proxy.
    """
    if demand is not None and len(demand):
        pre = demand.loc[demand["hour_index"] < 0]
        if len(pre):
            weeks = max(1, int(-pre["hour_index"].min() - 1) // 168 + 1)
            per_hex = pre.groupby(["hex_q", "hex_r"])["intents"].sum() / weeks
            med = per_hex.median()
            return set(per_hex.index[per_hex > med])
        return set()
    pre = comp.loc[comp["week"] < 0]
    if not len(pre):
        return set()
    q, r = grid.hex_of(pre["o_x_km"].to_numpy(), pre["o_y_km"].to_numpy())
    per_hex = pd.Series(1, index=pd.MultiIndex.from_arrays([q, r])).groupby(level=[0, 1]).sum()
    med = per_hex.median()
    return set(per_hex.index[per_hex > med])


def build_driver_week_panel(
    trips: pd.DataFrame,
    cohorts: pd.DataFrame,
    config,
    demand: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Balanced driver-week panel with the standard weekly outcome set.

    ``config`` supplies the anchor date, horizon and hex size. ``demand``
    (optional) feeds the high-demand hex labeling; otherwise pre-period trip
    origins proxy for demand intents.
    """
    anchor = pd.Timestamp(config.anchor)
    n_pre, n_post = config.n_weeks_pre, config.n_weeks_post
    weeks = np.arange(-n_pre, n_post + 1)

    trips = trips.copy()
    trips["week"] = week_index(trips["accept_ts"], anchor, n_pre, n_post)
    comp = trips.loc[~trips["cancelled"].to_numpy()].copy()
    canc = trips.loc[trips["cancelled"].to_numpy()]

    dup = comp.duplicated(subset=["driver_id", "accept_ts"])
    if dup.any():
        raise ValueError(
            f"duplicate trips detected: {int(dup.sum())} repeated (driver_id, accept_ts) keys"
        )

    cover = set(cohorts["driver_id"].tolist())
    missing = set(np.unique(trips["driver_id"].to_numpy())) - cover
    if missing:
        raise ValueError(f"cohort assignment missing for drivers: {sorted(missing)[:5]}")

    acc_m = comp["accept_ts"].to_numpy().astype("datetime64[m]").astype(np.int64)
    drop_m = comp["dropoff_ts"].to_numpy().astype("datetime64[m]").astype(np.int64)
    pick_m = comp["pickup_ts"].to_numpy().astype("datetime64[m]").astype(np.int64)
    req_m = comp["request_ts"].to_numpy().astype("datetime64[m]").astype(np.int64)
    comp["online_h"] = (drop_m - acc_m) / 60.0
    comp["onboard_h"] = (drop_m - pick_m) / 60.0
    comp["wait_h"] = (pick_m - req_m) / 60.0
    anchor_m = np.int64(0)
    comp["peak_min"] = _peak_cum_minutes(drop_m - anchor_m) - _peak_cum_minutes(acc_m - anchor_m)
    comp["has_tip"] = (comp["tip"].to_numpy() > 0).astype(float)
    comp["rated"] = comp["rating"].notna().astype(float)
    comp["rating_sum"] = comp["rating"].fillna(0.0)
    oh = comp["online_h"].to_numpy()
    comp["trip_rate"] = np.where(oh > 0, comp["driver_earnings"].to_numpy() / np.maximum(oh, 1e-12), np.nan)

    grid = HexGrid(config.hex_cell_area_km2)
    high = _high_demand_hexes(demand, comp, grid)
    if high:
        q, r = grid.hex_of(comp["o_x_km"].to_numpy(), comp["o_y_km"].to_numpy())
        hkeys = list(zip(q.tolist(), r.tolist()))
        comp["in_high"] = np.fromiter((k in high for k in hkeys), dtype=float, count=len(hkeys))
    else:
        comp["in_high"] = 0.0

    agg = comp.groupby(["driver_id", "week"], sort=False).agg(
        num_trip=("driver_id", "size"),
        num_hour=("online_h", "sum"),
        trip_hour=("onboard_h", "sum"),
        num_mile=("miles", "sum"),
        earnings_week=("driver_earnings", "sum"),
        net_passenger_payments=("rider_payment", "sum"),
        fees_week=("external_fees", "sum"),
        tips=("tip", "sum"),
        tip_trips=("has_tip", "sum"),
        rated_trips=("rated", "sum"),
        rating_sum=("rating_sum", "sum"),
        wait_sum=("wait_h", "sum"),
        peak_min=("peak_min", "sum"),
        high_trips=("in_high", "sum"),
    )
    agg["net_passenger_payments"] = agg["net_passenger_payments"] - agg.pop("fees_week")

    canc_agg = canc.groupby(["driver_id", "week"], sort=False).size().rename("num_cancel")
    sess_agg = _sessions_within_week(comp).set_index(["driver_id", "week"])
    # within-week dispersion of the per-trip earnings rate; needs >= 2 trips
    var_agg = (
        comp.groupby(["driver_id", "week"], sort=False)["trip_rate"].var().rename("hourly_earning_var")
    )

    drivers = np.sort(cohorts["driver_id"].to_numpy())
    full_index = pd.MultiIndex.from_product([drivers, weeks], names=["driver_id", "week"])
    panel = agg.reindex(full_index).fillna(0.0)
    panel = panel.join(canc_agg).join(sess_agg).join(var_agg)
    panel["num_cancel"] = panel["num_cancel"].fillna(0.0)
    panel["num_session"] = panel["num_session"].fillna(0.0)
    panel["ave_dur_per_session"] = panel["ave_dur_per_session"].fillna(0.0)
    panel = panel.reset_index()

    h = panel["num_hour"].to_numpy()
    nt = panel["num_trip"].to_numpy()
    with np.errstate(divide="ignore", invalid="ignore"):
        panel["ave_utilization"] = np.where(h > 0, panel["trip_hour"] / h, 0.0)
        panel["ave_n_trip_per_hour"] = np.where(h > 0, nt / h, 0.0)
        panel["hourly_earning"] = np.where(h > 0, panel["earnings_week"] / h, 0.0)
        panel["earning_per_ride"] = np.where(nt > 0, panel["earnings_week"] / nt, 0.0)
        panel["perc_tips"] = np.where(nt > 0, panel["tip_trips"] / nt, 0.0)
        nc = panel["num_cancel"].to_numpy()
        panel["weekly_cancel_rate"] = np.where(nc + nt > 0, nc / (nc + nt), 0.0)
        rt = panel["rated_trips"].to_numpy()
        panel["driver_rating"] = np.where(rt > 0, panel["rating_sum"] / np.maximum(rt, 1), np.nan)
        panel["rider_wait_time"] = np.where(nt > 0, panel["wait_sum"] / np.maximum(nt, 1), 0.0)
        panel["frac_Hdemand"] = np.where(nt > 0, panel["high_trips"] / np.maximum(nt, 1), 0.0)
        panel["frac_Phour"] = np.where(h > 0, panel["peak_min"] / np.maximum(h * 60.0, 1e-12), 0.0)

    cohort_map = cohorts.set_index("driver_id")["cohort"]
    g = panel["driver_id"].map(cohort_map).astype("Int64")
    panel["cohort"] = g
    panel["enter_treatment"] = (
        (g.notna() & (panel["week"] >= g.fillna(np.iinfo(np.int32).max))).astype(np.int64)
    )

    panel = panel.sort_values(["driver_id", "week"], kind="mergesort").reset_index(drop=True)
    extras = ["cohort", "earnings_week", "net_passenger_payments", "num_cancel", "hourly_earning_var"]
    return panel[PANEL_COLUMNS + extras]


def write_panel_csv(panel: pd.DataFrame, path) -> None:
    out = panel.loc[:, PANEL_COLUMNS].copy()
    out["driver_id"] = out["driver_id"].astype(np.int64)
    out["week"] = out["week"].astype(np.int64)
    for c in ["num_trip", "num_session", "enter_treatment"]:
        out[c] = out[c].astype(np.int64)
    float_cols = [c for c in PANEL_COLUMNS if c not in ("driver_id", "week", "num_trip", "num_session", "enter_treatment", "driver_rating")]
    for c in float_cols:
        out[c] = out[c].map(lambda v: f"{v:.6f}")
    out["driver_rating"] = out["driver_rating"].map(lambda v: "" if pd.isna(v) else f"{v:.6f}")
    out.to_csv(path, index=False, lineterminator="\n")


def read_panel_csv(path) -> pd.DataFrame:
    panel = pd.read_csv(path)
    missing = [c for c in PANEL_COLUMNS if c not in panel.columns]
    if missing:
        raise ValueError(f"panel at {path} is missing columns: {missing}")
    return panel


def build_zone_week_demand(
    demand: pd.DataFrame,
    hex_area_km2: float,
    zone_area_km2: float = 36.0,
    major_polygon: ConvexPolygon | None = None,
    price_index: dict | None = None,
    rule: str = "decile",
    top_n: int = 10,
) -> pd.DataFrame:
    """Zone-week demand panel on the coarse hex grid.

    ``rule`` picks the high-demand labeling: ``"decile"`` marks zones whose
    pre-period average weekly intents are strictly above the 90th percentile;
    ``"top10"`` marks the ``top_n`` zones (ties broken by ascending zone id).
    """
    if (demand["completes"] > demand["requests"]).any():
        raise ValueError("demand log violates the funnel: completes > requests")
    if (demand["requests"] > demand["intents"]).any():
        raise ValueError("demand log violates the funnel: requests > intents")

    fine = HexGrid(hex_area_km2)
    coarse = HexGrid(zone_area_km2)
    hexes = demand[["hex_q", "hex_r"]].drop_duplicates()
    cx, cy = fine.center(hexes["hex_q"].to_numpy(), hexes["hex_r"].to_numpy())
    zq, zr = coarse.hex_of(cx, cy)
    zone_of_hex = pd.DataFrame(
        {
            "hex_q": hexes["hex_q"].to_numpy(),
            "hex_r": hexes["hex_r"].to_numpy(),
            "zone_id": [f"{a}:{b}" for a, b in zip(zq.tolist(), zr.tolist())],
        }
    )

    df = demand.merge(zone_of_hex, on=["hex_q", "hex_r"], how="left")
    df["week"] = np.floor_divide(df["hour_index"].to_numpy(), 168)
    zw = (
        df.groupby(["zone_id", "week"], sort=True)[["intents", "requests", "completes"]]
        .sum()
        .reset_index()
    )

    n_pre = int(-df["week"].min()) if (df["week"] < 0).any() else 0
    pre = zw.loc[zw["week"] < 0]
    if len(pre):
        avg = pre.groupby("zone_id")["intents"].sum() / max(n_pre, 1)
    else:
        avg = pd.Series(dtype=float)
    zones = np.sort(zw["zone_id"].unique())
    avg = avg.reindex(zones).fillna(0.0)
    if rule == "decile":
        cut = float(np.quantile(avg.to_numpy(), 0.9)) if len(avg) else 0.0
        high = set(avg.index[avg.to_numpy() > cut])
    elif rule == "top10":
        order = sorted(zip(-avg.to_numpy(), avg.index.tolist()))
        high = {z for _, z in order[:top_n]}
    else:
        raise ValueError(f"unknown high-demand rule: {rule!r}")
    zw["high_demand"] = zw["zone_id"].isin(high)

    if major_polygon is not None:
        zc = np.array([[int(p) for p in z.split(":")] for z in zones])
        zx, zy = coarse.center(zc[:, 0], zc[:, 1])
        inside = dict(zip(zones.tolist(), major_polygon.contains(zx, zy).tolist()))
        zw["in_major_market"] = zw["zone_id"].map(inside)
    else:
        zw["in_major_market"] = False

    if price_index:
        def _price(row):
            series = price_index.get(row["zone_id"])
            if series is None:
                return 1.0
            i = int(row["week"]) + n_pre
            return float(series[i]) if 0 <= i < len(series) else 1.0

        zw["price_indicator"] = zw.apply(_price, axis=1)
    else:
        zw["price_indicator"] = 1.0

    zw = zw.sort_values(["week", "zone_id"], kind="mergesort").reset_index(drop=True)
    return zw[ZONE_COLUMNS]


def write_zone_csv(zones: pd.DataFrame, path) -> None:
    out = zones.loc[:, ZONE_COLUMNS].copy()
    out["price_indicator"] = out["price_indicator"].map(lambda v: f"{v:.6f}")
    out["in_major_market"] = np.where(out["in_major_market"], "true", "false")
    out["high_demand"] = np.where(out["high_demand"], "true", "false")
    out.to_csv(path, index=False, lineterminator="\n")
