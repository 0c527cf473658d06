"""Supply-state accounting and per-market ride-production estimation.

Every completed trip splits a driver's clock into three states: en route
(accept to pickup), transporting (pickup to dropoff), and idle (dropoff
until the next accept, capped at two hours; exactly two hours after the
final trip). Moving intervals are walked along the straight segment in
short spatial substeps so hours land in the hexagons actually traversed,
and every interval is split across hour boundaries proportionally.

Aggregated to (hexagon, hour) and joined with demand, the observations
feed one log-linear production fit per market: log y = log_A + alpha
log D + beta log S.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .geo import HexGrid
from .markets import SLOTS, AreaPartition, all_market_keys, day_index_of_hour, slot_index_of_hour

IDLE_CAP_H = 2.0
SUBSTEP_KM = 1.2
STATE_NAMES = ("idle_h", "enroute_h", "transporting_h")
_MIN_FIT_OBS = 10


def _split_hours(hexes: np.ndarray, a: np.ndarray, b: np.ndarray, state: np.ndarray):
    """Chip [a, b) minute intervals into per-hour pieces.

    Returns (hex row index, hour index, state, hours) flat arrays.
    """
    out_hex, out_hour, out_state, out_dur = [], [], [], []
    a = a.astype(float).copy()
    b = b.astype(float)
    live = a < b
    while live.any():
        ha = np.floor(a[live] / 60.0)
        cut = np.minimum(b[live], (ha + 1.0) * 60.0)
        out_hex.append(hexes[live])
        out_hour.append(ha.astype(np.int64))
        out_state.append(state[live])
        out_dur.append((cut - a[live]) / 60.0)
        a[live] = cut
        live = a < b
    if not out_hex:
        empty = np.array([], dtype=np.int64)
        return empty, empty, empty, np.array([], dtype=float)
    return (
        np.concatenate(out_hex),
        np.concatenate(out_hour),
        np.concatenate(out_state),
        np.concatenate(out_dur),
    )


def _substep_points(x0, y0, x1, y1, t0, t1):
    """Break moving intervals into constant-speed spatial substeps.

    Returns midpoint coordinates plus per-substep [start, stop) minutes.
    """
    dist = np.hypot(x1 - x0, y1 - y0)
    nseg = np.maximum(np.ceil(dist / SUBSTEP_KM).astype(np.int64), 1)
    row = np.repeat(np.arange(len(x0)), nseg)
    offs = np.concatenate([[0], np.cumsum(nseg)[:-1]]) if nseg.size else np.array([], dtype=np.int64)
    step = np.arange(int(nseg.sum())) - np.repeat(offs, nseg)
    frac0 = step / nseg[row]
    frac1 = (step + 1) / nseg[row]
    mid = 0.5 * (frac0 + frac1)
    mx = x0[row] + (x1 - x0)[row] * mid
    my = y0[row] + (y1 - y0)[row] * mid
    ta = t0[row] + (t1 - t0)[row] * frac0
    tb = t0[row] + (t1 - t0)[row] * frac1
    return mx, my, ta, tb


def supply_accounting(
    trips: pd.DataFrame,
    hex_area_km2: float,
    anchor: np.datetime64 | pd.Timestamp,
    hour_offset: int = 0,
) -> pd.DataFrame:
    """Per (hexagon, hour) supply hours split into the three driver states.

    ``hour_offset`` shifts hour indices so they line up with a demand grid
    whose hour 0 predates the anchor (e.g. pre-launch weeks).

    Raises on overlapping trips within a driver.
    """
    done = trips.loc[~trips["cancelled"].astype(bool)].sort_values(
        ["driver_id", "accept_ts"], kind="mergesort"
    )
    anchor64 = np.datetime64(pd.Timestamp(anchor), "m")
    acc = (done["accept_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    pick = (done["pickup_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    drop = (done["dropoff_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    drv = done["driver_id"].to_numpy()
    ox = done["o_x_km"].to_numpy(dtype=float)
    oy = done["o_y_km"].to_numpy(dtype=float)
    dx = done["d_x_km"].to_numpy(dtype=float)
    dy = done["d_y_km"].to_numpy(dtype=float)

    same = np.zeros(len(done), dtype=bool)
    same[1:] = drv[1:] == drv[:-1]
    prev_drop = np.where(same, np.roll(drop, 1), acc)
    if (acc < prev_drop).any():
        i = int(np.argmax(acc < prev_drop))
        raise ValueError(f"overlapping trips for driver {drv[i]}: accept precedes prior dropoff")

    # previous dropoff point = where the en-route leg starts; first trips start at origin
    px = np.where(same, np.roll(dx, 1), ox)
    py = np.where(same, np.roll(dy, 1), oy)
    last = np.zeros(len(done), dtype=bool)
    last[:-1] = drv[:-1] != drv[1:]
    last[-1] = True

    off = float(hour_offset * 60)
    # idle before this trip at the previous dropoff hexagon (capped)
    idle_a = np.where(same, prev_drop.astype(float), acc.astype(float))
    idle_b = np.minimum(acc.astype(float), idle_a + IDLE_CAP_H * 60.0)
    # terminal idle: exactly the cap after each driver's final dropoff
    term_a = drop[last].astype(float)
    term_b = term_a + IDLE_CAP_H * 60.0

    grid = HexGrid(hex_area_km2)
    segs = []
    ex, ey, ea, eb = _substep_points(px, py, ox, oy, acc.astype(float), pick.astype(float))
    segs.append((ex, ey, ea, eb, 1))
    tx, ty, ta, tb = _substep_points(ox, oy, dx, dy, pick.astype(float), drop.astype(float))
    segs.append((tx, ty, ta, tb, 2))
    segs.append((px, py, idle_a, idle_b, 0))
    segs.append((dx[last], dy[last], term_a, term_b, 0))

    all_q, all_r, all_hour, all_state, all_dur = [], [], [], [], []
    for sx, sy, sa, sb, st in segs:
        q, r = grid.hex_of(np.asarray(sx, dtype=float), np.asarray(sy, dtype=float))
        key = np.stack([q, r], axis=1)
        hq, hh, hs, hd = _split_hours(
            np.arange(len(q)), np.asarray(sa, float) + off, np.asarray(sb, float) + off,
            np.full(len(q), st, dtype=np.int64),
        )
        all_q.append(key[hq, 0])
        all_r.append(key[hq, 1])
        all_hour.append(hh)
        all_state.append(hs)
        all_dur.append(hd)

    q = np.concatenate(all_q)
    r = np.concatenate(all_r)
    hour = np.concatenate(all_hour)
    state = np.concatenate(all_state)
    dur = np.concatenate(all_dur)

    # pack (q, r, hour) into one int64 key; much faster than row-wise unique
    hmin = int(hour.min()) if hour.size else 0
    code = ((q + 4096) << np.int64(36)) | ((r + 4096) << np.int64(20)) | (hour - hmin)
    ucode, first, inv = np.unique(code, return_index=True, return_inverse=True)
    acc3 = np.zeros((ucode.size, 3))
    np.add.at(acc3, (inv, state), dur)
    out = pd.DataFrame(
        {
            "hex_q": q[first],
            "hex_r": r[first],
            "hour_index": hour[first],
            "idle_h": acc3[:, 0],
            "enroute_h": acc3[:, 1],
            "transporting_h": acc3[:, 2],
        }
    )
    return out.sort_values(["hour_index", "hex_q", "hex_r"], kind="mergesort").reset_index(drop=True)


def regrid_demand(
    demand: pd.DataFrame, fine_area_km2: float, coarse_area_km2: float
) -> pd.DataFrame:
    """Re-aggregate a hex-hour demand log onto a coarser hexagon grid.

    Each fine cell maps to the coarse cell containing its center; counts
    add. With equal areas the frame is returned re-keyed but unchanged.
    """
    fine = HexGrid(fine_area_km2)
    coarse = HexGrid(coarse_area_km2)
    hexes = demand[["hex_q", "hex_r"]].drop_duplicates()
    cx, cy = fine.center(hexes["hex_q"].to_numpy(), hexes["hex_r"].to_numpy())
    cq, cr = coarse.hex_of(cx, cy)
    key = hexes.assign(cq=cq, cr=cr)
    df = demand.merge(key, on=["hex_q", "hex_r"], how="left")
    cols = [c for c in ("intents", "requests", "completes") if c in df.columns]
    out = (
        df.groupby(["cq", "cr", "hour_index"], sort=True)[cols]
        .sum()
        .reset_index()
        .rename(columns={"cq": "hex_q", "cr": "hex_r"})
    )
    return out[["hex_q", "hex_r", "hour_index"] + cols]


def build_market_observations(
    supply: pd.DataFrame,
    demand: pd.DataFrame,
    partition: AreaPartition,
    hex_area_km2: float,
) -> pd.DataFrame:
    """Join demand and supply per (hexagon, hour) and attach market keys.

    Hours before 07:00 fall outside every slot and are dropped. Demand rows
    with no recorded supply keep S = 0 so the fit's zero-dropping stays
    observable.
    """
    df = demand.merge(supply, on=["hex_q", "hex_r", "hour_index"], how="left")
    for c in STATE_NAMES:
        df[c] = df[c].fillna(0.0)
    grid = HexGrid(hex_area_km2)
    cx, cy = grid.center(df["hex_q"].to_numpy(), df["hex_r"].to_numpy())
    df["area"] = partition.area_of(cx, cy)
    slot_idx = slot_index_of_hour(df["hour_index"].to_numpy() % 24)
    df = df.loc[slot_idx >= 0].copy()
    df["slot"] = np.asarray(SLOTS)[slot_idx[slot_idx >= 0]]
    df["day"] = np.asarray(["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"])[
        day_index_of_hour(df["hour_index"].to_numpy())
    ]
    df["S"] = df[list(STATE_NAMES)].sum(axis=1)
    out = df.rename(columns={"completes": "y", "intents": "D"})
    cols = ["area", "slot", "day", "hex_q", "hex_r", "hour_index", "y", "D", "S"]
    return out[cols].reset_index(drop=True)


@dataclass
class ProductionParams:
    area: int
    slot: str
    day: str
    log_a: float
    alpha: float
    beta: float
    r2: float
    n_obs: int
    n_dropped: int
    fitted: bool
    note: str = ""

    @property
    def returns_to_scale(self) -> float:
        return self.alpha + self.beta


def fit_cobb_douglas(obs: pd.DataFrame, key: tuple[int, str, str] | None = None) -> ProductionParams:
    """OLS of log y on log D and log S for one market's observations.

    Rows with a zero anywhere are dropped (logged in ``n_dropped``);
    fewer than ten usable rows or collinear regressors leave the market
    flagged unfitted rather than raising.
    """
    area, slot, day = key if key is not None else (
        int(obs["area"].iloc[0]), str(obs["slot"].iloc[0]), str(obs["day"].iloc[0])
    )
    y = obs["y"].to_numpy(dtype=float)
    D = obs["D"].to_numpy(dtype=float)
    S = obs["S"].to_numpy(dtype=float)
    ok = (y > 0) & (D > 0) & (S > 0)
    n_drop = int(len(obs) - ok.sum())
    blank = ProductionParams(
        area=area, slot=slot, day=day, log_a=float("nan"), alpha=float("nan"),
        beta=float("nan"), r2=float("nan"), n_obs=int(ok.sum()), n_dropped=n_drop,
        fitted=False,
    )
    if ok.sum() < _MIN_FIT_OBS:
        blank.note = "insufficient observations"
        return blank
    ly, ld, ls = np.log(y[ok]), np.log(D[ok]), np.log(S[ok])
    X = np.column_stack([np.ones(ly.size), ld, ls])
    sv = np.linalg.svd(X / np.linalg.norm(X, axis=0), compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        blank.note = "collinear regressors"
        return blank
    coef, _, _, _ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    tss = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / tss if tss > 0 else 1.0
    return ProductionParams(
        area=area, slot=slot, day=day,
        log_a=float(coef[0]), alpha=float(coef[1]), beta=float(coef[2]),
        r2=r2, n_obs=int(ok.sum()), n_dropped=n_drop, fitted=True,
    )


def fit_all_markets(obs: pd.DataFrame, threads: int = 1) -> pd.DataFrame:
    """One production fit per market key, in deterministic key order.

    Markets with no observations at all are reported unfitted, so the
    output always covers the full key universe.
    """
    groups = {k: g for k, g in obs.groupby(["area", "slot", "day"], sort=False)}
    keys = all_market_keys()

    def fit_one(key):
        g = groups.get(key)
        if g is None:
            return ProductionParams(
                area=key[0], slot=key[1], day=key[2], log_a=float("nan"),
                alpha=float("nan"), beta=float("nan"), r2=float("nan"),
                n_obs=0, n_dropped=0, fitted=False, note="no observations",
            )
        return fit_cobb_douglas(g, key=key)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(fit_one, keys))
    else:
        fits = [fit_one(k) for k in keys]
    return pd.DataFrame(
        [
            {
                "area": f.area, "slot": f.slot, "day": f.day, "log_A": f.log_a,
                "alpha": f.alpha, "beta": f.beta, "r2": f.r2, "n_obs": f.n_obs,
                "n_dropped": f.n_dropped, "fitted": f.fitted, "note": f.note,
            }
            for f in fits
        ]
    )


def elasticity_histogram(params: pd.DataFrame, bins: int = 32, lo: float = 0.0, hi: float = 1.6) -> pd.DataFrame:
    """Binned counts of fitted alpha, beta, and returns to scale."""
    fit = params.loc[params["fitted"]]
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    series = {
        "alpha": fit["alpha"].to_numpy(dtype=float),
        "beta": fit["beta"].to_numpy(dtype=float),
        "returns_to_scale": (fit["alpha"] + fit["beta"]).to_numpy(dtype=float),
    }
    for name, vals in series.items():
        counts, _ = np.histogram(vals, bins=edges)
        for j in range(bins):
            rows.append(
                {
                    "series": name,
                    "bin_left": float(edges[j]),
                    "bin_right": float(edges[j + 1]),
                    "count": int(counts[j]),
                }
            )
    return pd.DataFrame(rows)
