"""Trip-level generator for the three-market ride economy.

The generator draws a latent world (driver profiles, weekly activity,
per-trip noise) whose random-stream consumption never depends on the
injected effect sizes: effects enter only as deterministic transforms of
already-drawn values. Two runs that differ only in effects therefore share
drivers, cohort weeks, session structure and trip noise, which is what the
prior-year / treatment-year pairing relies on.

Timestamps are integer minutes from the anchor Monday 00:00; week w covers
minutes [w*10080, (w+1)*10080).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ridepolicy.geo import ConvexPolygon, HexGrid, clip_segment_to_polygon, signed_distance_batch
from ridepolicy.markets import (
    DAYS,
    SLOTS,
    AreaPartition,
    all_market_keys,
    day_index_of_hour,
    slot_index_of_hour,
)
from .config import VEHICLE_TYPES, DAY_MULT, HOUR_MULT, SimConfig

WEEK_MIN = 7 * 24 * 60
NEVER = np.iinfo(np.int64).max

TRIP_COLUMNS = [
    "driver_id", "session_id", "request_ts", "accept_ts", "pickup_ts",
    "dropoff_ts", "o_x_km", "o_y_km", "d_x_km", "d_y_km", "miles",
    "rider_payment", "external_fees", "platform_take", "driver_earnings",
    "tip", "vehicle_type", "cancelled", "rating",
]

# time windows for session starts: (start hour, end hour)
TIME_WINDOWS = [(6, 9), (9, 12), (12, 14), (14, 16), (16, 19), (19, 24), (0, 3), (3, 6)]

_VEHICLE_RATE_MULT = np.array([1.0, 1.12, 1.3, 1.8, 2.05, 0.9])

PRODUCTION_HEX_AREA_KM2 = 36.0

# fallback production parameters for hours outside the five slots
_OFFSLOT_PARAMS = (np.log(0.5), 0.70, 0.35)


def weeks_of_chunk(w: int, config: SimConfig) -> int:
    """Calendar week (relative to launch) of chunk ``w`` in the hour grid."""
    return w - config.n_weeks_pre


@dataclass
class GroundTruth:
    """Validation sidecar: everything the generator knows and the estimators must recover."""

    seed: int
    anchor: str
    n_weeks_pre: int
    n_weeks_post: int
    hex_cell_area_km2: float
    production_hex_area_km2: float
    cohort: dict[int, int | None]
    effects: dict[str, float]
    production: dict[str, dict[str, float]]
    price_index: dict[str, list[float]]
    polygons: dict[str, list]
    config_summary: dict = field(default_factory=dict)

    def cohort_array(self, driver_ids) -> np.ndarray:
        out = np.full(len(driver_ids), NEVER, dtype=np.int64)
        for i, d in enumerate(driver_ids):
            g = self.cohort.get(int(d))
            if g is not None:
                out[i] = g
        return out

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "anchor": self.anchor,
            "n_weeks_pre": self.n_weeks_pre,
            "n_weeks_post": self.n_weeks_post,
            "hex_cell_area_km2": self.hex_cell_area_km2,
            "production_hex_area_km2": self.production_hex_area_km2,
            "cohort": {str(k): v for k, v in self.cohort.items()},
            "effects": self.effects,
            "production": self.production,
            "price_index": self.price_index,
            "polygons": self.polygons,
            "config_summary": self.config_summary,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(
            seed=d["seed"],
            anchor=d["anchor"],
            n_weeks_pre=d["n_weeks_pre"],
            n_weeks_post=d["n_weeks_post"],
            hex_cell_area_km2=d["hex_cell_area_km2"],
            production_hex_area_km2=d["production_hex_area_km2"],
            cohort={int(k): v for k, v in d["cohort"].items()},
            effects=d["effects"],
            production=d["production"],
            price_index=d["price_index"],
            polygons=d["polygons"],
            config_summary=d.get("config_summary", {}),
        )

    def major_polygon(self) -> ConvexPolygon:
        return ConvexPolygon(self.polygons["major"])


def _sample_in_polygon(rng: np.random.Generator, poly: ConvexPolygon, n: int) -> np.ndarray:
    """Uniform points inside a convex polygon by rejection from the bbox."""
    v = poly.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        batch = max(32, 2 * (n - filled))
        cand = lo + rng.random((batch, 2)) * (hi - lo)
        ok = poly.contains(cand[:, 0], cand[:, 1])
        take = cand[ok][: n - filled]
        out[filled : filled + take.shape[0]] = take
        filled += take.shape[0]
    return out


def _poisson_ppf_from_uniform(u: np.ndarray, lam: np.ndarray, kmax: int = 60) -> np.ndarray:
    """Poisson quantile of pre-drawn uniforms; keeps stream use fixed."""
    lam = np.asarray(lam, dtype=float)
    pmf = np.exp(-lam)
    cdf = pmf.copy()
    out = np.zeros(lam.shape, dtype=np.int64)
    umax = u.max() if u.size else 0.0
    for k in range(kmax):
        out += u > cdf
        if cdf.min() > umax:
            break
        pmf = pmf * lam / (k + 1)
        cdf = cdf + pmf
    return out


def _unit(vx: np.ndarray, vy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.hypot(vx, vy)
    norm = np.where(norm < 1e-12, 1.0, norm)
    return vx / norm, vy / norm


class _Profiles:
    """Per-driver latent attributes, all drawn up front."""

    def __init__(self, rng: np.random.Generator, cfg: SimConfig):
        n = cfg.n_drivers
        layout = cfg.market_layout
        # archetypes: 0 full-time, 1 part-time, 2 luxury
        self.arch = rng.choice(3, size=n, p=[0.35, 0.55, 0.10])
        self.home_major = rng.random(n) < cfg.major_home_share
        self.adj_idx = rng.integers(0, len(layout.adjacent), size=n)

        home = np.empty((n, 2))
        idx_major = np.flatnonzero(self.home_major)
        home[idx_major] = _sample_in_polygon(rng, layout.major, idx_major.size)
        for j, poly in enumerate(layout.adjacent):
            idx = np.flatnonzero(~self.home_major & (self.adj_idx == j))
            home[idx] = _sample_in_polygon(rng, poly, idx.size)
        self.home = home

        self.radius = np.clip(np.exp(rng.normal(np.log(11.0), 0.35, n)), 4.0, 32.0)
        spw_by_arch = np.array([[4.0, 6.0], [1.5, 3.5], [3.0, 5.0]])
        lo, hi = spw_by_arch[self.arch, 0], spw_by_arch[self.arch, 1]
        self.spw = lo + rng.random(n) * (hi - lo)
        mu_by_arch = np.array([np.log(26.0), np.log(9.0), np.log(21.0)])
        self.mu_hours = (
            rng.normal(0.0, 0.22, n) + mu_by_arch[self.arch] + 0.22 * self.home_major
        )
        u_by_arch = np.array([[0.55, 0.80], [0.45, 0.72], [0.50, 0.78]])
        lo, hi = u_by_arch[self.arch, 0], u_by_arch[self.arch, 1]
        self.u_base = lo + rng.random(n) * (hi - lo)
        self.rate = np.exp(rng.normal(np.log(25.0), 0.14, n)) * (1.0 + 0.10 * self.home_major)
        ell_mu = np.where(self.arch == 2, np.log(13.0), np.log(10.0))
        self.ell = np.clip(np.exp(rng.normal(ell_mu, 0.28)), 4.0, 30.0)
        self.speed = 29.0 + rng.random(n) * 10.0
        self.winding = 1.15 + rng.random(n) * 0.3
        self.take_low = rng.random(n) < 0.5  # sometimes-below-guarantee types
        self.driver_share = np.where(
            self.take_low, 0.64 + rng.random(n) * 0.09, 0.745 + rng.random(n) * 0.08
        )
        self.var_type = rng.choice(3, size=n, p=[0.25, 0.50, 0.25])
        self.fare_noise_sd = np.array([0.05, 0.16, 0.42])[self.var_type]
        self.p_cancel = 0.02 + rng.random(n) * 0.03
        self.q_attract = 0.25 + rng.random(n) * 0.45

        mix_alpha = np.array(
            [
                [18.0, 5.0, 2.0, 0.3, 0.2, 1.0],
                [16.0, 4.0, 1.5, 0.2, 0.2, 2.5],
                [2.0, 1.5, 3.0, 10.0, 7.0, 0.3],
            ]
        )
        gam = rng.gamma(mix_alpha[self.arch], 1.0)
        self.vehicle_mix = gam / gam.sum(axis=1, keepdims=True)

        window_alpha = np.array(
            [
                [8.0, 5.0, 4.0, 3.0, 8.0, 4.0, 0.5, 0.5],
                [2.0, 2.0, 2.5, 2.0, 6.0, 8.0, 2.0, 0.5],
                [1.5, 2.0, 2.0, 2.0, 6.0, 10.0, 3.0, 0.5],
            ]
        )
        gam = rng.gamma(window_alpha[self.arch], 1.0)
        self.window_mix = gam / gam.sum(axis=1, keepdims=True)
        wkd_by_arch = np.array([0.78, 0.52, 0.62])
        self.wkd = np.clip(wkd_by_arch[self.arch] + rng.normal(0, 0.08, n), 0.15, 0.92)
        self.rating_mean = np.clip(rng.normal(4.78, 0.12, n), 4.0, 5.0)

        major_c = layout.major.centroid
        self.dist_major = np.hypot(home[:, 0] - major_c[0], home[:, 1] - major_c[1])
        self.dist_boundary = signed_distance_batch(home[:, 0], home[:, 1], layout.major)


def _assign_latent_cohorts(
    rng: np.random.Generator, cfg: SimConfig, prof: _Profiles, active: np.ndarray
) -> np.ndarray:
    """First post-launch week in which each driver crosses into the major market.

    Major-market residents cross in their first active week. Adjacent-market
    drivers face a weekly hazard decaying in home distance to the boundary.
    The draw consumes a fixed (n, horizon+1) uniform block.
    """
    n = cfg.n_drivers
    horizon = cfg.cohort_horizon
    u = rng.random((n, horizon + 1))
    hazard = np.where(
        prof.home_major,
        1.0,
        np.clip(cfg.crossing_hazard_scale * 0.28 * np.exp(-np.maximum(prof.dist_boundary, 0.0) / 11.0), 0.0, 1.0),
    )
    g = np.full(n, NEVER, dtype=np.int64)
    idx0 = cfg.n_weeks_pre  # column of week 0 in weekly arrays
    for w in range(horizon + 1):
        crossed = (g == NEVER) & active[:, idx0 + w] & (u[:, w] < hazard)
        g[crossed] = w
    return g


def generate_market(config: SimConfig, zero_effects: bool = False):
    """Generate one market-year.

    Returns ``(trips, demand, truth)``: the trip log sorted by request time,
    the hex-hour demand log, and the ground-truth sidecar. With
    ``zero_effects=True`` the same latent world is produced with all
    injected effects (and the earnings guarantee) switched off.
    """
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    rng_trips, rng_demand = [np.random.default_rng(s) for s in ss.spawn(2)]

    prof = _Profiles(rng_trips, config)
    n = config.n_drivers
    W = config.n_weeks
    weeks = np.arange(-config.n_weeks_pre, config.n_weeks_post + 1)

    active = rng_trips.random((n, W)) < config.p_active
    eps_h = rng_trips.normal(0.0, config.hours_noise_sd, (n, W))
    n_sess = 1 + rng_trips.poisson(np.maximum(prof.spw - 1.0, 0.05)[:, None] * np.ones((1, W)))
    cohort = _assign_latent_cohorts(rng_trips, config, prof, active)

    d_hours = 0.0 if zero_effects else config.effect_hours
    d_util = 0.0 if zero_effects else config.effect_utilization
    d_earn = 0.0 if zero_effects else config.effect_hourly_earnings
    anticipation = config.anticipation_weeks

    treated = weeks[None, :] >= np.where(cohort == NEVER, np.iinfo(np.int32).max, cohort - anticipation)[:, None]

    onboard_mean = prof.ell / prof.speed
    h_base = np.clip(np.exp(prof.mu_hours[:, None] + eps_h), 0.5, 110.0)
    lam0 = h_base * prof.u_base[:, None] / onboard_mean[:, None] * config.trips_per_hour_scale
    base_trips = rng_trips.poisson(np.where(active, lam0, 0.0))
    trip_round_u = rng_trips.random((n, W))
    cancel_u = rng_trips.random((n, W))

    h_target = np.clip(h_base * np.exp(np.where(treated, d_hours, 0.0)), 0.5, 110.0)
    u_eff = np.clip(prof.u_base[:, None] * np.exp(np.where(treated, d_util, 0.0)), 0.05, 0.97)
    rate_mult = np.exp(np.where(treated, d_earn - d_util, 0.0))

    n_draw = np.where(active, np.ceil(base_trips * np.exp(0.8)).astype(np.int64) + 1, 0)
    n_draw = np.minimum(n_draw, 400)
    boost = np.exp(np.where(treated, d_hours + d_util, 0.0))
    n_trips = np.where(
        active,
        np.minimum(np.maximum(np.floor(base_trips * boost + trip_round_u).astype(np.int64), 1), n_draw),
        0,
    )
    n_sess = np.where(active, n_sess, 0)

    # ---- flat driver-week table over active weeks
    di, wi = np.nonzero(active)
    dw_driver = di
    dw_week = weeks[wi]
    dw_ndraw = n_draw[di, wi]
    dw_ntrip = n_trips[di, wi]
    dw_nsess_raw = n_sess[di, wi]
    dw_nsess = np.minimum(dw_nsess_raw, dw_ntrip)
    dw_h = h_target[di, wi]
    dw_ueff = u_eff[di, wi]
    dw_rate_mult = rate_mult[di, wi]
    dw_treated = treated[di, wi]
    n_dw = di.size

    # ---- session-level draws (shape depends only on the latent world)
    s_dw = np.repeat(np.arange(n_dw), dw_nsess_raw)
    s_pos = np.arange(s_dw.size) - np.repeat(
        np.concatenate([[0], np.cumsum(dw_nsess_raw)[:-1]]), dw_nsess_raw
    )
    s_day_u = rng_trips.random(s_dw.size)
    s_window_u = rng_trips.random(s_dw.size)
    s_hourfrac_u = rng_trips.random(s_dw.size)
    s_minute = rng_trips.integers(0, 60, s_dw.size)
    s_extra_gap = rng_trips.random(s_dw.size) * 90.0
    s_jitter = rng_trips.normal(0.0, 2.5, (s_dw.size, 2))

    # ---- trip-level draws at padded size, selected by prefix afterwards
    t_dw_full = np.repeat(np.arange(n_dw), dw_ndraw)
    m_full = t_dw_full.size
    t_onb_noise = rng_trips.normal(0.0, 0.33, m_full)
    t_rho_noise = rng_trips.normal(0.0, 0.22, m_full)
    t_gap_min = 3.0 + rng_trips.random(m_full) * 25.0
    t_theta = rng_trips.random(m_full) * 2.0 * np.pi
    t_enr_theta = rng_trips.random(m_full) * 2.0 * np.pi
    t_attract_u = rng_trips.random(m_full)
    t_fare_noise = rng_trips.normal(0.0, 1.0, m_full)
    t_share_jitter = rng_trips.normal(0.0, 0.015, m_full)
    t_tip_u = rng_trips.random(m_full)
    t_tip_amt = 1.0 + rng_trips.random(m_full) * 5.0
    t_rating_u = rng_trips.random(m_full)
    t_rating_noise = rng_trips.normal(0.0, 0.22, m_full)
    t_wait_lead = 0.5 + rng_trips.random(m_full) * 3.5
    t_depth_u = rng_trips.random(m_full)
    t_vehicle_u = rng_trips.random(m_full)

    # ---- cancellation draws
    dw_ncanc_draw = np.where(dw_ndraw > 0, (dw_ndraw * 0.12).astype(np.int64) + 1, 0)
    c_dw_full = np.repeat(np.arange(n_dw), dw_ncanc_draw)
    c_host_u = rng_trips.random(c_dw_full.size)
    c_lead1 = rng_trips.random(c_dw_full.size)
    c_lead2 = rng_trips.random(c_dw_full.size)
    c_jitter = rng_trips.normal(0.0, 0.3, (c_dw_full.size, 2))

    # ======= deterministic materialization from here on =======

    full_offsets = np.concatenate([[0], np.cumsum(dw_ndraw)[:-1]])
    t_pos_full = np.arange(m_full) - full_offsets[t_dw_full]
    keep = t_pos_full < dw_ntrip[t_dw_full]
    t_dw = t_dw_full[keep]
    t_pos = t_pos_full[keep]
    m = t_dw.size
    del t_dw_full, t_pos_full

    onb_noise = t_onb_noise[keep]; del t_onb_noise
    rho_noise = t_rho_noise[keep]; del t_rho_noise
    gap_min = t_gap_min[keep]; del t_gap_min
    theta = t_theta[keep]; del t_theta
    enr_theta = t_enr_theta[keep]; del t_enr_theta
    attract_u = t_attract_u[keep]; del t_attract_u
    fare_noise = t_fare_noise[keep]; del t_fare_noise
    share_jitter = t_share_jitter[keep]; del t_share_jitter
    tip_u = t_tip_u[keep]; del t_tip_u
    tip_amt = t_tip_amt[keep]; del t_tip_amt
    rating_u = t_rating_u[keep]; del t_rating_u
    rating_noise = t_rating_noise[keep]; del t_rating_noise
    wait_lead = t_wait_lead[keep]; del t_wait_lead
    depth_u = t_depth_u[keep]; del t_depth_u
    vehicle_u = t_vehicle_u[keep]; del t_vehicle_u
    del keep

    drv = dw_driver[t_dw]
    nt = dw_ntrip[t_dw]
    ns = dw_nsess[t_dw]

    # session index of each trip and sequence within the session
    sess_of_trip = (t_pos * ns) // nt
    sess_first_pos = -((-sess_of_trip * nt) // ns)
    seq = t_pos - sess_first_pos

    # durations: raw, then scaled so weekly accept->dropoff hours hit the target
    onb_h = np.clip(onboard_mean[drv] * np.exp(onb_noise), 0.05, 1.5)
    rho = (1.0 - dw_ueff[t_dw]) / dw_ueff[t_dw]
    enr_h = np.clip(onb_h * rho * np.exp(rho_noise), 1.0 / 60.0, 1.2)
    cycle = onb_h + enr_h
    cyc_sum = np.bincount(t_dw, weights=cycle, minlength=n_dw)
    scale = dw_h / np.maximum(cyc_sum, 1e-9)
    onb_h = onb_h * scale[t_dw]
    enr_h = enr_h * scale[t_dw]
    cycle = onb_h + enr_h

    # ---- sessions: sizes, durations, start packing inside the week
    sess_keep = s_pos < dw_nsess[s_dw]
    s_dwk = s_dw[sess_keep]
    sz = s_dwk.size
    s_day_u = s_day_u[sess_keep]
    s_window_u = s_window_u[sess_keep]
    s_hourfrac_u = s_hourfrac_u[sess_keep]
    s_minute = s_minute[sess_keep]
    s_extra_gap = s_extra_gap[sess_keep]
    s_jitter = s_jitter[sess_keep, :]

    sess_offsets = np.concatenate([[0], np.cumsum(dw_nsess)[:-1]])
    sess_flat_of_trip = sess_offsets[t_dw] + sess_of_trip

    # a rest gap follows every trip except the session's last
    sess_size = np.bincount(sess_flat_of_trip, minlength=sz)
    not_last = seq < (sess_size[sess_flat_of_trip] - 1)

    # shrink within-session gaps when a week cannot hold busy time + structure;
    # gaps carry no accept->dropoff hours, so the weekly hour target is unaffected
    gapsum = np.bincount(t_dw[not_last], weights=gap_min[not_last], minlength=n_dw)
    busy_min = dw_h * 60.0
    room = np.maximum(WEEK_MIN * 0.92 - busy_min - 215.0 * dw_nsess, 0.0)
    gap_scale = np.where(gapsum > room, room / np.maximum(gapsum, 1e-9), 1.0)
    gap_min = gap_min * gap_scale[t_dw]

    sess_dur = np.bincount(sess_flat_of_trip, weights=cycle * 60.0, minlength=sz) + np.bincount(
        sess_flat_of_trip[not_last], weights=gap_min[not_last], minlength=sz
    )

    drv_s = dw_driver[s_dwk]
    wkd = prof.wkd[drv_s]
    pd_day = np.column_stack([np.repeat(wkd[:, None] / 5.0, 5, axis=1), np.repeat(((1.0 - wkd) / 2.0)[:, None], 2, axis=1)])
    day = (s_day_u[:, None] > np.cumsum(pd_day, axis=1)[:, :-1]).sum(axis=1)
    wmix_cum = np.cumsum(prof.window_mix[drv_s], axis=1)
    widx = (s_window_u[:, None] > wmix_cum[:, :-1]).sum(axis=1)
    wlo = np.array([w[0] for w in TIME_WINDOWS], dtype=float)
    whi = np.array([w[1] for w in TIME_WINDOWS], dtype=float)
    start_raw = day * 1440.0 + (wlo[widx] + s_hourfrac_u * np.maximum(whi[widx] - wlo[widx] - 0.5, 0.25)) * 60.0 + s_minute

    # order sessions within each driver-week by raw start
    order = np.lexsort((start_raw, s_dwk))
    inv = np.empty_like(order)
    inv[order] = np.arange(sz)
    start_sorted = start_raw[order].copy()
    dur_sorted = sess_dur[order]
    extra_sorted = s_extra_gap[order]
    dw_sorted = s_dwk[order]
    first_of_dw = np.concatenate([[True], dw_sorted[1:] != dw_sorted[:-1]]) if sz else np.zeros(0, bool)
    pos_in_dw = np.arange(sz) - np.maximum.accumulate(np.where(first_of_dw, np.arange(sz), 0))

    max_pos = int(pos_in_dw.max()) + 1 if sz else 0
    for p in range(1, max_pos):
        rows = np.flatnonzero(pos_in_dw == p)
        prev = rows - 1
        need = start_sorted[prev] + dur_sorted[prev] + 125.0 + extra_sorted[rows]
        start_sorted[rows] = np.maximum(start_sorted[rows], need)
    # clamp into the week, then repair any overflow by packing backwards
    start_sorted = np.minimum(start_sorted, WEEK_MIN - dur_sorted - 2.0)
    bad = np.zeros(sz, dtype=bool)
    if sz:
        same = ~first_of_dw
        coll = np.zeros(sz, dtype=bool)
        coll[1:] = same[1:] & (start_sorted[1:] < start_sorted[:-1] + dur_sorted[:-1] + 120.0)
        bad_dw = np.unique(dw_sorted[coll | (start_sorted < 0)])
        for dwi in bad_dw:
            rows = np.flatnonzero(dw_sorted == dwi)
            tail = WEEK_MIN - 2.0
            for rj in rows[::-1]:
                start_sorted[rj] = max(0.0, min(start_sorted[rj], tail - dur_sorted[rj]))
                tail = start_sorted[rj] - 125.0
    sess_start = start_sorted[inv] + dw_week[s_dwk] * float(WEEK_MIN)
    sess_rank = pos_in_dw[inv]  # chronological rank of the session in its week

    # ---- per-trip timestamps; prefix sums stay within each session so cells
    # untouched by treatment are bit-identical across effect settings
    step = cycle * 60.0 + np.where(not_last, gap_min, 0.0)
    rel = np.zeros(m)
    seq_order = np.argsort(seq, kind="stable")
    seq_sorted = seq[seq_order]
    max_seq = int(seq_sorted[-1]) + 1 if m else 0
    bounds = np.searchsorted(seq_sorted, np.arange(max_seq + 1))
    for k in range(1, max_seq):
        rows = seq_order[bounds[k] : bounds[k + 1]]
        rel[rows] = rel[rows - 1] + step[rows - 1]
    accept_f = sess_start[sess_flat_of_trip] + rel
    accept_m = np.floor(accept_f).astype(np.int64)
    pickup_m = np.floor(accept_f + enr_h * 60.0).astype(np.int64)
    dropoff_m = np.floor(accept_f + cycle * 60.0).astype(np.int64)
    request_m = accept_m - np.ceil(wait_lead).astype(np.int64)

    # ---- geometry: chain positions through each session
    layout = config.market_layout
    major = layout.major
    cmaj = np.array(major.centroid)
    g_of_trip = cohort[drv]
    week_of_trip = dw_week[t_dw]
    is_crossing = (week_of_trip == g_of_trip) & (seq == 0) & (sess_rank[sess_flat_of_trip] == 0)
    # outside-market drivers stay out of the major polygon until they cross
    forced_out = ~prof.home_major[drv] & (week_of_trip < g_of_trip) & ~is_crossing
    attract = (
        (attract_u < prof.q_attract[drv])
        & (g_of_trip != NEVER)
        & (week_of_trip >= g_of_trip)
        & ~is_crossing
    )

    miles_km = onb_h * prof.speed[drv]
    disp = miles_km / prof.winding[drv]
    enr_km = enr_h * prof.speed[drv] * 0.7

    ox = np.empty(m)
    oy = np.empty(m)
    dx = np.empty(m)
    dy = np.empty(m)
    sess_start_pt = prof.home[drv_s] + s_jitter
    home_x = prof.home[drv, 0]
    home_y = prof.home[drv, 1]
    radius = prof.radius[drv]

    prev_x = np.empty(m)
    prev_y = np.empty(m)
    first_rows = seq == 0
    prev_x[first_rows] = sess_start_pt[sess_flat_of_trip[first_rows], 0]
    prev_y[first_rows] = sess_start_pt[sess_flat_of_trip[first_rows], 1]

    for k in range(max_seq):
        rows = seq_order[bounds[k] : bounds[k + 1]]
        if rows.size == 0:
            continue
        px = prev_x[rows]
        py = prev_y[rows]
        ex, ey = np.cos(enr_theta[rows]), np.sin(enr_theta[rows])
        o_x = px + enr_km[rows] * ex
        o_y = py + enr_km[rows] * ey

        bx, by = np.cos(theta[rows]), np.sin(theta[rows])
        att = attract[rows]
        if att.any():
            ux, uy = _unit(cmaj[0] - o_x[att], cmaj[1] - o_y[att])
            mixx = bx[att] * 0.85 + 1.1 * ux
            mixy = by[att] * 0.85 + 1.1 * uy
            bx[att], by[att] = _unit(mixx, mixy)
        far = np.hypot(o_x - home_x[rows], o_y - home_y[rows]) > radius[rows]
        if far.any():
            bx[far], by[far] = _unit(home_x[rows][far] - o_x[far], home_y[rows][far] - o_y[far])
        d_x = o_x + disp[rows] * bx
        d_y = o_y + disp[rows] * by

        fo = forced_out[rows]
        if fo.any():
            inside = major.contains(d_x[fo], d_y[fo])
            if inside.any():
                idx = np.flatnonzero(fo)[inside]
                ax, ay = _unit(o_x[idx] - cmaj[0], o_y[idx] - cmaj[1])
                d_x[idx] = o_x[idx] + disp[rows][idx] * ax
                d_y[idx] = o_y[idx] + disp[rows][idx] * ay
                # deep-inside origins can survive the radial push; walk those
                # destinations just past the boundary along the same ray
                still = major.contains(d_x[idx], d_y[idx])
                for j in np.flatnonzero(still):
                    i = idx[j]
                    far_x = cmaj[0] + (d_x[i] - cmaj[0]) * 1e3
                    far_y = cmaj[1] + (d_y[i] - cmaj[1]) * 1e3
                    hit = clip_segment_to_polygon(cmaj[0], cmaj[1], far_x, far_y, major)
                    t_exit = hit[1] if hit else 0.0
                    d_x[i] = cmaj[0] + (far_x - cmaj[0]) * t_exit * 1.02 + 0.05
                    d_y[i] = cmaj[1] + (far_y - cmaj[1]) * t_exit * 1.02

        cr = np.flatnonzero(is_crossing[rows])
        for j in cr:
            o = (o_x[j], o_y[j])
            if major.contains(o[0], o[1]):
                d_x[j] = o[0] + 0.5 * (cmaj[0] - o[0])
                d_y[j] = o[1] + 0.5 * (cmaj[1] - o[1])
                continue
            hit = clip_segment_to_polygon(o[0], o[1], cmaj[0], cmaj[1], major)
            t0 = hit[0] if hit else 1.0
            exx = o[0] + t0 * (cmaj[0] - o[0])
            eyy = o[1] + t0 * (cmaj[1] - o[1])
            ux, uy = _unit(np.array([cmaj[0] - exx]), np.array([cmaj[1] - eyy]))
            depth = 1.0 + depth_u[rows[j]] * min(11.0, 0.8 * np.hypot(cmaj[0] - exx, cmaj[1] - eyy))
            d_x[j] = exx + depth * ux[0]
            d_y[j] = eyy + depth * uy[0]

        ox[rows] = o_x
        oy[rows] = o_y
        dx[rows] = d_x
        dy[rows] = d_y
        nxt = rows + 1
        ok = nxt < m
        ok[ok] = (sess_flat_of_trip[nxt[ok]] == sess_flat_of_trip[rows[ok]]) & (seq[nxt[ok]] == k + 1)
        prev_x[nxt[ok]] = d_x[ok]
        prev_y[nxt[ok]] = d_y[ok]

    # ---- vehicles, money, ratings
    vcum = np.cumsum(prof.vehicle_mix[drv], axis=1)
    vidx = (vehicle_u[:, None] > vcum[:, :-1]).sum(axis=1)
    earn_core = prof.rate[drv] * _VEHICLE_RATE_MULT[vidx] * dw_rate_mult[t_dw] * onb_h * np.exp(
        fare_noise * prof.fare_noise_sd[drv]
    )
    share = np.clip(prof.driver_share[drv] + share_jitter, 0.55, 0.93)
    npp = earn_core / share
    earnings = np.round(earn_core, 4)
    fees = np.round(1.6 + 0.10 * npp, 4)
    take = np.round(npp - earn_core, 4)

    if not zero_effects:
        post = (week_of_trip >= g_of_trip) & (g_of_trip != NEVER)
        wk_npp = np.bincount(t_dw[post], weights=(earnings + take)[post], minlength=n_dw)
        wk_earn = np.bincount(t_dw[post], weights=earnings[post], minlength=n_dw)
        wk_take = np.bincount(t_dw[post], weights=take[post], minlength=n_dw)
        deficit = np.maximum(config.guarantee_share * wk_npp - wk_earn, 0.0)
        give = np.zeros(m)
        has = wk_take > 1e-9
        give[post] = np.where(
            has[t_dw[post]], deficit[t_dw[post]] * take[post] / np.maximum(wk_take[t_dw[post]], 1e-9), 0.0
        )
        topped = np.round(earnings + give, 4)
        take = take - (topped - earnings)
        earnings = topped

    payment = fees + take + earnings
    tip = np.where(tip_u < 0.25, np.round(tip_amt * (1.0 + 0.3 * onb_h), 2), 0.0)
    rating = np.where(
        rating_u < 0.72,
        np.clip(np.round(prof.rating_mean[drv] + rating_noise, 1), 1.0, 5.0),
        np.nan,
    )

    # session ids scoped to the driver so one cell's session count cannot
    # renumber another driver's sessions
    sess_key = np.lexsort((sess_start, dw_driver[s_dwk]))
    drv_sorted = dw_driver[s_dwk][sess_key]
    first_s = np.concatenate([[True], drv_sorted[1:] != drv_sorted[:-1]]) if sz else np.zeros(0, bool)
    rank_in_driver = np.arange(sz) - np.maximum.accumulate(np.where(first_s, np.arange(sz), 0))
    sess_id = np.empty(sz, dtype=np.int64)
    sess_id[sess_key] = drv_sorted * 100_000 + rank_in_driver + 1
    trip_sess_id = sess_id[sess_flat_of_trip]

    completed = pd.DataFrame(
        {
            "driver_id": drv,
            "session_id": trip_sess_id,
            "request_min": request_m,
            "accept_min": accept_m,
            "pickup_min": pickup_m,
            "dropoff_min": dropoff_m,
            "o_x_km": np.round(ox, 5),
            "o_y_km": np.round(oy, 5),
            "d_x_km": np.round(dx, 5),
            "d_y_km": np.round(dy, 5),
            "miles": np.round(miles_km * 0.621371, 4),
            "rider_payment": payment,
            "external_fees": fees,
            "platform_take": take,
            "driver_earnings": earnings,
            "tip": tip,
            "vehicle_type": pd.Categorical.from_codes(vidx, categories=list(VEHICLE_TYPES)),
            "cancelled": False,
            "rating": rating,
        }
    )

    # ---- cancelled trips: zero-duration accept/cancel events near a host trip
    lift = 0.0 if zero_effects else config.cancel_lift
    p_canc = np.clip(prof.p_cancel[dw_driver] + lift * dw_treated, 0.0, 0.10)
    lam_c = dw_ntrip * p_canc / (1.0 - p_canc)
    n_canc = np.minimum(
        _poisson_ppf_from_uniform(cancel_u[di, wi], lam_c, kmax=40), dw_ncanc_draw
    )

    c_keep = (np.arange(c_dw_full.size) - np.concatenate([[0], np.cumsum(dw_ncanc_draw)[:-1]])[c_dw_full]) < n_canc[c_dw_full]
    c_dw = c_dw_full[c_keep]
    if c_dw.size:
        host_pos = np.minimum((c_host_u[c_keep] * dw_ntrip[c_dw]).astype(np.int64), dw_ntrip[c_dw] - 1)
        sel_offsets = np.concatenate([[0], np.cumsum(dw_ntrip)[:-1]])
        host_row = sel_offsets[c_dw] + host_pos
        # clamp into the host's week so a cancel never leaks into the
        # neighboring (possibly untreated) cell
        week_floor = dw_week[c_dw] * WEEK_MIN
        c_accept = np.maximum(
            accept_m[host_row] - 3 - np.floor(c_lead1[c_keep] * 7.0).astype(np.int64),
            week_floor,
        )
        c_request = np.maximum(
            c_accept - 1 - np.floor(c_lead2[c_keep] * 3.0).astype(np.int64), week_floor
        )
        c_ox = ox[host_row] + c_jitter[c_keep, 0]
        c_oy = oy[host_row] + c_jitter[c_keep, 1]
        cancels = pd.DataFrame(
            {
                "driver_id": dw_driver[c_dw],
                "session_id": trip_sess_id[host_row],
                "request_min": c_request,
                "accept_min": c_accept,
                "pickup_min": np.int64(-1),
                "dropoff_min": np.int64(-1),
                "o_x_km": np.round(c_ox, 5),
                "o_y_km": np.round(c_oy, 5),
                "d_x_km": np.round(c_ox, 5),
                "d_y_km": np.round(c_oy, 5),
                "miles": 0.0,
                "rider_payment": 0.0,
                "external_fees": 0.0,
                "platform_take": 0.0,
                "driver_earnings": 0.0,
                "tip": 0.0,
                "vehicle_type": pd.Categorical.from_codes(
                    vidx[host_row], categories=list(VEHICLE_TYPES)
                ),
                "cancelled": True,
                "rating": np.nan,
            }
        )
        # drop cancels colliding with any same-driver accept minute
        key_all = completed["driver_id"].to_numpy() * np.int64(10**10) + completed["accept_min"].to_numpy()
        key_c = cancels["driver_id"].to_numpy() * np.int64(10**10) + cancels["accept_min"].to_numpy()
        fresh = ~np.isin(key_c, key_all)
        uniq = pd.Series(key_c).duplicated().to_numpy()
        cancels = cancels[fresh & ~uniq]
        trips = pd.concat([completed, cancels], ignore_index=True)
    else:
        trips = completed

    trips = trips.sort_values(
        ["request_min", "driver_id", "accept_min", "session_id"], kind="mergesort"
    ).reset_index(drop=True)

    anchor = np.datetime64(config.anchor + "T00:00")
    for col in ["request", "accept", "pickup", "dropoff"]:
        mins = trips[f"{col}_min"].to_numpy()
        trips[f"{col}_ts"] = anchor + mins.astype("timedelta64[m]")
    cancelled_mask = trips["cancelled"].to_numpy()
    trips.loc[cancelled_mask, "pickup_ts"] = pd.NaT
    trips.loc[cancelled_mask, "dropoff_ts"] = pd.NaT
    trips = trips[TRIP_COLUMNS]

    # ---- demand log and production truth
    demand, price_index, production = _generate_demand(
        rng_demand, config, completed, zero_effects
    )

    effects = {
        "log_num_hour": d_hours,
        "ave_utilization": d_util,
        "log_hourly_earning": d_earn,
        "demand_spillover": 0.0 if zero_effects else config.effect_demand_spillover,
    }
    truth = GroundTruth(
        seed=config.seed,
        anchor=config.anchor,
        n_weeks_pre=config.n_weeks_pre,
        n_weeks_post=config.n_weeks_post,
        hex_cell_area_km2=config.hex_cell_area_km2,
        production_hex_area_km2=PRODUCTION_HEX_AREA_KM2,
        cohort={int(d): (int(cohort[d]) if cohort[d] != NEVER else None) for d in range(n)},
        effects=effects,
        production=production,
        price_index=price_index,
        polygons={
            "major": [[float(a), float(b)] for a, b in layout.major.vertices],
            "adjacent": [
                [[float(a), float(b)] for a, b in p.vertices] for p in layout.adjacent
            ],
        },
        config_summary={
            "n_drivers": n,
            "anticipation_weeks": config.anticipation_weeks,
            "guarantee_share": config.guarantee_share,
            "zero_effects": bool(zero_effects),
        },
    )
    return trips, demand, truth


def _generate_demand(rng: np.random.Generator, config: SimConfig, completed: pd.DataFrame, zero_effects: bool):
    """Hex-hour intents/requests/completes plus price index and production truth."""
    dmap = config.demand_map()
    grid = HexGrid(config.hex_cell_area_km2)
    grid36 = HexGrid(PRODUCTION_HEX_AREA_KM2)
    partition = AreaPartition.from_polygons(config.market_layout.all_polygons)

    # production elasticities per market key (demand elasticity above supply)
    keys = all_market_keys()
    log_a = rng.normal(np.log(0.55), 0.15, len(keys))
    alpha = np.clip(rng.normal(0.72, 0.06, len(keys)), 0.5, 0.9)
    beta = np.clip(rng.normal(0.38, 0.05, len(keys)), 0.15, 0.6)
    production = {
        f"{a}|{s}|{d}": {"log_A": float(la), "alpha": float(al), "beta": float(be)}
        for (a, s, d), la, al, be in zip(keys, log_a, alpha, beta)
    }

    if not dmap:
        demand = pd.DataFrame(
            {
                "hex_q": np.array([], dtype=np.int64),
                "hex_r": np.array([], dtype=np.int64),
                "hour_index": np.array([], dtype=np.int64),
                "intents": np.array([], dtype=np.int64),
                "requests": np.array([], dtype=np.int64),
                "completes": np.array([], dtype=np.int64),
            }
        )
        return demand, {}, production

    hq = np.array([k[0] for k in sorted(dmap)], dtype=np.int64)
    hr = np.array([k[1] for k in sorted(dmap)], dtype=np.int64)
    rate0 = np.array([dmap[k] for k in sorted(dmap)])
    nh = hq.size
    hours = np.arange(-config.n_weeks_pre * 168, (config.n_weeks_post + 1) * 168, dtype=np.int64)
    nhours = hours.size
    hod = (hours % 24).astype(np.int64)
    dow = day_index_of_hour(hours)

    cx, cy = grid.center(hq, hr)
    zq, zr = grid36.hex_of(cx, cy)
    zone_keys = np.char.add(np.char.add(zq.astype(str), ":"), zr.astype(str))
    zones, zone_idx = np.unique(zone_keys, return_inverse=True)
    n_weeks = config.n_weeks
    price = np.exp(rng.normal(0.0, config.price_index_volatility, (zones.size, n_weeks)))

    in_major = config.market_layout.major.contains(cx, cy)

    # generation-side supply: the same three-state driver clock the
    # production estimator reconstructs -- en-route and transporting time
    # walked along the straight segment in short substeps, idle capped at
    # two hours at the dropoff hexagon, two terminal hours after the last
    # trip
    key_sorted = hq * np.int64(10**6) + hr
    supply = np.zeros(nh * nhours)

    def _credit(sx, sy, ta, tb):
        qq, rr = grid.hex_of(np.asarray(sx, dtype=float), np.asarray(sy, dtype=float))
        key = qq * np.int64(10**6) + rr
        hex_i = np.searchsorted(key_sorted, key)
        on_map = (hex_i < nh) & (key_sorted[np.minimum(hex_i, nh - 1)] == key)
        a = np.asarray(ta, dtype=float).copy()
        b = np.asarray(tb, dtype=float)
        live = on_map & (a < b)
        while live.any():
            ha = np.floor_divide(a[live], 60.0)
            cut = np.minimum(b[live], (ha + 1.0) * 60.0)
            hr_i = ha.astype(np.int64) - hours[0]
            in_rng = (hr_i >= 0) & (hr_i < nhours)
            codes = (hex_i[live] * nhours + hr_i)[in_rng]
            if codes.size:
                top = int(codes.max()) + 1
                supply[:top] += np.bincount(
                    codes, weights=((cut - a[live]) / 60.0)[in_rng], minlength=top
                )
            a[live] = cut
            live = on_map & (a < b)

    def _credit_moving(x0, y0, x1, y1, t0, t1):
        dist = np.hypot(x1 - x0, y1 - y0)
        nseg = np.maximum(np.ceil(dist / 1.2).astype(np.int64), 1)
        row = np.repeat(np.arange(x0.size), nseg)
        offs = np.concatenate([[0], np.cumsum(nseg)[:-1]]) if nseg.size else np.array([], np.int64)
        step = np.arange(int(nseg.sum())) - np.repeat(offs, nseg)
        f0 = step / nseg[row]
        f1 = (step + 1) / nseg[row]
        mid = 0.5 * (f0 + f1)
        _credit(
            x0[row] + (x1 - x0)[row] * mid,
            y0[row] + (y1 - y0)[row] * mid,
            t0[row] + (t1 - t0)[row] * f0,
            t0[row] + (t1 - t0)[row] * f1,
        )

    order = np.lexsort((completed["accept_min"].to_numpy(), completed["driver_id"].to_numpy()))
    drv_s = completed["driver_id"].to_numpy()[order]
    acc_s = completed["accept_min"].to_numpy()[order].astype(float)
    pick_s = completed["pickup_min"].to_numpy()[order].astype(float)
    drop_s = completed["dropoff_min"].to_numpy()[order].astype(float)
    ox_s = completed["o_x_km"].to_numpy()[order]
    oy_s = completed["o_y_km"].to_numpy()[order]
    dx_s = completed["d_x_km"].to_numpy()[order]
    dy_s = completed["d_y_km"].to_numpy()[order]
    same = np.zeros(drv_s.size, dtype=bool)
    same[1:] = drv_s[1:] == drv_s[:-1]
    px = np.where(same, np.roll(dx_s, 1), ox_s)
    py = np.where(same, np.roll(dy_s, 1), oy_s)
    prev_drop = np.where(same, np.roll(drop_s, 1), acc_s)
    last = np.zeros(drv_s.size, dtype=bool)
    if drv_s.size:
        last[:-1] = drv_s[:-1] != drv_s[1:]
        last[-1] = True
    for lo in range(0, drv_s.size, 400_000):
        blk = slice(lo, min(lo + 400_000, drv_s.size))
        _credit_moving(px[blk], py[blk], ox_s[blk], oy_s[blk], acc_s[blk], pick_s[blk])
        _credit_moving(ox_s[blk], oy_s[blk], dx_s[blk], dy_s[blk], pick_s[blk], drop_s[blk])
        _credit(px[blk], py[blk], prev_drop[blk], np.minimum(acc_s[blk], prev_drop[blk] + 120.0))
    _credit(dx_s[last], dy_s[last], drop_s[last], drop_s[last] + 120.0)
    supply = supply.reshape(nh, nhours)

    # the hour-of-day / day-of-week pattern repeats weekly, so per-cell
    # production parameters are a single (hex, week-hour) grid
    hod_w = hod[:168]
    dow_w = dow[:168]
    slot_w = slot_index_of_hour(hod_w)
    area_i = partition.area_of(cx, cy)
    key_index = {k: i for i, k in enumerate(keys)}
    area_base = np.array(
        [[key_index[(int(a), s, d)] for d in DAYS for s in SLOTS] for a in area_i]
    ).reshape(nh, 7, 5)
    param_idx = np.full((nh, 168), -1, dtype=np.int64)
    in_slot = slot_w >= 0
    param_idx[:, in_slot] = area_base[:, dow_w[in_slot], slot_w[in_slot]]
    off = param_idx < 0
    la_grid = np.where(off, _OFFSLOT_PARAMS[0], log_a[np.maximum(param_idx, 0)])
    al_grid = np.where(off, _OFFSLOT_PARAMS[1], alpha[np.maximum(param_idx, 0)])
    be_grid = np.where(off, _OFFSLOT_PARAMS[2], beta[np.maximum(param_idx, 0)])
    lam_week = rate0[:, None] * HOUR_MULT[hod_w][None, :] * DAY_MULT[dow_w][None, :]

    spill_mult = np.exp(config.effect_demand_spillover) - 1.0
    intents = np.empty((nh, nhours), dtype=np.int64)
    requests = np.empty((nh, nhours), dtype=np.int64)
    completes = np.empty((nh, nhours), dtype=np.int64)
    for w in range(n_weeks):
        sl = slice(w * 168, (w + 1) * 168)
        lam0 = lam_week * price[zone_idx, w][:, None] ** (-0.35)
        base = rng.poisson(lam0)
        extra_u = rng.random((nh, 168))
        req_u = rng.random((nh, 168))
        z = rng.normal(0.0, 1.0, (nh, 168))
        chunk = base
        if spill_mult > 0 and not zero_effects and weeks_of_chunk(w, config) >= 0:
            extra = _poisson_ppf_from_uniform(
                extra_u, lam0 * spill_mult * in_major[:, None], kmax=80
            )
            chunk = base + extra
        intents[:, sl] = chunk
        requests[:, sl] = np.floor(chunk * (0.68 + 0.08 * req_u)).astype(np.int64)
        cap = (
            np.exp(la_grid + 0.12 * z)
            * np.power(chunk, al_grid)
            * np.power(supply[:, sl], be_grid)
        )
        completes[:, sl] = np.clip(np.round(cap).astype(np.int64), 0, requests[:, sl])

    # hexes are already sorted by (q, r); emitting hour-major keeps the frame
    # in its canonical (hour_index, hex_q, hex_r) order without a sort
    demand = pd.DataFrame(
        {
            "hex_q": np.tile(hq, nhours),
            "hex_r": np.tile(hr, nhours),
            "hour_index": np.repeat(hours, nh),
            "intents": np.ascontiguousarray(intents.T).ravel(),
            "requests": np.ascontiguousarray(requests.T).ravel(),
            "completes": np.ascontiguousarray(completes.T).ravel(),
        }
    )
    price_index = {str(z): [float(x) for x in price[i]] for i, z in enumerate(zones)}
    return demand, price_index, production


@dataclass
class TwoYearResult:
    trips_prior: pd.DataFrame
    demand_prior: pd.DataFrame
    trips_treatment: pd.DataFrame
    demand_treatment: pd.DataFrame
    truth: GroundTruth


def generate_two_year(config: SimConfig) -> TwoYearResult:
    """Treatment year plus an aligned zero-effect prior year.

    The prior year is the same latent world with every effect (and the
    guarantee) switched off, timestamps shifted back exactly 52 weeks so
    week-of-year alignment is preserved.
    """
    trips_t, demand_t, truth = generate_market(config, zero_effects=False)
    trips_p, demand_p, _ = generate_market(config, zero_effects=True)
    trips_p = trips_p.copy()
    for col in ["request_ts", "accept_ts", "pickup_ts", "dropoff_ts"]:
        trips_p[col] = trips_p[col] - pd.Timedelta(days=364)
    demand_p = demand_p.copy()
    demand_p["hour_index"] = demand_p["hour_index"] - 52 * 168
    return TwoYearResult(trips_p, demand_p, trips_t, demand_t, truth)
