"""Counterfactual reallocation of session starts.

Observed sessions are summarized by where they start (hexagon, slot, day)
and how many supply hours they produce. Each start key carries an outcome
distribution — the average share of a session's hours landing in each
hexagon. Moving a session replays its hours through the distribution of
the new key, demand held fixed, and the fitted production functions
translate the shifted supply into predicted rides. Five perturbation
heuristics search over such moves under hard conservation: session count
and total hours never change, spatial moves stay within the hop budget,
and temporal moves shift the start hour by exactly one within the day.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .geo import HexGrid
from .markets import DAYS, SLOTS, AreaPartition, day_index_of_hour, slot_index_of_hour

IDLE_CAP_MIN = 120.0
SUBSTEP_KM = 1.2
MIN_KEY_SESSIONS = 5
_EPS = 1e-12


# ---------------------------------------------------------------------------
# sessions and footprints


def extract_sessions(
    trips: pd.DataFrame, hex_area_km2: float, anchor
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Session table plus per-session hexagon supply footprints.

    A session starts at its first trip's origin hexagon and accept hour.
    Its footprint spreads en-route and transporting time along straight
    segments in 1.2 km substeps, puts idle time (capped at two hours) at
    the previous dropoff hexagon, and adds two terminal hours after a
    driver's last trip — the same spatial attribution as the supply-state
    accounting, tagged to sessions instead of chipped into hours.

    Returns
    -------
    sessions : DataFrame
        session_id, driver_id, hex_q, hex_r, start_hour, day, slot, hours.
        Sessions starting before 07:00 get an empty slot and are treated
        as unmovable by every heuristic.
    footprints : DataFrame
        session_id, hex_q, hex_r, hours.
    """
    done = trips.loc[~trips["cancelled"].astype(bool)].sort_values(
        ["driver_id", "accept_ts"], kind="mergesort"
    )
    if done.empty:
        raise ValueError("no completed trips to extract sessions from")
    anchor64 = np.datetime64(pd.Timestamp(anchor), "m")
    acc = (done["accept_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    pick = (done["pickup_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    drop = (done["dropoff_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    drv = done["driver_id"].to_numpy()
    sid = done["session_id"].to_numpy()
    ox = done["o_x_km"].to_numpy(dtype=float)
    oy = done["o_y_km"].to_numpy(dtype=float)
    dx = done["d_x_km"].to_numpy(dtype=float)
    dy = done["d_y_km"].to_numpy(dtype=float)

    same = np.zeros(len(done), dtype=bool)
    same[1:] = drv[1:] == drv[:-1]
    px = np.where(same, np.roll(dx, 1), ox)
    py = np.where(same, np.roll(dy, 1), oy)
    prev_drop = np.where(same, np.roll(drop, 1), acc).astype(float)
    prev_sid = np.where(same, np.roll(sid, 1), sid)
    last = np.zeros(len(done), dtype=bool)
    last[:-1] = drv[:-1] != drv[1:]
    last[-1] = True

    grid = HexGrid(hex_area_km2)
    frames: list[pd.DataFrame] = []

    def add(sess, x, y, dur_min):
        dur_min = np.asarray(dur_min, dtype=float)
        keep = dur_min > 0
        if not keep.any():
            return
        q, r = grid.hex_of(np.asarray(x, float)[keep], np.asarray(y, float)[keep])
        frames.append(
            pd.DataFrame(
                {
                    "session_id": np.asarray(sess)[keep],
                    "hex_q": q,
                    "hex_r": r,
                    "hours": dur_min[keep] / 60.0,
                }
            )
        )

    def add_moving(sess, x0, y0, x1, y1, t0, t1):
        dist = np.hypot(x1 - x0, y1 - y0)
        nseg = np.maximum(np.ceil(dist / SUBSTEP_KM).astype(np.int64), 1)
        row = np.repeat(np.arange(x0.size), nseg)
        offs = np.concatenate([[0], np.cumsum(nseg)[:-1]])
        mid = (np.arange(int(nseg.sum())) - np.repeat(offs, nseg) + 0.5) / nseg[row]
        add(
            np.asarray(sess)[row],
            x0[row] + (x1 - x0)[row] * mid,
            y0[row] + (y1 - y0)[row] * mid,
            (t1 - t0)[row] / nseg[row],
        )

    add_moving(sid, px, py, ox, oy, acc.astype(float), pick.astype(float))
    add_moving(sid, ox, oy, dx, dy, pick.astype(float), drop.astype(float))
    add(prev_sid, px, py, np.where(same, np.minimum(acc - prev_drop, IDLE_CAP_MIN), 0.0))
    add(sid[last], dx[last], dy[last], np.full(int(last.sum()), IDLE_CAP_MIN))

    fp = (
        pd.concat(frames, ignore_index=True)
        .groupby(["session_id", "hex_q", "hex_r"], sort=True)["hours"]
        .sum()
        .reset_index()
    )

    first = done.loc[~done.duplicated("session_id")]
    sq, sr = grid.hex_of(
        first["o_x_km"].to_numpy(dtype=float), first["o_y_km"].to_numpy(dtype=float)
    )
    facc = (first["accept_ts"].to_numpy().astype("datetime64[m]") - anchor64).astype(np.int64)
    hour_abs = np.floor_divide(facc, 60)
    start_hour = (hour_abs % 24).astype(np.int64)
    slot_idx = slot_index_of_hour(start_hour)
    totals = fp.groupby("session_id")["hours"].sum()
    sessions = (
        pd.DataFrame(
            {
                "session_id": first["session_id"].to_numpy(),
                "driver_id": first["driver_id"].to_numpy(),
                "hex_q": sq,
                "hex_r": sr,
                "start_hour": start_hour,
                "day": np.asarray(DAYS)[day_index_of_hour(hour_abs)],
                "slot": np.asarray(SLOTS + ("",))[slot_idx],
                "hours": totals.reindex(first["session_id"]).to_numpy(),
            }
        )
        .sort_values("session_id", kind="mergesort")
        .reset_index(drop=True)
    )
    return sessions, fp


# ---------------------------------------------------------------------------
# outcome distributions


@dataclass
class OutcomeDistributions:
    """Per (hexagon, slot, day) expected share of session hours per hexagon.

    Keys observed fewer than ``min_sessions`` times resolve to their area's
    pooled distribution, as do keys never observed at all; a key whose area
    pool is also empty resolves to None (no way to place supply there).
    """

    exact: dict
    pooled: dict
    counts: dict
    partition: AreaPartition
    grid: HexGrid
    min_sessions: int = MIN_KEY_SESSIONS

    def lookup(self, q: int, r: int, slot: str, day: str):
        """Resolve (hex array, share array) for a start key, or None."""
        key = (int(q), int(r), slot, day)
        if self.counts.get(key, 0) >= self.min_sessions:
            return self.exact[key]
        cx, cy = self.grid.center(q, r)
        area = int(self.partition.area_of(float(cx), float(cy)))
        return self.pooled.get((area, slot, day))


def build_outcome_distributions(
    sessions: pd.DataFrame,
    footprints: pd.DataFrame,
    partition: AreaPartition,
    hex_area_km2: float,
    min_sessions: int = MIN_KEY_SESSIONS,
) -> OutcomeDistributions:
    """Average per-session hexagon shares per start key, with area pooling.

    Every session contributes its share vector (footprint hours divided by
    the session's total hours) with equal weight; a key's distribution is
    the plain mean over its sessions, so shares sum to one per key.
    """
    grid = HexGrid(hex_area_km2)
    sess = sessions.loc[sessions["slot"] != ""].copy()
    cx, cy = grid.center(sess["hex_q"].to_numpy(), sess["hex_r"].to_numpy())
    sess["area"] = partition.area_of(cx, cy)

    tot = footprints.groupby("session_id")["hours"].sum()
    fp = footprints.merge(
        sess[["session_id", "hex_q", "hex_r", "slot", "day", "area"]],
        on="session_id",
        suffixes=("", "_start"),
    )
    fp["share"] = fp["hours"] / tot.reindex(fp["session_id"]).to_numpy()

    def mean_dist(g: pd.DataFrame, n: int):
        acc = g.groupby(["hex_q", "hex_r"], sort=True)["share"].sum() / n
        return np.array(list(acc.index), dtype=np.int64), acc.to_numpy()

    exact: dict = {}
    counts: dict = {}
    for (q, r, slot, day), g in fp.groupby(
        ["hex_q_start", "hex_r_start", "slot", "day"], sort=False
    ):
        n = g["session_id"].nunique()
        key = (int(q), int(r), str(slot), str(day))
        counts[key] = n
        exact[key] = mean_dist(g, n)
    pooled: dict = {}
    for (area, slot, day), g in fp.groupby(["area", "slot", "day"], sort=False):
        pooled[(int(area), str(slot), str(day))] = mean_dist(g, g["session_id"].nunique())
    return OutcomeDistributions(
        exact=exact,
        pooled=pooled,
        counts=counts,
        partition=partition,
        grid=grid,
        min_sessions=min_sessions,
    )


# ---------------------------------------------------------------------------
# forward prediction


def build_demand_cells(demand: pd.DataFrame) -> pd.DataFrame:
    """Aggregate hex-hour intents into (hexagon, slot, day) evaluation cells.

    Hours 0-6 fall outside every slot and are dropped. ``D_per_hour`` is
    the mean intent count over the hours pooled into the cell and
    ``n_hours`` how many hex-hours the cell spans.
    """
    slot_idx = slot_index_of_hour(demand["hour_index"].to_numpy() % 24)
    d = demand.loc[slot_idx >= 0].copy()
    d["slot"] = np.asarray(SLOTS)[slot_idx[slot_idx >= 0]]
    d["day"] = np.asarray(DAYS)[day_index_of_hour(d["hour_index"].to_numpy())]
    g = d.groupby(["hex_q", "hex_r", "slot", "day"], sort=True).agg(
        intents=("intents", "sum"), n_hours=("intents", "size")
    )
    g["D_per_hour"] = g["intents"] / g["n_hours"]
    return g.reset_index()[["hex_q", "hex_r", "slot", "day", "D_per_hour", "n_hours"]]


def supply_field(
    sessions: pd.DataFrame,
    distributions: OutcomeDistributions,
    assignments: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Hexagon-cell supply hours implied by sessions under an optional plan.

    With no plan every session sits at its observed start key; with a plan
    the new keys from ``assignments`` replace them. Both paths run the
    identical accumulation, so a no-move plan reproduces the no-plan field
    bit for bit.
    """
    sess = sessions.sort_values("session_id", kind="mergesort")
    hex_q = sess["hex_q"].to_numpy().copy()
    hex_r = sess["hex_r"].to_numpy().copy()
    slot = sess["slot"].to_numpy(dtype=object).copy()
    if assignments is not None:
        a = assignments.set_index("session_id").reindex(sess["session_id"])
        take = a["new_hex_q"].notna().to_numpy()
        hex_q[take] = a["new_hex_q"].to_numpy()[take]
        hex_r[take] = a["new_hex_r"].to_numpy()[take]
        slot[take] = a["new_slot"].to_numpy(dtype=object)[take]
    day = sess["day"].to_numpy(dtype=object)
    hours = sess["hours"].to_numpy(dtype=float)
    acc: dict = {}
    for i in range(len(sess)):
        if not slot[i]:
            continue
        got = distributions.lookup(int(hex_q[i]), int(hex_r[i]), str(slot[i]), str(day[i]))
        if got is None:
            continue
        hexes, shares = got
        for (hq, hr), s in zip(hexes.tolist(), shares.tolist()):
            cell = (hq, hr, str(slot[i]), str(day[i]))
            acc[cell] = acc.get(cell, 0.0) + hours[i] * s
    rows = sorted(acc.items())
    return pd.DataFrame(
        {
            "hex_q": [k[0] for k, _ in rows],
            "hex_r": [k[1] for k, _ in rows],
            "slot": [k[2] for k, _ in rows],
            "day": [k[3] for k, _ in rows],
            "supply_h": [v for _, v in rows],
        }
    )


def predict_rides(
    supply_cells: pd.DataFrame,
    demand_cells: pd.DataFrame,
    params: pd.DataFrame,
    partition: AreaPartition,
    hex_area_km2: float,
) -> tuple[float, pd.DataFrame]:
    """Expected rides per cell and in total from a supply field.

    The per-hour prediction is exp(log_A)·D^alpha·S^beta capped at D
    (completed rides cannot exceed requests); a cell's total scales with
    its hour count. Supply touching a market without a fitted production
    function raises an error naming the markets.
    """
    df = demand_cells.merge(supply_cells, on=["hex_q", "hex_r", "slot", "day"], how="left")
    df["supply_h"] = df["supply_h"].fillna(0.0)
    grid = HexGrid(hex_area_km2)
    cx, cy = grid.center(df["hex_q"].to_numpy(), df["hex_r"].to_numpy())
    df["area"] = partition.area_of(cx, cy)
    idx = pd.MultiIndex.from_frame(df[["area", "slot", "day"]])
    matched = params.set_index(["area", "slot", "day"]).reindex(idx)
    touched = (df["supply_h"].to_numpy() > 0) & (df["D_per_hour"].to_numpy() > 0)
    bad = touched & ~matched["fitted"].fillna(False).to_numpy(dtype=bool)
    if bad.any():
        missing = sorted(set(idx[bad]))
        raise ValueError(f"no fitted production function for supplied markets: {missing}")
    A = np.exp(matched["log_A"].to_numpy(dtype=float))
    al = matched["alpha"].to_numpy(dtype=float)
    be = matched["beta"].to_numpy(dtype=float)
    D = df["D_per_hour"].to_numpy(dtype=float)
    nh = df["n_hours"].to_numpy(dtype=float)
    S = df["supply_h"].to_numpy(dtype=float) / nh
    with np.errstate(invalid="ignore"):
        rate = np.where((D > 0) & (S > 0), A * D**al * S**be, 0.0)
    df["pred_per_hour"] = np.minimum(np.nan_to_num(rate), D)
    df["pred_rides"] = df["pred_per_hour"] * nh
    return float(df["pred_rides"].sum()), df


# ---------------------------------------------------------------------------
# plans and the evaluation engine


@dataclass
class ReallocationPlan:
    """One heuristic's proposed session moves and their predicted value.

    ``additive_total`` evaluates moves one session at a time from the
    baseline (the objective the non-greedy heuristics optimize);
    ``predicted_total`` applies the whole plan jointly. For the greedy
    heuristics the two coincide by construction.
    """

    heuristic: str
    assignments: pd.DataFrame
    baseline_total: float
    additive_total: float
    predicted_total: float
    n_moved: int

    def frame(self) -> pd.DataFrame:
        return self.assignments.assign(heuristic=self.heuristic)


class ReallocationProblem:
    """Evaluation state shared by the heuristics.

    Holds the (hexagon, slot, day) cells that have demand and a fitted
    production function, the baseline supply implied by the sessions, and
    cached per-key unit-hour footprints. Cells without a fitted market lie
    outside the objective; supply landing there neither helps nor hurts.
    """

    def __init__(
        self,
        sessions: pd.DataFrame,
        distributions: OutcomeDistributions,
        demand_cells: pd.DataFrame,
        params: pd.DataFrame,
        partition: AreaPartition,
        hex_area_km2: float,
    ):
        self.dist = distributions
        self.grid = HexGrid(hex_area_km2)
        cells = demand_cells.copy()
        cx, cy = self.grid.center(cells["hex_q"].to_numpy(), cells["hex_r"].to_numpy())
        cells["area"] = partition.area_of(cx, cy)
        m = params.set_index(["area", "slot", "day"]).reindex(
            pd.MultiIndex.from_frame(cells[["area", "slot", "day"]])
        )
        ok = m["fitted"].fillna(False).to_numpy(dtype=bool)
        self.cells = cells.loc[ok].reset_index(drop=True)
        m = m[ok]
        self.A = np.exp(m["log_A"].to_numpy(dtype=float))
        self.al = m["alpha"].to_numpy(dtype=float)
        self.be = m["beta"].to_numpy(dtype=float)
        self.D = self.cells["D_per_hour"].to_numpy(dtype=float)
        self.nh = self.cells["n_hours"].to_numpy(dtype=float)
        self.index = {
            (int(q), int(r), s, d): i
            for i, (q, r, s, d) in enumerate(
                zip(
                    self.cells["hex_q"],
                    self.cells["hex_r"],
                    self.cells["slot"],
                    self.cells["day"],
                )
            )
        }
        self.sessions = (
            sessions.sort_values("session_id", kind="mergesort").reset_index(drop=True)
        )
        self.hours = self.sessions["hours"].to_numpy(dtype=float)
        self._fp_cache: dict = {}
        self.base_keys = [
            (int(t.hex_q), int(t.hex_r), str(t.slot), str(t.day))
            for t in self.sessions.itertuples()
        ]
        self.skey = list(self.base_keys)
        self.S = np.zeros(len(self.cells))
        for i, key in enumerate(self.base_keys):
            fp = self.footprint(key) if key[2] else None
            if fp is not None:
                np.add.at(self.S, fp[0], self.hours[i] * fp[1])
        self.pred = self._predict(np.arange(len(self.cells)), self.S)
        self.S0 = self.S.copy()
        self.pred0 = self.pred.copy()
        self.baseline_total = float(self.pred.sum())

    # -- state ------------------------------------------------------------

    def reset(self) -> None:
        """Return to the exact baseline state (bitwise)."""
        self.S = self.S0.copy()
        self.pred = self.pred0.copy()
        self.skey = list(self.base_keys)

    def footprint(self, key):
        """(cell indices, per-hour supply share) of one hour started at key."""
        key = key[:4]
        if key in self._fp_cache:
            return self._fp_cache[key]
        got = self.dist.lookup(*key)
        out = None
        if got is not None:
            hexes, shares = got
            idx, sh = [], []
            for (hq, hr), s in zip(hexes.tolist(), shares.tolist()):
                c = self.index.get((hq, hr, key[2], key[3]))
                if c is not None:
                    idx.append(c)
                    sh.append(s)
            if idx:
                ind = np.array(idx, dtype=np.int64)
                out = (ind, np.asarray(sh) / self.nh[ind])
        self._fp_cache[key] = out
        return out

    def _predict(self, idx: np.ndarray, supply: np.ndarray) -> np.ndarray:
        s = supply[idx] if supply.shape == self.S.shape else supply
        D = self.D[idx]
        with np.errstate(invalid="ignore"):
            rate = np.where(
                (D > 0) & (s > 0), self.A[idx] * D ** self.al[idx] * s ** self.be[idx], 0.0
            )
        return np.minimum(np.nan_to_num(rate), D) * self.nh[idx]

    def _delta(self, i: int, new_key):
        """Touched cells and their supply after moving session i, or None."""
        old_fp = self.footprint(self.skey[i])
        new_fp = self.footprint(new_key)
        if new_fp is None:
            return None
        h = self.hours[i]
        old_idx = old_fp[0] if old_fp is not None else np.array([], dtype=np.int64)
        touched = np.unique(np.concatenate([old_idx, new_fp[0]]))
        s_after = self.S[touched].copy()
        if old_fp is not None:
            np.subtract.at(s_after, np.searchsorted(touched, old_fp[0]), h * old_fp[1])
        np.add.at(s_after, np.searchsorted(touched, new_fp[0]), h * new_fp[1])
        return touched, s_after

    def gain(self, i: int, new_key) -> float:
        """Objective change from moving session i to new_key; state untouched."""
        d = self._delta(i, new_key)
        if d is None:
            return -np.inf
        touched, s_after = d
        return float(self._predict(touched, s_after).sum() - self.pred[touched].sum())

    def apply(self, i: int, new_key) -> np.ndarray:
        """Commit a move; returns the touched cell indices."""
        d = self._delta(i, new_key)
        if d is None:
            raise ValueError(
                f"session {self.sessions['session_id'].iloc[i]}: "
                f"no outcome distribution at {tuple(new_key[:4])}"
            )
        touched, s_after = d
        self.S[touched] = s_after
        self.pred[touched] = self._predict(touched, self.S)
        self.skey[i] = tuple(new_key[:4])
        return touched

    def total(self) -> float:
        return float(self.pred.sum())

    def joint_total(self, new_keys) -> float:
        """Predicted total with every move applied at once; state restored."""
        self.reset()
        for i, key in enumerate(new_keys):
            if key[2] and tuple(key[:4]) != self.skey[i]:
                self.apply(i, key)
        out = self.total()
        self.reset()
        return out


def _spatial_candidates(key, hops: int):
    q, r, slot, day = key
    return [(cq, cr, slot, day) for cq, cr in HexGrid.ring(q, r, hops)]


def _finalize(
    problem: ReallocationProblem, name: str, new_keys, new_hours, additive: float
) -> ReallocationPlan:
    sess = problem.sessions
    old_keys = problem.base_keys
    old_hours = sess["start_hour"].to_numpy()
    moved = sum(
        1
        for i in range(len(sess))
        if tuple(new_keys[i][:4]) != old_keys[i] or new_hours[i] != old_hours[i]
    )
    assignments = pd.DataFrame(
        {
            "session_id": sess["session_id"].to_numpy(),
            "old_hex_q": [k[0] for k in old_keys],
            "old_hex_r": [k[1] for k in old_keys],
            "new_hex_q": [k[0] for k in new_keys],
            "new_hex_r": [k[1] for k in new_keys],
            "old_slot": [k[2] for k in old_keys],
            "new_slot": [k[2] for k in new_keys],
            "day": [k[3] for k in old_keys],
            "old_hour": old_hours,
            "new_hour": new_hours,
            "hours": sess["hours"].to_numpy(),
        }
    )
    return ReallocationPlan(
        heuristic=name,
        assignments=assignments,
        baseline_total=problem.baseline_total,
        additive_total=additive,
        predicted_total=problem.joint_total(new_keys),
        n_moved=moved,
    )


# ---------------------------------------------------------------------------
# heuristics


def _one_at_a_time(problem: ReallocationProblem, name: str, hops: int) -> ReallocationPlan:
    problem.reset()
    new_keys = list(problem.base_keys)
    additive = problem.baseline_total
    for i, key in enumerate(problem.base_keys):
        if not key[2]:
            continue
        best, best_gain = key, 0.0
        for cand in _spatial_candidates(key, hops):
            if cand == key:
                continue
            g = problem.gain(i, cand)
            if g > best_gain + _EPS:
                best, best_gain = cand, g
        new_keys[i] = best
        additive += best_gain
    return _finalize(
        problem, name, new_keys, problem.sessions["start_hour"].to_numpy(), additive
    )


def heuristic_one_hop(problem: ReallocationProblem) -> ReallocationPlan:
    """Best immediate-neighbor start hexagon per session, others at baseline.

    Seven candidates per session (the hexagon itself and its six
    neighbors); ties keep the original hexagon.
    """
    return _one_at_a_time(problem, "one_hop", 1)


def heuristic_two_hop(problem: ReallocationProblem) -> ReallocationPlan:
    """As one-hop over the 19-cell two-hop candidate disk.

    The candidate set contains the one-hop set, so the one-at-a-time
    objective can only improve on one-hop.
    """
    return _one_at_a_time(problem, "two_hop", 2)


def heuristic_demand_weighted(problem: ReallocationProblem) -> ReallocationPlan:
    """Send each session to the two-hop hexagon with the most demand.

    Ties keep the original hexagon, then take the lowest (q, r). Moves are
    unconditional — the plan can predict fewer rides than baseline when
    everyone crowds the same hexagon — so the reported totals carry the
    sign of the change rather than assuming a gain.
    """
    problem.reset()
    new_keys = list(problem.base_keys)
    additive = problem.baseline_total
    for i, key in enumerate(problem.base_keys):
        if not key[2]:
            continue
        best, best_d = key, -np.inf
        for cand in _spatial_candidates(key, 2):
            if problem.footprint(cand) is None:
                continue
            c = problem.index.get(cand)
            d = float(problem.D[c]) if c is not None else 0.0
            if d > best_d + _EPS:
                best, best_d = cand, d
        orig = problem.index.get(key)
        orig_d = float(problem.D[orig]) if orig is not None else 0.0
        if problem.footprint(key) is not None and orig_d >= best_d - _EPS:
            best = key
        new_keys[i] = best
        if best != key:
            additive += problem.gain(i, best)
    return _finalize(
        problem,
        name="demand_weighted",
        new_keys=new_keys,
        new_hours=problem.sessions["start_hour"].to_numpy(),
        additive=additive,
    )


def _greedy(problem: ReallocationProblem, name: str, candidates_of) -> ReallocationPlan:
    """Exact greedy: largest-gain (session, move) first, then fix the session.

    Gains are kept current under all previously fixed moves: a cell-to-
    session index re-queues every unfixed session whose candidate
    footprints touch cells changed by an applied move. Each session moves
    at most once; the loop stops when the best remaining gain is
    nonpositive, so the objective is monotone nondecreasing.
    """
    problem.reset()
    sess = problem.sessions
    n = len(sess)
    cand_lists = [candidates_of(i) if problem.base_keys[i][2] else [] for i in range(n)]

    watchers: dict[int, set] = {}
    for i in range(n):
        touched_cells: set = set()
        for key in cand_lists[i] + [problem.base_keys[i]]:
            fp = problem.footprint(key) if key[2] else None
            if fp is not None:
                touched_cells.update(fp[0].tolist())
        for c in touched_cells:
            watchers.setdefault(c, set()).add(i)

    def best_move(i):
        best, best_gain = None, 0.0
        for cand in cand_lists[i]:
            if tuple(cand[:4]) == problem.skey[i]:
                continue
            g = problem.gain(i, cand)
            if g > best_gain + _EPS:
                best, best_gain = cand, g
        return best, best_gain

    version = [0] * n
    heap: list = []
    for i in range(n):
        mv, g = best_move(i)
        if mv is not None:
            heapq.heappush(heap, (-g, i, version[i], mv))

    fixed = [False] * n
    new_keys = list(problem.base_keys)
    new_hours = sess["start_hour"].to_numpy().copy()
    totals = [problem.baseline_total]
    while heap:
        _, i, ver, mv = heapq.heappop(heap)
        if fixed[i] or ver != version[i]:
            continue
        g = problem.gain(i, mv)  # revalidate under moves applied since queueing
        if g <= _EPS:
            mv2, g2 = best_move(i)
            if mv2 is not None:
                version[i] += 1
                heapq.heappush(heap, (-g2, i, version[i], mv2))
            continue
        touched = problem.apply(i, mv)
        fixed[i] = True
        new_keys[i] = mv
        if len(mv) > 4:
            new_hours[i] = mv[4]
        totals.append(problem.total())
        dirty: set = set()
        for c in touched.tolist():
            dirty |= watchers.get(c, set())
        for j in dirty:
            if fixed[j]:
                continue
            version[j] += 1
            mvj, gj = best_move(j)
            if mvj is not None:
                heapq.heappush(heap, (-gj, j, version[j], mvj))
    if (np.diff(totals) < -1e-9).any():
        raise AssertionError("greedy objective decreased")
    return _finalize(problem, name, new_keys, new_hours, totals[-1])


def heuristic_greedy_spatial(problem: ReallocationProblem) -> ReallocationPlan:
    """Interacting greedy over two-hop moves; monotone, stops at zero gain."""
    return _greedy(
        problem, "greedy_spatial", lambda i: _spatial_candidates(problem.base_keys[i], 2)
    )


def heuristic_greedy_temporal(problem: ReallocationProblem) -> ReallocationPlan:
    """Greedy over start-hour shifts of exactly one hour, hexagon fixed.

    A shifted hour must stay inside the same day and inside the slotted
    part of the day (07-23), else the candidate is excluded.
    """
    hours = problem.sessions["start_hour"].to_numpy()

    def candidates_of(i):
        q, r, _, day = problem.base_keys[i]
        out = []
        for h in (int(hours[i]) - 1, int(hours[i]) + 1):
            if not 0 <= h <= 23:
                continue
            si = int(slot_index_of_hour(h))
            if si < 0:
                continue
            out.append((q, r, SLOTS[si], day, h))
        return out

    return _greedy(problem, "greedy_temporal", candidates_of)


HEURISTICS = {
    "one_hop": heuristic_one_hop,
    "two_hop": heuristic_two_hop,
    "demand_weighted": heuristic_demand_weighted,
    "greedy_spatial": heuristic_greedy_spatial,
    "greedy_temporal": heuristic_greedy_temporal,
}


def compare_heuristics(
    problem: ReallocationProblem, names=tuple(HEURISTICS)
) -> tuple[pd.DataFrame, dict[str, ReallocationPlan]]:
    """Run heuristics on one problem and tabulate totals against baseline.

    ``predicted_total`` applies each plan jointly (so crowding shows up
    with its sign); ``additive_total`` is the one-at-a-time objective the
    non-greedy heuristics maximize, under which the two-hop plan can never
    trail the one-hop plan.
    """
    plans: dict[str, ReallocationPlan] = {}
    rows = [
        {
            "heuristic": "baseline",
            "predicted_total": problem.baseline_total,
            "additive_total": problem.baseline_total,
            "delta_vs_baseline": 0.0,
            "n_moved": 0,
        }
    ]
    for name in names:
        plan = HEURISTICS[name](problem)
        plans[name] = plan
        rows.append(
            {
                "heuristic": name,
                "predicted_total": plan.predicted_total,
                "additive_total": plan.additive_total,
                "delta_vs_baseline": plan.predicted_total - plan.baseline_total,
                "n_moved": plan.n_moved,
            }
        )
    return pd.DataFrame(rows), plans
