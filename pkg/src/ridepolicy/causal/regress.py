"""Fixed-effects regressions used by the difference-in-difference designs.

``within_ols`` is the shared engine: it absorbs two categorical fixed
effects by alternating demeaning, drops regressors the fixed effects
absorb completely (coefficient pinned to 0 and flagged), refuses genuinely
collinear designs by name, and reports cluster-robust (CR1) standard
errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

ABSORB_TOL = 1e-8
RANK_TOL = 1e-10


@dataclass
class TwfeResult:
    coef: dict[str, float]
    std_error: dict[str, float]
    absorbed: list[str]
    n_obs: int
    n_clusters: int
    target: str | None = None
    n_excluded: int = 0

    @property
    def estimate(self) -> float:
        if self.target is None:
            raise ValueError("result has no designated target coefficient")
        return self.coef[self.target]

    @property
    def target_se(self) -> float:
        if self.target is None:
            raise ValueError("result has no designated target coefficient")
        return self.std_error[self.target]


def _demean_two_way(M: np.ndarray, a: np.ndarray, b: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Residualize columns of M on two categorical factors by alternating projection."""
    out = M.astype(float, copy=True)
    na, nb = a.max() + 1, b.max() + 1
    ca = np.bincount(a, minlength=na).astype(float)
    cb = np.bincount(b, minlength=nb).astype(float)
    scale = max(np.abs(out).max(), 1.0)
    for _ in range(max_iter):
        shift = 0.0
        for j in range(out.shape[1]):
            ma = np.bincount(a, weights=out[:, j], minlength=na) / ca
            out[:, j] -= ma[a]
            mb = np.bincount(b, weights=out[:, j], minlength=nb) / cb
            out[:, j] -= mb[b]
            shift = max(shift, np.abs(ma).max(), np.abs(mb).max())
        if shift < 1e-12 * scale:
            break
    return out


def within_ols(
    y: np.ndarray,
    X: np.ndarray,
    names: list[str],
    fe_a: np.ndarray,
    fe_b: np.ndarray,
    cluster: np.ndarray,
) -> TwfeResult:
    """OLS of y on X with two absorbed fixed effects and CR1 clustered SEs."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if len(names) != k:
        raise ValueError("one name per regressor column required")
    _, a = np.unique(fe_a, return_inverse=True)
    _, b = np.unique(fe_b, return_inverse=True)
    Z = _demean_two_way(np.column_stack([y[:, None], X]), a, b)
    yt, Xt = Z[:, 0], Z[:, 1:]

    col_scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    absorbed = [j for j in range(k) if np.abs(Xt[:, j]).max() <= ABSORB_TOL * col_scale[j]]
    kept = [j for j in range(k) if j not in absorbed]
    coef = {names[j]: 0.0 for j in absorbed}
    se = {names[j]: float("nan") for j in absorbed}

    n_levels = len(np.unique(a)) + len(np.unique(b)) - 1
    _, clu = np.unique(cluster, return_inverse=True)
    G = clu.max() + 1

    if kept:
        Xk = Xt[:, kept]
        norms = np.linalg.norm(Xk, axis=0)
        U, s, Vt = np.linalg.svd(Xk / np.maximum(norms, 1e-300), full_matrices=False)
        if s.size and s[-1] < RANK_TOL * s[0]:
            null = Vt[s < RANK_TOL * s[0]]
            bad = sorted({names[kept[j]] for row in null for j in np.nonzero(np.abs(row) > 0.1)[0]})
            raise ValueError(f"collinear regressors after demeaning: {', '.join(bad)}")
        XtX = Xk.T @ Xk
        beta = np.linalg.solve(XtX, Xk.T @ yt)
        resid = yt - Xk @ beta
        bread = np.linalg.inv(XtX)
        meat = np.zeros((len(kept), len(kept)))
        order = np.argsort(clu, kind="stable")
        bounds = np.searchsorted(clu[order], np.arange(G + 1))
        for gi in range(G):
            rows = order[bounds[gi] : bounds[gi + 1]]
            sg = Xk[rows].T @ resid[rows]
            meat += np.outer(sg, sg)
        K = len(kept) + n_levels
        adj = (G / (G - 1)) * ((n - 1) / max(n - K, 1))
        V = adj * bread @ meat @ bread
        for i, j in enumerate(kept):
            coef[names[j]] = float(beta[i])
            se[names[j]] = float(np.sqrt(max(V[i, i], 0.0)))

    return TwfeResult(
        coef={nm: coef[nm] for nm in names},
        std_error={nm: se[nm] for nm in names},
        absorbed=[names[j] for j in absorbed],
        n_obs=n,
        n_clusters=int(G),
    )


def exposure_weighted_demand(
    shares: pd.DataFrame, zone_week: pd.DataFrame, value: str = "intents"
) -> pd.DataFrame:
    """Demand exposure d for each driver-week: share-weighted zone intents.

    ``shares`` holds (driver_id, zone_id, share) with shares summing to one
    per driver; ``zone_week`` holds (zone_id, week, intents, ...).
    """
    sums = shares.groupby("driver_id")["share"].sum()
    off = sums[(sums - 1.0).abs() > 1e-8]
    if len(off):
        raise ValueError(f"zone shares must sum to 1 per driver; first offender {off.index[0]}")
    wide = zone_week.pivot_table(index="zone_id", columns="week", values=value, fill_value=0.0)
    zi = wide.index.get_indexer(shares["zone_id"])
    if (zi < 0).any():
        missing = shares.loc[zi < 0, "zone_id"].iloc[0]
        raise ValueError(f"zone {missing} has no demand series")
    M = wide.to_numpy(dtype=float)
    drivers, d_inv = np.unique(shares["driver_id"].to_numpy(), return_inverse=True)
    acc = np.zeros((len(drivers), M.shape[1]))
    np.add.at(acc, d_inv, shares["share"].to_numpy()[:, None] * M[zi])
    out = pd.DataFrame(acc, columns=wide.columns)
    out.insert(0, "driver_id", drivers)
    return out.melt(id_vars="driver_id", var_name="week", value_name="d").sort_values(
        ["driver_id", "week"], kind="mergesort"
    ).reset_index(drop=True)


def driver_zone_shares(trip_zones: pd.DataFrame, pre_weeks: set[int] | None = None):
    """Zone visit shares per driver from (driver_id, week, zone_id) trip rows.

    Shares come from pre-launch rows when ``pre_weeks`` is given (else all
    rows). Drivers without pre-launch activity fall back to uniform shares
    over every zone they ever visited and are returned in the flagged set.
    """
    df = trip_zones
    flagged: list = []
    parts = []
    for did, grp in df.groupby("driver_id", sort=True):
        sel = grp if pre_weeks is None else grp[grp["week"].isin(pre_weeks)]
        if len(sel) == 0:
            zones = np.sort(grp["zone_id"].unique())
            parts.append(pd.DataFrame({"driver_id": did, "zone_id": zones, "share": 1.0 / len(zones)}))
            flagged.append(did)
        else:
            counts = sel.groupby("zone_id").size()
            parts.append(
                pd.DataFrame(
                    {"driver_id": did, "zone_id": counts.index, "share": counts.to_numpy() / counts.sum()}
                )
            )
    return pd.concat(parts, ignore_index=True), flagged


def twfe_did(
    panel: pd.DataFrame,
    outcome: str = "num_hour",
    log: bool = True,
    demand_control: str | None = "d",
) -> TwfeResult:
    """Two-year difference-in-difference with driver and week-of-year effects.

    Expects a long panel with columns driver_id, week_of_year, treatment_year
    (0 prior year, 1 treatment year), treated (driver-level group label) and
    the outcome. The headline coefficient is the treated x treatment-year
    interaction; the group dummy itself is absorbed by the driver effects and
    reported as such.
    """
    df = panel
    need = {"driver_id", "week_of_year", "treatment_year", "treated", outcome}
    missing = need - set(df.columns)
    if missing:
        raise ValueError(f"panel is missing columns: {sorted(missing)}")
    n_excluded = 0
    yv = df[outcome].to_numpy(dtype=float)
    if log:
        keep = yv > 0
        n_excluded = int((~keep).sum())
        df = df.loc[keep]
        yv = np.log(yv[keep])
    tr = df["treated"].to_numpy(dtype=float)
    post = df["treatment_year"].to_numpy(dtype=float)
    names = ["treated", "post", "treated_post"]
    cols = [tr, post, tr * post]
    if demand_control is not None:
        names.append(demand_control)
        cols.append(df[demand_control].to_numpy(dtype=float))
    res = within_ols(
        yv,
        np.column_stack(cols),
        names,
        df["driver_id"].to_numpy(),
        df["week_of_year"].to_numpy(),
        df["driver_id"].to_numpy(),
    )
    res.target = "treated_post"
    res.n_excluded = n_excluded
    return res


def demand_spillover_did(
    zone_week: pd.DataFrame, outcome: str = "intents", triple: bool = False
) -> TwfeResult:
    """Zone-week DiD of log(outcome+1) on market exposure after launch.

    The headline regressor is in-market x post-launch (further interacted
    with the high-demand label when ``triple``), controlling for the zone
    price indicator, with zone and week effects absorbed and SEs clustered
    by zone.
    """
    df = zone_week
    counts = df.groupby("zone_id").size()
    if counts.nunique() > 1:
        raise ValueError("zone-week panel must be balanced across zones")
    y = np.log1p(df[outcome].to_numpy(dtype=float))
    market = df["in_major_market"].to_numpy(dtype=float)
    after = (df["week"].to_numpy() >= 0).astype(float)
    inter = market * after
    name = "market_after"
    if triple:
        inter = inter * df["high_demand"].to_numpy(dtype=float)
        name = "market_high_after"
    res = within_ols(
        y,
        np.column_stack([inter, df["price_indicator"].to_numpy(dtype=float)]),
        [name, "price_indicator"],
        df["zone_id"].to_numpy(),
        df["week"].to_numpy(),
        df["zone_id"].to_numpy(),
    )
    res.target = name
    return res
