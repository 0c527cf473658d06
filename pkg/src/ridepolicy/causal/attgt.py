"""Group-time average treatment effects with staggered adoption.

Treated cohort g is compared against the not-yet-treated pool (cohorts
first treated after week t, never-treated included) on outcome changes from
a base period: g − 1 − anticipation for post cells, t − 1 for pre-trend
cells. Controls are reweighted by propensity odds fitted on pre-launch
covariate levels. Standard errors come from a driver-level bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .propensity import SCORE_CLIP, control_weights, fit_propensity

NEVER = np.iinfo(np.int64).max

# pre-launch covariates used for control reweighting (levels, standardized
# inside the propensity fit)
DEFAULT_COVARIATES = ["num_hour", "num_mile", "num_trip", "num_session", "earnings_week"]


@dataclass
class GroupTimeATT:
    g: int
    t: int
    estimate: float
    std_error: float
    n_treated: int
    n_control: int
    base_period: int


@dataclass
class AggregateEffect:
    kind: str  # "overall" or "dynamic"
    value: float
    std_error: float
    weights: dict
    normalizer: float
    exposure: int | None = None


@dataclass
class PanelArrays:
    """Wide panel: one row per driver, one column per week."""

    driver_ids: np.ndarray
    weeks: np.ndarray
    cohort: np.ndarray  # NEVER for never-treated
    outcome: np.ndarray  # (n, W), NaN where undefined
    covariates: np.ndarray  # (n, C)
    cov_names: list[str]
    n_log_excluded: int = 0

    @property
    def col_of(self) -> dict:
        return {int(w): j for j, w in enumerate(self.weeks)}

    def cohort_sizes(self) -> dict[int, int]:
        gs, counts = np.unique(self.cohort[self.cohort != NEVER], return_counts=True)
        return {int(g): int(c) for g, c in zip(gs, counts)}

    def take(self, rows: np.ndarray) -> "PanelArrays":
        return PanelArrays(
            driver_ids=self.driver_ids[rows],
            weeks=self.weeks,
            cohort=self.cohort[rows],
            outcome=self.outcome[rows],
            covariates=self.covariates[rows],
            cov_names=self.cov_names,
            n_log_excluded=self.n_log_excluded,
        )


def panel_arrays(
    panel: pd.DataFrame,
    outcome: str = "num_hour",
    log: bool = True,
    covariates: list[str] | None = None,
) -> PanelArrays:
    """Pivot a long driver-week panel into aligned arrays.

    With ``log=True`` the outcome is log(x) on strictly positive values;
    zero-activity rows become missing and are counted in ``n_log_excluded``.
    Covariates are means of weekly outcome levels over weeks < -1: the
    week just before launch is excluded so the earliest cohort's base
    period never enters its own adjustment set (conditioning on the
    base draw would tilt reweighted controls and bias the contrast).
    """
    cov_names = list(covariates) if covariates is not None else list(DEFAULT_COVARIATES)
    df = panel
    if "cohort" not in df.columns:
        raise ValueError("panel must carry a 'cohort' column (nullable integer)")
    if (
        "earnings_week" in cov_names
        and "earnings_week" not in df.columns
        and {"hourly_earning", "num_hour"} <= set(df.columns)
    ):
        df = df.copy()
        df["earnings_week"] = df["hourly_earning"] * df["num_hour"]
    if covariates is None:
        cov_names = [c for c in cov_names if c in df.columns]
    else:
        missing = [c for c in cov_names if c not in df.columns]
        if missing:
            raise ValueError(f"panel is missing covariate columns: {missing}")

    drivers = np.sort(df["driver_id"].unique())
    weeks = np.sort(df["week"].unique())
    n, W = len(drivers), len(weeks)
    d_idx = pd.Index(drivers).get_indexer(df["driver_id"])
    w_idx = pd.Index(weeks).get_indexer(df["week"])

    raw = np.full((n, W), np.nan)
    raw[d_idx, w_idx] = df[outcome].to_numpy(dtype=float)
    n_excluded = 0
    if log:
        pos = raw > 0
        n_excluded = int((~pos & np.isfinite(raw)).sum())
        out = np.where(pos, np.log(np.where(pos, raw, 1.0)), np.nan)
    else:
        out = raw

    g_col = df.groupby("driver_id")["cohort"].first().reindex(drivers)
    cohort = np.where(g_col.isna().to_numpy(), NEVER, g_col.fillna(0).to_numpy(dtype=np.int64))

    pre = df.loc[df["week"] < -1]
    X = (
        pre.groupby("driver_id")[cov_names]
        .mean()
        .reindex(drivers)
        .fillna(0.0)
        .to_numpy(dtype=float)
    )
    return PanelArrays(
        driver_ids=drivers,
        weeks=weeks,
        cohort=cohort.astype(np.int64),
        outcome=out,
        covariates=X,
        cov_names=cov_names,
        n_log_excluded=n_excluded,
    )


def _cell_estimate(
    arr: PanelArrays,
    g: int,
    t: int,
    anticipation: int,
    weighting: str,
    score_clip: tuple = SCORE_CLIP,
) -> tuple[float, int, int, int]:
    col = arr.col_of
    post = t >= g - anticipation
    base = g - 1 - anticipation if post else t - 1
    if t not in col or base not in col:
        raise KeyError(f"cell (g={g}, t={t}) needs base week {base} outside the panel")
    yt = arr.outcome[:, col[t]]
    yb = arr.outcome[:, col[base]]
    dy = yt - yb
    ok = np.isfinite(dy)
    tr = (arr.cohort == g) & ok
    ct = (arr.cohort > t + anticipation) & (arr.cohort != g) & ok
    n_t, n_c = int(tr.sum()), int(ct.sum())
    if n_t < 1:
        raise ValueError(f"no treated observations for cohort {g} at week {t}")
    if n_c < 1:
        raise ValueError(f"empty control set at week {t}: all units already treated")
    if weighting == "ipw" and arr.covariates.shape[1] > 0 and n_t + n_c > len(arr.cov_names) + 2:
        rows = tr | ct
        labels = tr[rows].astype(float)
        try:
            model = fit_propensity(
                pd.DataFrame(arr.covariates[rows], columns=arr.cov_names), labels,
                clip=score_clip,
            )
        except ValueError as err:
            # separated cells carry no overlap to reweight; use the raw contrast
            if "separation" not in str(err):
                raise
            est = float(dy[tr].mean() - dy[ct].mean())
        else:
            w = control_weights(model.scores, labels.astype(bool))
            est = float(dy[tr].mean() - np.average(dy[rows][labels == 0], weights=w[labels == 0]))
    elif weighting in ("ipw", "none"):
        est = float(dy[tr].mean() - dy[ct].mean())
    else:
        raise ValueError(f"unknown weighting scheme {weighting!r}")
    return est, n_t, n_c, base


@dataclass
class GroupTimeResult:
    atts: list[GroupTimeATT]
    cohort_sizes: dict[int, int]
    anticipation: int
    n_log_excluded: int
    boot_draws: dict = field(default_factory=dict)  # (g,t) -> np.ndarray of reps

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "g": a.g,
                    "t": a.t,
                    "estimate": a.estimate,
                    "std_error": a.std_error,
                    "n_treated": a.n_treated,
                    "n_control": a.n_control,
                    "base_period": a.base_period,
                }
                for a in self.atts
            ]
        )


def _all_cells(arr: PanelArrays, anticipation: int) -> list[tuple[int, int]]:
    weeks = [int(w) for w in arr.weeks]
    wmin = min(weeks)
    cells = []
    for g in sorted(arr.cohort_sizes()):
        for t in weeks:
            post = t >= g - anticipation
            base = g - 1 - anticipation if post else t - 1
            if base < wmin or base not in arr.col_of or t == base:
                continue
            cells.append((g, t))
    return cells


def estimate_group_time(
    panel: pd.DataFrame | PanelArrays,
    outcome: str = "num_hour",
    log: bool = True,
    anticipation: int = 0,
    weighting: str = "ipw",
    n_boot: int = 199,
    seed: int = 0,
    score_clip: tuple = SCORE_CLIP,
) -> GroupTimeResult:
    """Estimate ATT(g,t) for every supported cell plus bootstrap SEs.

    One driver-level resample per replicate re-estimates all cells, so cell
    SEs and downstream aggregate SEs share replicates.
    """
    arr = panel if isinstance(panel, PanelArrays) else panel_arrays(panel, outcome, log)
    cells = _all_cells(arr, anticipation)
    atts: list[GroupTimeATT] = []
    point: dict[tuple[int, int], tuple[float, int, int, int]] = {}
    for g, t in cells:
        try:
            est, n_t, n_c, base = _cell_estimate(arr, g, t, anticipation, weighting, score_clip)
        except ValueError as err:
            # cells with no usable treated or control rows stay in the frame
            # as NaN and drop out of every aggregation
            if "observations" not in str(err) and "control set" not in str(err):
                raise
            post = t >= g - anticipation
            est, n_t, n_c, base = float("nan"), 0, 0, (g - 1 - anticipation if post else t - 1)
        point[(g, t)] = (est, n_t, n_c, base)

    draws: dict[tuple[int, int], np.ndarray] = {c: np.full(n_boot, np.nan) for c in cells}
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        n = len(arr.driver_ids)
        failed = 0
        for b in range(n_boot):
            rows = rng.integers(0, n, n)
            sub = arr.take(rows)
            for c in cells:
                try:
                    draws[c][b] = _cell_estimate(sub, c[0], c[1], anticipation, weighting, score_clip)[0]
                except (ValueError, KeyError):
                    continue
        supported = [c for c in cells if np.isfinite(point[c][0])]
        for c in supported:
            got = np.isfinite(draws[c]).sum()
            if got < 0.9 * n_boot:
                failed += 1
        if failed > 0.1 * len(supported):
            raise RuntimeError(
                f"bootstrap unstable: {failed} of {len(supported)} cells lost >10% of replicates"
            )

    for g, t in cells:
        est, n_t, n_c, base = point[(g, t)]
        reps = draws[(g, t)]
        good = reps[np.isfinite(reps)]
        se = float(good.std(ddof=1)) if good.size > 1 else float("nan")
        atts.append(
            GroupTimeATT(
                g=g, t=t, estimate=est, std_error=se,
                n_treated=n_t, n_control=n_c, base_period=base,
            )
        )
    return GroupTimeResult(
        atts=atts,
        cohort_sizes=arr.cohort_sizes(),
        anticipation=anticipation,
        n_log_excluded=arr.n_log_excluded,
        boot_draws=draws,
    )


def att_gt(
    panel: pd.DataFrame | PanelArrays,
    g: int,
    t: int,
    outcome: str = "num_hour",
    log: bool = True,
    anticipation: int = 0,
    weighting: str = "ipw",
    n_boot: int = 199,
    seed: int = 0,
) -> GroupTimeATT:
    """Single group-time effect; see ``estimate_group_time`` for the batch path."""
    arr = panel if isinstance(panel, PanelArrays) else panel_arrays(panel, outcome, log)
    est, n_t, n_c, base = _cell_estimate(arr, g, t, anticipation, weighting)
    se = float("nan")
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        n = len(arr.driver_ids)
        reps = np.full(n_boot, np.nan)
        for b in range(n_boot):
            sub = arr.take(rng.integers(0, n, n))
            try:
                reps[b] = _cell_estimate(sub, g, t, anticipation, weighting)[0]
            except (ValueError, KeyError):
                continue
        good = reps[np.isfinite(reps)]
        if good.size < 0.9 * n_boot:
            raise RuntimeError(f"bootstrap unstable for cell (g={g}, t={t})")
        se = float(good.std(ddof=1))
    return GroupTimeATT(g=g, t=t, estimate=est, std_error=se, n_treated=n_t, n_control=n_c, base_period=base)


def _weighted_aggregate(
    pairs: list[tuple[tuple[int, int], float]],
    cohort_sizes: dict[int, int],
    boot_draws: dict | None,
) -> tuple[float, float, dict, float]:
    """Cohort-size weighted mean over cells plus a matching bootstrap SE."""
    omega = np.array([cohort_sizes[g] for (g, _), _ in pairs], dtype=float)
    est = np.array([v for _, v in pairs])
    k = omega.sum()
    weights = omega / k
    value = float(weights @ est)
    se = float("nan")
    if boot_draws:
        mats = np.vstack([boot_draws[c] for c, _ in pairs])
        ok = np.isfinite(mats)
        wcol = weights[:, None] * ok
        denom = wcol.sum(axis=0)
        with np.errstate(invalid="ignore"):
            reps = np.nansum(mats * wcol, axis=0) / denom
        reps = reps[np.isfinite(reps) & (denom > 0.5)]
        if reps.size > 1:
            se = float(reps.std(ddof=1))
    wmap = {c: float(w) for (c, _), w in zip(pairs, weights)}
    return value, se, wmap, float(k)


def aggregate_overall(
    atts: list[GroupTimeATT] | GroupTimeResult,
    cohort_sizes: dict[int, int] | None = None,
) -> AggregateEffect:
    """Overall effect: cohort-size weighted mean of ATT(g,t) over t > g cells."""
    boot = None
    if isinstance(atts, GroupTimeResult):
        cohort_sizes = atts.cohort_sizes
        boot = atts.boot_draws
        atts = atts.atts
    if cohort_sizes is None:
        raise ValueError("cohort sizes are required")
    pairs = [((a.g, a.t), a.estimate) for a in atts if a.t > a.g and np.isfinite(a.estimate)]
    if not pairs:
        raise ValueError("no post-treatment (t > g) cells to aggregate")
    value, se, wmap, k = _weighted_aggregate(pairs, cohort_sizes, boot)
    return AggregateEffect(kind="overall", value=value, std_error=se, weights=wmap, normalizer=k)


def aggregate_dynamic(
    atts: list[GroupTimeATT] | GroupTimeResult,
    cohort_sizes: dict[int, int] | None = None,
) -> list[AggregateEffect]:
    """Exposure-time effects θ(e): cohort-size weighted ATT(g, g+e) per e.

    Exposures without any supported cell are omitted rather than
    extrapolated.
    """
    boot = None
    if isinstance(atts, GroupTimeResult):
        cohort_sizes = atts.cohort_sizes
        boot = atts.boot_draws
        atts = atts.atts
    if cohort_sizes is None:
        raise ValueError("cohort sizes are required")
    by_e: dict[int, list] = {}
    for a in atts:
        if np.isfinite(a.estimate):
            by_e.setdefault(a.t - a.g, []).append(((a.g, a.t), a.estimate))
    out = []
    for e in sorted(by_e):
        value, se, wmap, k = _weighted_aggregate(by_e[e], cohort_sizes, boot)
        out.append(
            AggregateEffect(kind="dynamic", value=value, std_error=se, weights=wmap, normalizer=k, exposure=e)
        )
    return out
