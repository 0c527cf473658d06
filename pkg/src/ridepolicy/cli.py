"""Pipeline orchestration: simulate, panelize, estimate, and report.

Each subcommand reads the artifacts earlier stages wrote into the output
directory and emits deterministic CSVs of its own, so a full run is
reproducible byte for byte from (config, seed). Missing inputs name the
subcommand that produces them; any integrity failure exits nonzero.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import causal, ineq, matchfn, realloc
from . import panel as panelmod
from .geo import ConvexPolygon, HexGrid
from .markets import AreaPartition
from .report import build_report
from .simkit import io as sim_io
from .simkit.config import SimConfig
from .simkit.generate import generate_market, generate_two_year

MODELS = ("1", "2", "3", "4", "all")

# artifact file -> subcommand that writes it (for missing-input messages)
PRODUCER = {
    "trips.csv": "simulate",
    "demand.csv": "simulate",
    "truth.json": "simulate",
    "trips_prior.csv": "simulate --model 3",
    "demand_prior.csv": "simulate --model 3",
    "trips_treatyear.csv": "simulate --model 3",
    "demand_treatyear.csv": "simulate --model 3",
    "panel.csv": "panel",
    "panel_extras.csv": "panel",
    "cohorts.csv": "panel",
    "zones.csv": "panel",
    "panel_prior.csv": "panel (after simulate --model 3)",
    "panel_prior_extras.csv": "panel (after simulate --model 3)",
    "panel_treatyear.csv": "panel (after simulate --model 3)",
    "panel_treatyear_extras.csv": "panel (after simulate --model 3)",
    "zones_prior.csv": "panel (after simulate --model 3)",
    "zones_treatyear.csv": "panel (after simulate --model 3)",
    "production_params.csv": "production",
    "aggregate_model1.csv": "estimate",
}


@dataclass
class RunConfig:
    """Effective run settings from config file plus command-line flags."""

    seed: int
    out_dir: Path
    threads: int = 1
    model: str = "1"
    sim: SimConfig = None
    # estimator
    anticipation: int = 0
    n_boot: int = 49
    weighting: str = "ipw"
    trim_lo: float = 0.01
    trim_hi: float = 0.99
    outcome: str = "num_hour"
    # panels
    zone_area_km2: float = 36.0
    high_demand_rule: str = "decile"
    # sample restrictions
    hull_buffer_km: float = 50.0
    border_band_km: float = 10.0
    match_threshold: float = 0.5
    styles_k: int = 4
    # counterfactual
    cf_week: int = -1
    heuristics: tuple = tuple(realloc.HEURISTICS)
    min_key_sessions: int = 5
    # placebo
    placebo_seeds: int = 5

    def effective(self) -> dict:
        out = {
            "run.seed": self.seed,
            "run.out": str(self.out_dir),
            "run.threads": self.threads,
            "run.model": self.model,
            "estimator.anticipation": self.anticipation,
            "estimator.n_boot": self.n_boot,
            "estimator.weighting": self.weighting,
            "estimator.trim_lo": self.trim_lo,
            "estimator.trim_hi": self.trim_hi,
            "estimator.outcome": self.outcome,
            "panel.zone_area_km2": self.zone_area_km2,
            "panel.high_demand_rule": self.high_demand_rule,
            "samples.hull_buffer_km": self.hull_buffer_km,
            "samples.border_band_km": self.border_band_km,
            "samples.match_threshold": self.match_threshold,
            "samples.styles_k": self.styles_k,
            "counterfactual.week": self.cf_week,
            "counterfactual.heuristics": ",".join(self.heuristics),
            "counterfactual.min_key_sessions": self.min_key_sessions,
            "placebo.n_seeds": self.placebo_seeds,
        }
        for f in dataclasses.fields(SimConfig):
            if f.type in ("int", "float", "str", "bool"):
                out[f"sim.{f.name}"] = getattr(self.sim, f.name)
        return out


def _coerce(kind: str, raw: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw


def load_config(path: str | None, seed, threads, out, model) -> RunConfig:
    """Merge config file, flags, and environment into one RunConfig.

    Precedence per setting: ``RIDEPOLICY_OUT`` (output dir only), then the
    command-line flag, then the config file, then the built-in default.
    """
    ini = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise click.ClickException(f"config file not found: {path}")
        ini.read(path)

    def get(section, key, default=None):
        return ini.get(section, key, fallback=default)

    if seed is None:
        raw = get("run", "seed")
        if raw is None:
            raise click.ClickException("a seed is required (--seed or [run] seed in the config)")
        seed = int(raw)
    out = os.environ.get("RIDEPOLICY_OUT") or out or get("run", "out") or "out"
    threads = threads if threads is not None else int(get("run", "threads", "1"))
    model = model or get("run", "model") or "1"
    if model not in MODELS:
        raise click.ClickException(f"unknown model {model!r}; choose from {MODELS}")

    sim_kwargs = {"seed": int(seed)}
    if ini.has_section("sim"):
        valid = {f.name: f.type for f in dataclasses.fields(SimConfig)}
        for key, raw in ini.items("sim"):
            if key == "seed":
                continue
            if key not in valid or valid[key] not in ("int", "float", "str", "bool"):
                raise click.ClickException(f"unknown [sim] setting {key!r}")
            sim_kwargs[key] = _coerce(valid[key], raw)
    run = RunConfig(seed=int(seed), out_dir=Path(out), threads=int(threads), model=str(model), sim=SimConfig(**sim_kwargs))

    scalars = {
        ("estimator", "anticipation"): "anticipation",
        ("estimator", "n_boot"): "n_boot",
        ("estimator", "weighting"): "weighting",
        ("estimator", "trim_lo"): "trim_lo",
        ("estimator", "trim_hi"): "trim_hi",
        ("estimator", "outcome"): "outcome",
        ("panel", "zone_area_km2"): "zone_area_km2",
        ("panel", "high_demand_rule"): "high_demand_rule",
        ("samples", "hull_buffer_km"): "hull_buffer_km",
        ("samples", "border_band_km"): "border_band_km",
        ("samples", "match_threshold"): "match_threshold",
        ("samples", "styles_k"): "styles_k",
        ("counterfactual", "week"): "cf_week",
        ("counterfactual", "min_key_sessions"): "min_key_sessions",
        ("placebo", "n_seeds"): "placebo_seeds",
    }
    for (section, key), attr in scalars.items():
        raw = get(section, key)
        if raw is not None:
            kind = type(getattr(run, attr)).__name__
            setattr(run, attr, _coerce(kind, raw))
    raw = get("counterfactual", "heuristics")
    if raw is not None:
        names = tuple(s.strip() for s in raw.split(",") if s.strip())
        bad = [n for n in names if n not in realloc.HEURISTICS]
        if bad:
            raise click.ClickException(f"unknown heuristics in config: {bad}")
        run.heuristics = names
    return run


def _require(run: RunConfig, *names: str) -> list[Path]:
    paths = []
    for name in names:
        p = run.out_dir / name
        if not p.exists():
            producer = PRODUCER.get(name, "?")
            raise click.ClickException(
                f"missing artifact {name} in {run.out_dir} — run `ridepolicy {producer}` first"
            )
        paths.append(p)
    return paths


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def _truth(run: RunConfig):
    (p,) = _require(run, "truth.json")
    return sim_io.read_truth_json(p)


def _major_polygon(truth) -> ConvexPolygon:
    return truth.major_polygon()


def _partition(truth) -> AreaPartition:
    polys = [truth.polygons["major"], *truth.polygons["adjacent"]]
    return AreaPartition.from_polygons([ConvexPolygon(np.asarray(p, dtype=float)) for p in polys])


@dataclass
class _Horizon:
    """Panel-building view of the run recorded in the truth sidecar."""

    anchor: str
    n_weeks_pre: int
    n_weeks_post: int
    hex_cell_area_km2: float


def _horizon(truth, anchor=None) -> _Horizon:
    return _Horizon(
        anchor=anchor if anchor is not None else truth.anchor,
        n_weeks_pre=truth.n_weeks_pre,
        n_weeks_post=truth.n_weeks_post,
        hex_cell_area_km2=truth.hex_cell_area_km2,
    )


EXTRA_COLUMNS = [
    "driver_id",
    "week",
    "cohort",
    "earnings_week",
    "net_passenger_payments",
    "num_cancel",
    "hourly_earning_var",
]


def _write_panel_pair(panel: pd.DataFrame, out: Path, stem: str) -> None:
    panelmod.write_panel_csv(panel, out / f"{stem}.csv")
    extras = panel[EXTRA_COLUMNS].copy()
    extras["cohort"] = extras["cohort"].astype("Int64")
    _write_csv(extras, out / f"{stem}_extras.csv")


def _read_panel_pair(run: RunConfig, stem: str) -> pd.DataFrame:
    core, extra = _require(run, f"{stem}.csv", f"{stem}_extras.csv")
    panel = panelmod.read_panel_csv(core)
    extras = pd.read_csv(extra)
    merged = panel.merge(
        extras, on=["driver_id", "week"], how="left", validate="one_to_one"
    )
    merged["cohort"] = merged["cohort"].astype("Int64")
    return merged


def _build_panels(trips, demand, truth, run, anchor=None, cohorts=None):
    hz = _horizon(truth, anchor)
    major = _major_polygon(truth)
    if cohorts is None:
        cohorts = panelmod.assign_cohorts(
            trips, major, pd.Timestamp(hz.anchor), horizon=hz.n_weeks_post
        )
    panel = panelmod.build_driver_week_panel(trips, cohorts, hz, demand)
    zones = panelmod.build_zone_week_demand(
        demand,
        hz.hex_cell_area_km2,
        run.zone_area_km2,
        major,
        truth.price_index,
        rule=run.high_demand_rule,
    )
    return panel, zones, cohorts


# ---------------------------------------------------------------------------
# command group


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="INI config file.")
@click.option("--seed", type=int, default=None, help="Random seed (required here or in the config).")
@click.option("--threads", type=int, default=None, help="Worker bound for parallel sections.")
@click.option("--out", type=click.Path(), default=None, help="Output directory (RIDEPOLICY_OUT overrides).")
@click.option("--model", type=click.Choice(MODELS), default=None, help="Estimation design selector.")
@click.pass_context
def main(ctx, config_path, seed, threads, out, model):
    """Synthetic ride-market pipeline: simulate, panelize, estimate, report."""
    ctx.obj = load_config(config_path, seed, threads, out, model)
    ctx.obj.out_dir.mkdir(parents=True, exist_ok=True)


@main.command()
@click.pass_obj
def simulate(run: RunConfig):
    """Generate trip and demand logs plus the ground-truth sidecar."""
    t0 = time.time()
    trips, demand, truth = generate_market(run.sim)

    done = trips.loc[~trips["cancelled"]]
    gap = (
        done["rider_payment"]
        - done["driver_earnings"]
        - done["platform_take"]
        - done["external_fees"]
    )
    if float(gap.abs().max() or 0.0) > 1e-6:
        raise click.ClickException("payment identity violated in generated trips")
    if (demand["requests"] > demand["intents"]).any() or (
        demand["completes"] > demand["requests"]
    ).any():
        raise click.ClickException("demand funnel violated in generated log")

    sim_io.write_trips_csv(trips, run.out_dir / "trips.csv")
    sim_io.write_demand_csv(demand, run.out_dir / "demand.csv")
    sim_io.write_truth_json(truth, run.out_dir / "truth.json")
    click.echo(
        f"simulate: {len(trips)} trips, {len(demand)} demand rows "
        f"({time.time() - t0:.1f}s) -> {run.out_dir}"
    )

    if run.model in ("3", "4", "all"):
        two = generate_two_year(run.sim)
        sim_io.write_trips_csv(two.trips_prior, run.out_dir / "trips_prior.csv")
        sim_io.write_demand_csv(two.demand_prior, run.out_dir / "demand_prior.csv")
        sim_io.write_trips_csv(two.trips_treatment, run.out_dir / "trips_treatyear.csv")
        sim_io.write_demand_csv(two.demand_treatment, run.out_dir / "demand_treatyear.csv")
        click.echo(f"simulate: wrote aligned two-year logs for model {run.model}")


@main.command("panel")
@click.pass_obj
def panel_cmd(run: RunConfig):
    """Build driver-week and zone-week panels from the logs."""
    tpath, dpath = _require(run, "trips.csv", "demand.csv")
    truth = _truth(run)
    trips = sim_io.read_trips_csv(tpath)
    demand = sim_io.read_demand_csv(dpath)

    panel, zones, cohorts = _build_panels(trips, demand, truth, run)
    _write_panel_pair(panel, run.out_dir, "panel")
    ch = cohorts.copy()
    ch["cohort"] = ch["cohort"].astype("Int64")
    _write_csv(ch, run.out_dir / "cohorts.csv")
    panelmod.write_zone_csv(zones, run.out_dir / "zones.csv")
    click.echo(
        f"panel: {panel['driver_id'].nunique()} drivers x {panel['week'].nunique()} weeks; "
        f"{zones['zone_id'].nunique()} zones"
    )

    if (run.out_dir / "trips_treatyear.csv").exists():
        t_t = sim_io.read_trips_csv(run.out_dir / "trips_treatyear.csv")
        d_t = sim_io.read_demand_csv(run.out_dir / "demand_treatyear.csv")
        t_p = sim_io.read_trips_csv(run.out_dir / "trips_prior.csv")
        d_p = sim_io.read_demand_csv(run.out_dir / "demand_prior.csv")
        panel_t, zones_t, cohorts_t = _build_panels(t_t, d_t, truth, run)
        # prior year keeps the treatment-year assignment labels
        prior_anchor = (pd.Timestamp(truth.anchor) - pd.Timedelta(days=364)).strftime("%Y-%m-%d")
        panel_p, zones_p, _ = _build_panels(
            t_p, d_p, truth, run, anchor=prior_anchor, cohorts=cohorts_t
        )
        _write_panel_pair(panel_t, run.out_dir, "panel_treatyear")
        _write_panel_pair(panel_p, run.out_dir, "panel_prior")
        panelmod.write_zone_csv(zones_t, run.out_dir / "zones_treatyear.csv")
        panelmod.write_zone_csv(zones_p, run.out_dir / "zones_prior.csv")
        click.echo("panel: wrote aligned two-year panels (labels retained from treatment year)")


def _overall_row(panel: pd.DataFrame, run: RunConfig, label: str, n_boot=None) -> dict:
    res = causal.estimate_group_time(
        panel,
        outcome=run.outcome,
        anticipation=run.anticipation,
        weighting=run.weighting,
        n_boot=run.n_boot if n_boot is None else n_boot,
        seed=run.seed,
        score_clip=(run.trim_lo, run.trim_hi),
    )
    overall = causal.aggregate_overall(res)
    return {
        "sample": label,
        "n_drivers": int(panel["driver_id"].nunique()),
        "psi": overall.value,
        "std_error": overall.std_error,
        "pct_effect": causal.pct_effect(overall.value),
        "_result": res,
    }


@main.command()
@click.pass_obj
def estimate(run: RunConfig):
    """Treatment-effect estimates for the selected identification designs."""
    truth = _truth(run)
    panel = _read_panel_pair(run, "panel")
    (tpath,) = _require(run, "trips.csv")
    trips = sim_io.read_trips_csv(tpath)
    models = ("1", "2", "3", "4") if run.model == "all" else (run.model,)
    eff = truth.effects
    injected = float(eff.get(f"log_{run.outcome}", eff.get(run.outcome, 0.0)))

    if "1" in models:
        _estimate_model1(run, truth, panel, trips, injected)
    if "2" in models:
        _estimate_model2(run, truth, panel, trips)
    if "3" in models:
        _estimate_model3(run, injected)
    if "4" in models:
        _estimate_model4(run, truth)


def _estimate_model1(run, truth, panel, trips, injected):
    major = _major_polygon(truth)
    keep = causal.hull_restricted_ids(trips, major, run.hull_buffer_km)
    sub = panel.loc[panel["driver_id"].isin(keep)]
    row = _overall_row(sub, run, "hull_restricted")
    res = row.pop("_result")
    _write_csv(res.frame(), run.out_dir / "attgt_model1.csv")

    agg = pd.DataFrame(
        [
            {
                "outcome": run.outcome,
                "sample": row["sample"],
                "n_drivers": row["n_drivers"],
                "psi": row["psi"],
                "std_error": row["std_error"],
                "pct_effect": row["pct_effect"],
                "injected": injected,
                "injected_pct": causal.pct_effect(injected),
            }
        ]
    )
    _write_csv(agg, run.out_dir / "aggregate_model1.csv")

    dyn = causal.aggregate_dynamic(res)
    _write_csv(
        pd.DataFrame(
            [
                {"exposure": d.exposure, "theta": d.value, "std_error": d.std_error}
                for d in dyn
            ]
        ),
        run.out_dir / "dynamic_model1.csv",
    )

    rows = []
    groups: list[tuple[str, str, set]] = []
    for name, ids in causal.split_hh_lh(panel, run.sim.guarantee_share).items():
        groups.append(("earnings_share", name, ids))
    for name, ids in causal.split_uncertainty(panel).items():
        groups.append(("uncertainty", name, ids))
    feats = causal.driver_style_features(trips)
    km = causal.kmeans(feats.drop(columns="driver_id"), k=run.styles_k, seed=run.seed)
    for c in range(run.styles_k):
        ids = set(feats.loc[km.labels == c, "driver_id"].tolist())
        groups.append(("style", f"cluster_{c}", ids))
    for split, name, ids in groups:
        sub = panel.loc[panel["driver_id"].isin(ids)]
        if sub.empty or sub["cohort"].notna().sum() == 0:
            continue
        try:
            r = _overall_row(sub, run, name)
        except (ValueError, KeyError, RuntimeError) as err:
            rows.append({"split": split, "group": name, "n_drivers": int(sub["driver_id"].nunique()),
                         "psi": np.nan, "std_error": np.nan, "pct_effect": np.nan, "note": str(err)[:60]})
            continue
        r.pop("_result")
        rows.append({"split": split, "group": name, "n_drivers": r["n_drivers"],
                     "psi": r["psi"], "std_error": r["std_error"], "pct_effect": r["pct_effect"], "note": ""})
    _write_csv(pd.DataFrame(rows), run.out_dir / "splits_model1.csv")
    click.echo(
        f"estimate[1]: psi={agg['psi'].iloc[0]:.4f} ({agg['pct_effect'].iloc[0]:.1f}%) "
        f"on {row['n_drivers']} hull-restricted drivers; injected {injected:.4f}"
    )


def _estimate_model2(run, truth, panel, trips):
    major = _major_polygon(truth)
    anchor = pd.Timestamp(truth.anchor)
    week = panelmod.week_index(trips["accept_ts"], anchor, truth.n_weeks_pre, truth.n_weeks_post)
    bs = causal.border_sample(trips, major, run.border_band_km, week=week)
    pre = bs.loc[bs["week"] < 0]
    label = pre.groupby("driver_id")["group"].agg(lambda g: "treated" if (g == "treated").any() else "control")
    treated_ids = set(label.index[label == "treated"])
    control_ids = set(label.index[label == "control"])
    sub = panel.loc[panel["driver_id"].isin(treated_ids | control_ids)].copy()
    sub = sub.loc[sub["num_hour"] > 0]
    if sub.empty or not treated_ids or not control_ids:
        raise click.ClickException("border sample is empty; widen the band or the market layout")
    treated = sub["driver_id"].isin(treated_ids).to_numpy(dtype=float)
    post = (sub["week"] >= 0).to_numpy(dtype=float)
    y = np.log(sub["num_hour"].to_numpy(dtype=float))
    X = np.column_stack([treated * post])
    res = causal.within_ols(
        y,
        X,
        ["treated_post"],
        sub["driver_id"].to_numpy(),
        sub["week"].to_numpy(),
        cluster=sub["driver_id"].to_numpy(),
    )
    out = pd.DataFrame(
        [
            {
                "coef": res.coef["treated_post"],
                "std_error": res.std_error["treated_post"],
                "pct_effect": causal.pct_effect(res.coef["treated_post"]),
                "n_treated_drivers": len(treated_ids),
                "n_control_drivers": len(control_ids),
                "n_obs": res.n_obs,
            }
        ]
    )
    _write_csv(out, run.out_dir / "model2_border.csv")
    click.echo(f"estimate[2]: border coef={out['coef'].iloc[0]:.4f} ({len(treated_ids)}T/{len(control_ids)}C)")


def _pre_covariate_means(panel: pd.DataFrame) -> pd.DataFrame:
    pre = panel.loc[panel["week"] < 0]
    means = pre.groupby("driver_id")[causal.samples.MATCH_COVARIATES].mean().reset_index()
    return means


def _estimate_model3(run, injected):
    panel_t = _read_panel_pair(run, "panel_treatyear")
    panel_p = _read_panel_pair(run, "panel_prior")
    match = causal.match_across_years(
        _pre_covariate_means(panel_t), _pre_covariate_means(panel_p), threshold=run.match_threshold
    )
    kept = set(match.driver_ids.tolist())
    rows = []
    for year, pan in (("prior", panel_p), ("treatment", panel_t)):
        sub = pan.loc[pan["driver_id"].isin(kept)]
        r = _overall_row(sub, run, year)
        r.pop("_result")
        rows.append(
            {
                "year": year,
                "n_matched": int(sub["driver_id"].nunique()),
                "psi": r["psi"],
                "std_error": r["std_error"],
                "pct_effect": r["pct_effect"],
                "injected": injected if year == "treatment" else 0.0,
                "max_smd": match.max_smd,
            }
        )
    _write_csv(pd.DataFrame(rows), run.out_dir / "model3_crossyear.csv")
    click.echo(
        "estimate[3]: prior psi=%.4f, treatment psi=%.4f (matched %d, max SMD %.3f)"
        % (rows[0]["psi"], rows[1]["psi"], rows[1]["n_matched"], match.max_smd)
    )


def _year_exposure(run, trips, zones, truth, anchor) -> pd.DataFrame:
    coarse = HexGrid(run.zone_area_km2)
    done = trips.loc[~trips["cancelled"].astype(bool)].copy()
    zq, zr = coarse.hex_of(done["o_x_km"].to_numpy(dtype=float), done["o_y_km"].to_numpy(dtype=float))
    done["zone_id"] = [f"{a}:{b}" for a, b in zip(zq.tolist(), zr.tolist())]
    done["week"] = panelmod.week_index(
        done["accept_ts"], pd.Timestamp(anchor), truth.n_weeks_pre, truth.n_weeks_post
    )
    shares, _ = causal.driver_zone_shares(
        done[["driver_id", "week", "zone_id"]],
        pre_weeks=set(range(-truth.n_weeks_pre, 0)),
    )
    # clip to zones with a demand series, renormalizing per driver
    known = set(zones["zone_id"].unique())
    shares = shares.loc[shares["zone_id"].isin(known)]
    tot = shares.groupby("driver_id")["share"].transform("sum")
    shares = shares.loc[tot > 0].assign(share=shares["share"] / tot)
    return causal.exposure_weighted_demand(shares, zones)


def _estimate_model4(run, truth):
    panel_t = _read_panel_pair(run, "panel_treatyear")
    panel_p = _read_panel_pair(run, "panel_prior")
    zones_t = pd.read_csv(_require(run, "zones_treatyear.csv")[0])
    zones_p = pd.read_csv(_require(run, "zones_prior.csv")[0])
    trips_t = sim_io.read_trips_csv(_require(run, "trips_treatyear.csv")[0])
    trips_p = sim_io.read_trips_csv(_require(run, "trips_prior.csv")[0])

    treated_ids = set(panel_t.loc[panel_t["cohort"].notna(), "driver_id"].unique().tolist())
    prior_anchor = pd.Timestamp(truth.anchor) - pd.Timedelta(days=364)
    d_t = _year_exposure(run, trips_t, zones_t, truth, truth.anchor)
    d_p = _year_exposure(run, trips_p, zones_p, truth, prior_anchor)

    frames = []
    for year, pan, d in ((0, panel_p, d_p), (1, panel_t, d_t)):
        df = pan[["driver_id", "week", run.outcome]].copy()
        df = df.merge(d, on=["driver_id", "week"], how="left")
        df["d"] = df["d"].fillna(0.0)
        df["week_of_year"] = df["week"]
        df["treatment_year"] = year
        df["treated"] = df["driver_id"].isin(treated_ids).astype(int)
        frames.append(df)
    long = pd.concat(frames, ignore_index=True)
    res = causal.twfe_did(long, outcome=run.outcome, log=True, demand_control="d")
    out = pd.DataFrame(
        [
            {
                "coef": res.estimate,
                "std_error": res.target_se,
                "pct_effect": causal.pct_effect(res.estimate),
                "n_obs": res.n_obs,
                "n_clusters": res.n_clusters,
                "n_log_excluded": res.n_excluded,
            }
        ]
    )
    _write_csv(out, run.out_dir / "model4_twfe.csv")
    click.echo(f"estimate[4]: treated x treatment-year coef={res.estimate:.4f} (se {res.target_se:.4f})")


@main.command()
@click.pass_obj
def bacon(run: RunConfig):
    """Decompose the two-way fixed-effects coefficient into 2x2 contrasts."""
    panel = _read_panel_pair(run, "panel")
    dec = causal.bacon_decompose(panel, outcome=run.outcome, treatment="enter_treatment")
    comp = dec.frame()
    _write_csv(comp, run.out_dir / "bacon.csv")
    weights = (
        comp.groupby("category", sort=True)
        .agg(weight=("weight", "sum"), mean_estimate=("estimate", "mean"), n=("weight", "size"))
        .reset_index()
    )
    _write_csv(weights, run.out_dir / "bacon_weights.csv")
    gap = abs(dec.weighted_sum() - dec.twfe_estimate)
    summary = pd.DataFrame(
        [
            {
                "twfe_estimate": dec.twfe_estimate,
                "weighted_sum": dec.weighted_sum(),
                "abs_gap": gap,
                "weight_total": comp["weight"].sum(),
                "n_components": len(comp),
            }
        ]
    )
    _write_csv(summary, run.out_dir / "bacon_summary.csv")
    if gap > 1e-8:
        raise click.ClickException(f"decomposition does not reproduce the TWFE coefficient (gap {gap:.2e})")
    click.echo(f"bacon: twfe={dec.twfe_estimate:.5f} recovered by {len(comp)} components (gap {gap:.1e})")


@main.command()
@click.pass_obj
def placebo(run: RunConfig):
    """Zero-effect and prior-year-label placebo estimates."""
    rows = []
    for i in range(run.placebo_seeds):
        cfg = replace(run.sim, seed=run.seed + i)
        trips, demand, truth = generate_market(cfg, zero_effects=True)
        panel, _, _ = _build_panels(trips, demand, truth, run)
        res = causal.estimate_group_time(
            panel,
            outcome=run.outcome,
            anticipation=run.anticipation,
            weighting=run.weighting,
            n_boot=0,
            seed=run.seed,
            score_clip=(run.trim_lo, run.trim_hi),
        )
        overall = causal.aggregate_overall(res)
        rows.append({"seed": run.seed + i, "psi": overall.value})
    zero = pd.DataFrame(rows)
    _write_csv(zero, run.out_dir / "placebo_zero.csv")
    click.echo(f"placebo: mean |psi| = {zero['psi'].abs().mean():.4f} over {len(zero)} zero-effect seeds")

    if (run.out_dir / "panel_prior.csv").exists():
        panel_p = _read_panel_pair(run, "panel_prior")
        panel_t = _read_panel_pair(run, "panel_treatyear")
        out = []
        for year, pan in (("prior", panel_p), ("treatment", panel_t)):
            r = _overall_row(pan, run, year)
            out.append({"year": year, "psi": r["psi"], "std_error": r["std_error"]})
        _write_csv(pd.DataFrame(out), run.out_dir / "placebo_prior_year.csv")
        click.echo(
            "placebo: prior-year psi=%.4f vs treatment-year psi=%.4f" % (out[0]["psi"], out[1]["psi"])
        )
    else:
        click.echo("placebo: two-year panels absent — run `ridepolicy --model 3 simulate` then `panel` to add the prior-year design")


@main.command()
@click.pass_obj
def production(run: RunConfig):
    """Fit hourly ride-production functions for all 525 markets."""
    tpath, dpath = _require(run, "trips.csv", "demand.csv")
    truth = _truth(run)
    trips = sim_io.read_trips_csv(tpath)
    demand = sim_io.read_demand_csv(dpath)
    area = truth.production_hex_area_km2
    part = _partition(truth)
    supply = matchfn.supply_accounting(trips, area, truth.anchor)
    coarse_demand = matchfn.regrid_demand(demand, truth.hex_cell_area_km2, area)
    obs = matchfn.build_market_observations(supply, coarse_demand, part, area)
    params = matchfn.fit_all_markets(obs, threads=run.threads)
    if len(params) != 525:
        raise click.ClickException(f"expected 525 market rows, got {len(params)}")
    _write_csv(params, run.out_dir / "production_params.csv")
    _write_csv(matchfn.elasticity_histogram(params), run.out_dir / "elasticity_hist.csv")
    fit = params.loc[params["fitted"]]
    click.echo(
        f"production: fitted {len(fit)}/525 markets; mean alpha {fit['alpha'].mean():.3f}, "
        f"beta {fit['beta'].mean():.3f}"
    )


@main.command()
@click.pass_obj
def counterfactual(run: RunConfig):
    """Evaluate supply-reallocation heuristics for one evaluation week."""
    tpath, dpath, ppath = _require(run, "trips.csv", "demand.csv", "production_params.csv")
    truth = _truth(run)
    trips = sim_io.read_trips_csv(tpath)
    demand = sim_io.read_demand_csv(dpath)
    params = pd.read_csv(ppath)
    area = truth.production_hex_area_km2
    part = _partition(truth)
    anchor = pd.Timestamp(truth.anchor)

    w = run.cf_week
    if not (-truth.n_weeks_pre <= w <= truth.n_weeks_post):
        raise click.ClickException(
            f"counterfactual week {w} outside the simulated horizon "
            f"[{-truth.n_weeks_pre}, {truth.n_weeks_post}]"
        )
    pre_trips = trips.loc[trips["accept_ts"] < anchor]
    if pre_trips.empty:
        raise click.ClickException("no pre-launch trips to train outcome distributions on")
    sessions_all, fp_all = realloc.extract_sessions(pre_trips, area, truth.anchor)
    dist = realloc.build_outcome_distributions(
        sessions_all, fp_all, part, area, min_sessions=run.min_key_sessions
    )

    lo, hi = anchor + pd.Timedelta(weeks=w), anchor + pd.Timedelta(weeks=w + 1)
    week_trips = trips.loc[(trips["accept_ts"] >= lo) & (trips["accept_ts"] < hi)]
    if week_trips.empty:
        raise click.ClickException(f"no trips in evaluation week {w}")
    sessions, _ = realloc.extract_sessions(week_trips, area, truth.anchor)
    dem_w = demand.loc[
        (demand["hour_index"] >= w * 168) & (demand["hour_index"] < (w + 1) * 168)
    ]
    cells = realloc.build_demand_cells(matchfn.regrid_demand(dem_w, truth.hex_cell_area_km2, area))

    problem = realloc.ReallocationProblem(sessions, dist, cells, params, part, area)
    table, plans = realloc.compare_heuristics(problem, names=run.heuristics)
    for name, plan in plans.items():
        if len(plan.assignments) != len(sessions) or not np.isclose(
            plan.assignments["hours"].sum(), sessions["hours"].sum()
        ):
            raise click.ClickException(f"plan {name} violates session/hour conservation")
        if name.startswith("greedy") and plan.predicted_total < plan.baseline_total - 1e-9:
            raise click.ClickException(f"greedy plan {name} predicts fewer rides than baseline")
        _write_csv(plan.frame(), run.out_dir / f"plan_{name}.csv")
    if {"one_hop", "two_hop"} <= set(plans):
        if plans["two_hop"].additive_total < plans["one_hop"].additive_total - 1e-9:
            raise click.ClickException("two-hop plan trails one-hop despite nested candidates")
    _write_csv(table, run.out_dir / "counterfactual.csv")
    best = table.loc[table["heuristic"] != "baseline"].sort_values("predicted_total").iloc[-1]
    click.echo(
        f"counterfactual: week {w}, {len(sessions)} sessions; best {best['heuristic']} "
        f"+{best['predicted_total'] - problem.baseline_total:.0f} rides vs baseline"
    )


@main.command()
@click.pass_obj
def gini(run: RunConfig):
    """Weekly hexagon-level supply concentration."""
    (tpath,) = _require(run, "trips.csv")
    truth = _truth(run)
    trips = sim_io.read_trips_csv(tpath)
    area = truth.production_hex_area_km2
    supply = matchfn.supply_accounting(trips, area, truth.anchor)
    supply = supply.assign(
        week=np.floor_divide(supply["hour_index"].to_numpy(), 168),
        total=supply[["idle_h", "enroute_h", "transporting_h"]].sum(axis=1),
    )
    hex_week = (
        supply.groupby(["hex_q", "hex_r", "week"], sort=True)["total"].sum().reset_index()
    )
    # sessions can spill a few terminal hours past the horizon; drop that sliver
    hex_week = hex_week.loc[
        (hex_week["week"] >= -truth.n_weeks_pre) & (hex_week["week"] <= truth.n_weeks_post)
    ]
    hexes = hex_week[["hex_q", "hex_r"]].drop_duplicates().reset_index(drop=True)

    def series_for(frame) -> np.ndarray:
        m = hexes.merge(frame, on=["hex_q", "hex_r"], how="left")
        return m["total"].fillna(0.0).to_numpy()

    rows = []
    lorenz_rows = []
    pre = hex_week.loc[hex_week["week"] < 0]
    n_pre = truth.n_weeks_pre
    base = pre.groupby(["hex_q", "hex_r"], sort=True)["total"].sum().reset_index()
    base["total"] = base["total"] / max(n_pre, 1)
    vals = series_for(base)
    rows.append({"period": "pre_average", "week": "", "gini": ineq.gini(vals), "n_hexes": len(vals)})
    p, s = ineq.lorenz(vals)
    lorenz_rows.append(pd.DataFrame({"period": "pre_average", "week": "", "p": p, "cum_share": s}))
    for w in sorted(hex_week.loc[hex_week["week"] >= 0, "week"].unique()):
        wk = hex_week.loc[hex_week["week"] == w]
        vals = series_for(wk)
        rows.append({"period": "post", "week": int(w), "gini": ineq.gini(vals), "n_hexes": len(vals)})
        p, s = ineq.lorenz(vals)
        lorenz_rows.append(pd.DataFrame({"period": "post", "week": int(w), "p": p, "cum_share": s}))
    _write_csv(pd.DataFrame(rows), run.out_dir / "gini.csv")
    _write_csv(pd.concat(lorenz_rows, ignore_index=True), run.out_dir / "lorenz.csv")
    g = pd.DataFrame(rows)
    click.echo(
        f"gini: pre {g['gini'].iloc[0]:.4f}; post weekly mean "
        f"{g.loc[g['period'] == 'post', 'gini'].mean():.4f}"
    )


@main.command("report")
@click.pass_obj
def report_cmd(run: RunConfig):
    """Write the consolidated markdown report."""
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    try:
        text = build_report(run.out_dir, run.effective(), generated_line=f"_Generated: {stamp}_")
    except FileNotFoundError as err:
        raise click.ClickException(str(err))
    (run.out_dir / "report.md").write_text(text)
    click.echo(f"report: wrote {run.out_dir / 'report.md'}")


if __name__ == "__main__":
    main()
