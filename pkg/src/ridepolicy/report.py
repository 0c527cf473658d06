"""Consolidated markdown report assembled from pipeline artifacts.

Every number in the report is read back from a CSV another subcommand
emitted — nothing is recomputed here — so each figure is traceable to an
artifact on disk. Sections whose artifacts are absent render as pointers
to the subcommand that produces them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__


def render_table(df: pd.DataFrame, floatfmt: str = "{:.4f}") -> str:
    """GitHub-style markdown table with deterministic number formatting."""

    def fmt_col(s: pd.Series) -> list[str]:
        if pd.api.types.is_float_dtype(s):
            return ["" if pd.isna(v) else floatfmt.format(float(v)) for v in s]
        if pd.api.types.is_integer_dtype(s):
            return ["" if pd.isna(v) else str(int(v)) for v in s]
        return ["" if pd.isna(v) else str(v) for v in s]

    cols = [str(c) for c in df.columns]
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for cells in zip(*(fmt_col(df[c]) for c in df.columns)):
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def config_hash(effective: dict) -> str:
    text = "\n".join(f"{k}={effective[k]}" for k in sorted(effective))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _load(out_dir: Path, name: str) -> pd.DataFrame | None:
    path = out_dir / name
    return pd.read_csv(path) if path.exists() else None


def _section(title: str, body: str) -> str:
    return f"## {title}\n\n{body}\n"


def _missing(name: str, producer: str) -> str:
    return f"_{name} not found — run `ridepolicy {producer}` to generate it._"


def build_report(out_dir: Path, effective: dict, generated_line: str) -> str:
    """Assemble report.md text; ``generated_line`` is the only varying line."""
    out_dir = Path(out_dir)
    agg = _load(out_dir, "aggregate_model1.csv")
    if agg is None:
        raise FileNotFoundError(
            "aggregate_model1.csv is missing — run `ridepolicy estimate` first"
        )

    parts = ["# Ride-market policy evaluation report", ""]
    parts.append(generated_line)
    parts.append("")
    parts.append(
        f"Package version {__version__}; numpy {np.__version__}; pandas {pd.__version__}; "
        f"config hash `{config_hash(effective)}`."
    )
    parts.append("")

    cfg_lines = "\n".join(f"    {k} = {effective[k]}" for k in sorted(effective))
    parts.append(_section("Effective configuration", cfg_lines))

    parts.append(_section("Aggregate treatment effect on hours (staggered rollout)", render_table(agg)))

    dyn = _load(out_dir, "dynamic_model1.csv")
    if dyn is not None:
        parts.append(_section("Event-time effects", render_table(dyn)))

    splits = _load(out_dir, "splits_model1.csv")
    if splits is not None:
        parts.append(_section("Heterogeneity splits", render_table(splits)))

    m2 = _load(out_dir, "model2_border.csv")
    m3 = _load(out_dir, "model3_crossyear.csv")
    m4 = _load(out_dir, "model4_twfe.csv")
    alt = []
    for name, df in (("border contrast", m2), ("cross-year matched", m3), ("cross-year TWFE", m4)):
        if df is not None:
            alt.append(f"**{name}**\n\n" + render_table(df))
    if alt:
        parts.append(_section("Alternative identification designs", "\n\n".join(alt)))

    bacon = _load(out_dir, "bacon_summary.csv")
    if bacon is not None:
        body = render_table(bacon, floatfmt="{:.6f}")
        cats = _load(out_dir, "bacon_weights.csv")
        if cats is not None:
            body += "\n\n" + render_table(cats, floatfmt="{:.6f}")
        parts.append(_section("Two-way fixed-effects decomposition", body))
    else:
        parts.append(_section("Two-way fixed-effects decomposition", _missing("bacon_summary.csv", "bacon")))

    pz = _load(out_dir, "placebo_zero.csv")
    pp = _load(out_dir, "placebo_prior_year.csv")
    pl = []
    if pz is not None:
        pl.append(
            "**Zero-effect worlds** — mean |effect| "
            f"{pz['psi'].abs().mean():.4f} over {len(pz)} seeds\n\n" + render_table(pz)
        )
    if pp is not None:
        pl.append("**Prior-year labels**\n\n" + render_table(pp))
    parts.append(
        _section("Placebo checks", "\n\n".join(pl) if pl else _missing("placebo_zero.csv", "placebo"))
    )

    prod = _load(out_dir, "production_params.csv")
    if prod is not None:
        fit = prod.loc[prod["fitted"].astype(bool)]
        rts = (fit["alpha"] + fit["beta"]).to_numpy()
        summary = pd.DataFrame(
            [
                {
                    "markets": len(prod),
                    "fitted": len(fit),
                    "mean_alpha": fit["alpha"].mean(),
                    "mean_beta": fit["beta"].mean(),
                    "share_increasing_returns": float((rts > 1).mean()),
                    "mean_r2": fit["r2"].mean(),
                }
            ]
        )
        parts.append(_section("Production functions (demand and supply elasticities)", render_table(summary)))
    else:
        parts.append(
            _section("Production functions (demand and supply elasticities)", _missing("production_params.csv", "production"))
        )

    cf = _load(out_dir, "counterfactual.csv")
    if cf is not None:
        parts.append(_section("Counterfactual reallocation of session starts", render_table(cf, floatfmt="{:.2f}")))
    else:
        parts.append(
            _section("Counterfactual reallocation of session starts", _missing("counterfactual.csv", "counterfactual"))
        )

    gini = _load(out_dir, "gini.csv")
    if gini is not None:
        if "week" in gini.columns:
            gini["week"] = gini["week"].astype("Int64")
        parts.append(_section("Weekly supply concentration (Gini)", render_table(gini)))
    else:
        parts.append(_section("Weekly supply concentration (Gini)", _missing("gini.csv", "gini")))

    return "\n".join(parts).rstrip() + "\n"
