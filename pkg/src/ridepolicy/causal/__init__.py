"""Estimators for the staggered-rollout analysis.

Group-time treatment effects with IPW controls and their aggregations,
decomposition of the two-way fixed-effects coefficient into 2x2 comparisons,
cross-year matched difference-in-differences, border and heterogeneity
samples, k-means driver styles, and the zone-level spillover regression.
"""

from .attgt import (
    AggregateEffect,
    GroupTimeATT,
    aggregate_dynamic,
    aggregate_overall,
    att_gt,
    estimate_group_time,
)
from .attgt import GroupTimeResult, panel_arrays
from .bacon import BaconComponent, BaconDecomposition, bacon_decompose
from .bootstrap import BootstrapResult, cluster_bootstrap, resample_drivers
from .effects import pct_effect
from .kmeans import KMeansResult, kmeans
from .propensity import (
    PropensityModel,
    balance_diagnostics,
    control_weights,
    fit_propensity,
)
from .regress import (
    TwfeResult,
    demand_spillover_did,
    driver_zone_shares,
    exposure_weighted_demand,
    twfe_did,
    within_ols,
)
from .samples import (
    MatchResult,
    border_sample,
    driver_style_features,
    hull_restricted_ids,
    match_across_years,
    split_hh_lh,
    split_uncertainty,
)

__all__ = [
    "GroupTimeATT",
    "GroupTimeResult",
    "AggregateEffect",
    "att_gt",
    "estimate_group_time",
    "aggregate_overall",
    "aggregate_dynamic",
    "panel_arrays",
    "BaconComponent",
    "BaconDecomposition",
    "bacon_decompose",
    "BootstrapResult",
    "cluster_bootstrap",
    "resample_drivers",
    "pct_effect",
    "KMeansResult",
    "kmeans",
    "PropensityModel",
    "fit_propensity",
    "control_weights",
    "balance_diagnostics",
    "TwfeResult",
    "within_ols",
    "twfe_did",
    "driver_zone_shares",
    "exposure_weighted_demand",
    "demand_spillover_did",
    "MatchResult",
    "match_across_years",
    "border_sample",
    "hull_restricted_ids",
    "split_hh_lh",
    "split_uncertainty",
    "driver_style_features",
]
