"""Synthetic three-market ride economy with a staggered policy rollout.

``generate_market`` produces a trip log, an hourly hex-level demand log and
a ground-truth sidecar with the injected effects, per-driver cohort weeks
and per-market production elasticities. ``generate_two_year`` adds an
aligned prior-year world with all effects switched off.
"""

from .config import (
    MarketLayout,
    SimConfig,
    default_demand_map,
    default_market_layout,
    small_market_layout,
)
from .generate import GroundTruth, generate_market, generate_two_year
from .io import (
    read_demand_csv,
    read_trips_csv,
    read_truth_json,
    write_demand_csv,
    write_trips_csv,
    write_truth_json,
)

__all__ = [
    "SimConfig",
    "MarketLayout",
    "default_market_layout",
    "small_market_layout",
    "default_demand_map",
    "GroundTruth",
    "generate_market",
    "generate_two_year",
    "write_trips_csv",
    "read_trips_csv",
    "write_demand_csv",
    "read_demand_csv",
    "write_truth_json",
    "read_truth_json",
]
