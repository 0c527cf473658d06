"""Deterministic on-disk formats for the trip log, demand log and truth sidecar."""

from __future__ import annotations

import os

import numpy as np
import pandas as pd

from .generate import TRIP_COLUMNS, GroundTruth

_TS_COLS = ["request_ts", "accept_ts", "pickup_ts", "dropoff_ts"]
_MONEY_COLS = ["rider_payment", "external_fees", "platform_take", "driver_earnings"]


def write_trips_csv(trips: pd.DataFrame, path: str | os.PathLike) -> None:
    out = trips.loc[:, TRIP_COLUMNS].copy()
    for c in _TS_COLS:
        out[c] = pd.to_datetime(out[c]).dt.strftime("%Y-%m-%d %H:%M")
    for c in _MONEY_COLS:
        out[c] = out[c].map(lambda v: f"{v:.4f}")
    out["tip"] = out["tip"].map(lambda v: f"{v:.2f}")
    out["miles"] = out["miles"].map(lambda v: f"{v:.4f}")
    for c in ["o_x_km", "o_y_km", "d_x_km", "d_y_km"]:
        out[c] = out[c].map(lambda v: f"{v:.5f}")
    out["cancelled"] = np.where(trips["cancelled"].to_numpy(), "true", "false")
    out["rating"] = trips["rating"].map(lambda v: "" if pd.isna(v) else f"{v:.1f}")
    out.to_csv(path, index=False, lineterminator="\n")


def read_trips_csv(path: str | os.PathLike) -> pd.DataFrame:
    trips = pd.read_csv(
        path,
        dtype={
            "driver_id": np.int64,
            "session_id": np.int64,
            "vehicle_type": str,
        },
        parse_dates=_TS_COLS,
    )
    trips["cancelled"] = trips["cancelled"].astype(str).str.lower().isin(["true", "1"])
    trips["rating"] = pd.to_numeric(trips["rating"], errors="coerce")
    missing = [c for c in TRIP_COLUMNS if c not in trips.columns]
    if missing:
        raise ValueError(f"trip log at {path} is missing columns: {missing}")
    return trips[TRIP_COLUMNS]


def write_demand_csv(demand: pd.DataFrame, path: str | os.PathLike) -> None:
    cols = ["hex_q", "hex_r", "hour_index", "intents", "requests", "completes"]
    demand.loc[:, cols].to_csv(path, index=False, lineterminator="\n")


def read_demand_csv(path: str | os.PathLike) -> pd.DataFrame:
    demand = pd.read_csv(path)
    cols = ["hex_q", "hex_r", "hour_index", "intents", "requests", "completes"]
    missing = [c for c in cols if c not in demand.columns]
    if missing:
        raise ValueError(f"demand log at {path} is missing columns: {missing}")
    return demand[cols].astype(np.int64)


def write_truth_json(truth: GroundTruth, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(truth.to_json())
        fh.write("\n")


def read_truth_json(path: str | os.PathLike) -> GroundTruth:
    with open(path) as fh:
        return GroundTruth.from_json(fh.read())
