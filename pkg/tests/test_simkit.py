import numpy as np
import pandas as pd
import pytest

from ridepolicy.simkit import io as sim_io
from ridepolicy.simkit.config import (
    VEHICLE_TYPES,
    SimConfig,
    small_market_layout,
)
from ridepolicy.simkit.generate import (
    NEVER,
    TRIP_COLUMNS,
    GroundTruth,
    generate_market,
    generate_two_year,
)


def small_config(seed=5, **kw):
    base = dict(
        seed=seed,
        n_drivers=80,
        n_weeks_pre=4,
        n_weeks_post=3,
        market_layout=small_market_layout(),
    )
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture(scope="module")
def small_sim():
    cfg = small_config(effect_hours=0.1)
    trips, demand, truth = generate_market(cfg)
    return cfg, trips, demand, truth


def session_hours(trips: pd.DataFrame) -> pd.DataFrame:
    """Per driver-session on-duty span in hours, from first request to last dropoff."""
    done = trips.loc[~trips["cancelled"]]
    g = done.groupby(["driver_id", "session_id"])
    span = (g["dropoff_ts"].max() - g["request_ts"].min()).dt.total_seconds() / 3600.0
    return span.reset_index(name="hours")


class TestTripLog:
    def test_column_order(self, small_sim):
        _, trips, _, _ = small_sim
        assert list(trips.columns) == TRIP_COLUMNS

    def test_timestamps_ordered(self, small_sim):
        _, trips, _, _ = small_sim
        done = trips.loc[~trips["cancelled"]]
        assert (done["accept_ts"] >= done["request_ts"]).all()
        assert (done["pickup_ts"] >= done["accept_ts"]).all()
        assert (done["dropoff_ts"] >= done["pickup_ts"]).all()
        assert trips["request_ts"].is_monotonic_increasing

    def test_cancelled_trips_have_no_ride(self, small_sim):
        _, trips, _, _ = small_sim
        cut = trips.loc[trips["cancelled"]]
        assert cut["pickup_ts"].isna().all()
        assert cut["dropoff_ts"].isna().all()
        assert (cut["driver_earnings"] == 0).all()
        assert 0 < len(cut) < 0.2 * len(trips)

    def test_payment_identity(self, small_sim):
        _, trips, _, _ = small_sim
        done = trips.loc[~trips["cancelled"]]
        gap = (
            done["rider_payment"]
            - done["driver_earnings"]
            - done["platform_take"]
            - done["external_fees"]
        )
        assert float(gap.abs().max()) <= 1e-6

    def test_value_ranges(self, small_sim):
        _, trips, _, _ = small_sim
        done = trips.loc[~trips["cancelled"]]
        assert (done["miles"] > 0).all()
        assert (done["rider_payment"] > 0).all()
        assert (done["driver_earnings"] > 0).all()
        assert (done["tip"] >= 0).all()
        assert set(trips["vehicle_type"]) <= set(VEHICLE_TYPES)
        rated = trips["rating"].dropna()
        assert ((rated >= 1.0) & (rated <= 5.0)).all()


class TestDemandLog:
    def test_funnel_and_types(self, small_sim):
        cfg, _, demand, _ = small_sim
        assert (demand["intents"] >= demand["requests"]).all()
        assert (demand["requests"] >= demand["completes"]).all()
        assert (demand["completes"] >= 0).all()
        assert demand["hour_index"].min() >= -cfg.n_weeks_pre * 168
        assert demand["hour_index"].max() < (cfg.n_weeks_post + 1) * 168

    def test_hourly_pattern_peaks(self, small_sim):
        _, _, demand, _ = small_sim
        by_hour = demand.groupby(demand["hour_index"] % 24)["intents"].sum()
        assert by_hour.loc[17] > 2 * by_hour.loc[3]


class TestGroundTruth:
    def test_cohorts_inside_horizon(self, small_sim):
        cfg, trips, _, truth = small_sim
        gs = {g for g in truth.cohort.values() if g is not None}
        assert gs and all(0 <= g <= cfg.cohort_horizon for g in gs)
        assert set(truth.cohort) == set(trips["driver_id"].unique())

    def test_effects_recorded(self, small_sim):
        _, _, _, truth = small_sim
        assert truth.effects["log_num_hour"] == 0.1
        assert truth.effects["log_hourly_earning"] == 0.0

    def test_cohort_array(self, small_sim):
        _, _, _, truth = small_sim
        ids = sorted(truth.cohort)
        arr = truth.cohort_array(ids)
        for d, g in zip(ids, arr):
            want = truth.cohort[d]
            assert g == (NEVER if want is None else want)

    def test_json_round_trip(self, small_sim, tmp_path):
        _, _, _, truth = small_sim
        back = GroundTruth.from_json(truth.to_json())
        assert back.cohort == truth.cohort
        assert back.effects == truth.effects
        assert back.polygons == truth.polygons
        sim_io.write_truth_json(truth, tmp_path / "truth.json")
        again = sim_io.read_truth_json(tmp_path / "truth.json")
        assert again.to_json() == truth.to_json()


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        cfg = small_config(seed=9, n_drivers=40)
        paths = []
        for tag in ("a", "b"):
            trips, demand, truth = generate_market(cfg)
            sim_io.write_trips_csv(trips, tmp_path / f"trips_{tag}.csv")
            sim_io.write_demand_csv(demand, tmp_path / f"demand_{tag}.csv")
            sim_io.write_truth_json(truth, tmp_path / f"truth_{tag}.json")
            paths.append(tag)
        for name in ("trips", "demand", "truth"):
            ext = "json" if name == "truth" else "csv"
            a = (tmp_path / f"{name}_a.{ext}").read_bytes()
            b = (tmp_path / f"{name}_b.{ext}").read_bytes()
            assert a == b

    def test_different_seeds_differ(self):
        t1, _, _ = generate_market(small_config(seed=1, n_drivers=40))
        t2, _, _ = generate_market(small_config(seed=2, n_drivers=40))
        assert not t1["rider_payment"].head(200).equals(t2["rider_payment"].head(200))


class TestEffectInjection:
    def test_pre_launch_stream_unchanged_by_effects(self):
        cfg = small_config(seed=7, effect_hours=0.25)
        on, _, truth = generate_market(cfg)
        off, _, _ = generate_market(cfg, zero_effects=True)
        anchor = pd.Timestamp(truth.anchor)
        pre_on = on.loc[on["request_ts"] < anchor].reset_index(drop=True)
        pre_off = off.loc[off["request_ts"] < anchor].reset_index(drop=True)
        pd.testing.assert_frame_equal(pre_on, pre_off)

    def test_never_treated_stream_unchanged_by_effects(self):
        cfg = small_config(seed=7, effect_hours=0.25)
        on, _, truth = generate_market(cfg)
        off, _, _ = generate_market(cfg, zero_effects=True)
        never = [d for d, g in truth.cohort.items() if g is None]
        assert never
        a = on.loc[on["driver_id"].isin(never)].reset_index(drop=True)
        b = off.loc[off["driver_id"].isin(never)].reset_index(drop=True)
        pd.testing.assert_frame_equal(a, b)

    def test_hours_lift_matches_injected_effect(self):
        cfg = small_config(seed=13, n_drivers=200, effect_hours=0.25)
        on, _, truth = generate_market(cfg)
        off, _, _ = generate_market(cfg, zero_effects=True)
        anchor = pd.Timestamp(truth.anchor)

        def treated_post_hours(trips):
            h = session_hours(trips)
            start = trips.groupby(["driver_id", "session_id"])["request_ts"].min()
            h = h.merge(start.reset_index(name="start"), on=["driver_id", "session_id"])
            week = ((h["start"] - anchor).dt.days // 7).to_numpy()
            g = truth.cohort_array(h["driver_id"].to_numpy())
            return float(h.loc[(g != NEVER) & (week >= g), "hours"].sum())

        lift = np.log(treated_post_hours(on) / treated_post_hours(off))
        assert lift == pytest.approx(0.25, abs=0.05)

    def test_effect_monotone_in_dose(self):
        totals = []
        for eff in (0.0, 0.1, 0.25):
            cfg = small_config(seed=13, n_drivers=200, effect_hours=eff)
            trips, _, _ = generate_market(cfg)
            totals.append(session_hours(trips)["hours"].sum())
        assert totals[0] < totals[1] < totals[2]


class TestTwoYear:
    def test_prior_year_is_shifted_zero_effect_world(self):
        cfg = small_config(seed=21, n_drivers=60, effect_hours=0.2)
        res = generate_two_year(cfg)
        off, demand_off, _ = generate_market(cfg, zero_effects=True)
        shifted = res.trips_prior.copy()
        for c in ["request_ts", "accept_ts", "pickup_ts", "dropoff_ts"]:
            shifted[c] = (shifted[c] + pd.Timedelta(days=364)).astype(off[c].dtype)
        pd.testing.assert_frame_equal(shifted, off)
        d = res.demand_prior.copy()
        d["hour_index"] = d["hour_index"] + 52 * 168
        pd.testing.assert_frame_equal(d, demand_off)

    def test_treatment_year_matches_single_year_run(self):
        cfg = small_config(seed=21, n_drivers=60, effect_hours=0.2)
        res = generate_two_year(cfg)
        trips, demand, _ = generate_market(cfg)
        pd.testing.assert_frame_equal(res.trips_treatment, trips)
        pd.testing.assert_frame_equal(res.demand_treatment, demand)


class TestIORoundTrip:
    def test_trips_round_trip(self, small_sim, tmp_path):
        _, trips, _, _ = small_sim
        p = tmp_path / "trips.csv"
        sim_io.write_trips_csv(trips, p)
        back = sim_io.read_trips_csv(p)
        assert list(back.columns) == TRIP_COLUMNS
        assert back["driver_id"].equals(trips["driver_id"])
        assert back["cancelled"].equals(trips["cancelled"])
        np.testing.assert_allclose(
            back["driver_earnings"], trips["driver_earnings"], atol=5e-5
        )
        np.testing.assert_allclose(back["o_x_km"], trips["o_x_km"], atol=5e-6)

    def test_demand_round_trip(self, small_sim, tmp_path):
        _, _, demand, _ = small_sim
        p = tmp_path / "demand.csv"
        sim_io.write_demand_csv(demand, p)
        back = sim_io.read_demand_csv(p)
        pd.testing.assert_frame_equal(back, demand.astype(np.int64))

    def test_read_rejects_missing_columns(self, tmp_path):
        p = tmp_path / "bad.csv"
        pd.DataFrame({"driver_id": [1]}).to_csv(p, index=False)
        with pytest.raises(ValueError, match="issing"):
            sim_io.read_trips_csv(p)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kw",
        [
            {"n_drivers": 0},
            {"n_weeks_pre": 1},
            {"guarantee_share": 1.0},
            {"price_index_volatility": -0.1},
            {"effect_hours": 0.5, "effect_utilization": 0.5},
            {"effect_demand_spillover": -0.2},
        ],
    )
    def test_bad_config_rejected(self, kw):
        with pytest.raises(ValueError):
            small_config(**kw).validate()

    def test_zeroed_effects_helper(self):
        cfg = small_config(effect_hours=0.3, effect_demand_spillover=0.1)
        z = cfg.zeroed_effects()
        assert z.effect_hours == 0.0 and z.effect_demand_spillover == 0.0
        assert z.seed == cfg.seed and z.n_drivers == cfg.n_drivers
