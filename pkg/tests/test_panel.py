from dataclasses import dataclass

import numpy as np
import pandas as pd
import pytest

from ridepolicy.geo import ConvexPolygon
from ridepolicy.panel import (
    PANEL_COLUMNS,
    ZONE_COLUMNS,
    assign_cohorts,
    build_driver_week_panel,
    build_zone_week_demand,
    read_panel_csv,
    week_index,
    write_panel_csv,
    write_zone_csv,
)

ANCHOR = "2024-02-05"  # a Monday


@dataclass
class TinyHorizon:
    anchor: str = ANCHOR
    n_weeks_pre: int = 1
    n_weeks_post: int = 1
    hex_cell_area_km2: float = 5.16


def mk_trip(
    driver,
    request,
    accept,
    pickup,
    dropoff,
    miles=1.0,
    earnings=10.0,
    take=3.0,
    fees=1.0,
    tip=0.0,
    rating=np.nan,
    cancelled=False,
    o=(0.0, 0.0),
    d=(1.0, 1.0),
):
    return {
        "driver_id": driver,
        "session_id": 0,
        "request_ts": pd.Timestamp(request),
        "accept_ts": pd.Timestamp(accept),
        "pickup_ts": pd.Timestamp(pickup) if pickup else pd.NaT,
        "dropoff_ts": pd.Timestamp(dropoff) if dropoff else pd.NaT,
        "o_x_km": o[0],
        "o_y_km": o[1],
        "d_x_km": d[0],
        "d_y_km": d[1],
        "miles": miles,
        "rider_payment": earnings + take + fees,
        "external_fees": fees,
        "platform_take": take,
        "driver_earnings": earnings,
        "tip": tip,
        "vehicle_type": "standard",
        "cancelled": cancelled,
        "rating": rating,
    }


@pytest.fixture()
def micro_trips():
    rows = [
        # week -1: one completed trip
        mk_trip(
            1, "2024-01-30 09:00", "2024-01-30 09:05", "2024-01-30 09:10",
            "2024-01-30 09:40", miles=4.0, earnings=12.0, tip=1.0, rating=4.0,
        ),
        # week 0: two completed trips 15 minutes apart plus one cancellation
        mk_trip(
            1, "2024-02-05 10:00", "2024-02-05 10:05", "2024-02-05 10:10",
            "2024-02-05 10:30", miles=5.0, earnings=20.0, take=4.0, fees=2.0,
            tip=3.0, rating=5.0,
        ),
        mk_trip(
            1, "2024-02-05 10:40", "2024-02-05 10:45", "2024-02-05 10:50",
            "2024-02-05 11:15", miles=3.0, earnings=10.0,
        ),
        mk_trip(
            1, "2024-02-05 12:00", "2024-02-05 12:01", None, None,
            miles=0.0, earnings=0.0, take=0.0, fees=0.0, cancelled=True,
        ),
    ]
    return pd.DataFrame(rows)


@pytest.fixture()
def micro_cohorts():
    return pd.DataFrame(
        {"driver_id": [1, 2], "cohort": pd.array([0, pd.NA], dtype="Int64")}
    )


class TestWeekIndex:
    @pytest.mark.parametrize(
        "ts,want",
        [
            ("2024-02-05 00:00", 0),
            ("2024-02-11 23:59", 0),
            ("2024-02-12 00:00", 1),
            ("2024-02-04 23:59", -1),
            ("2024-01-29 00:00", -1),
            ("2024-03-04 05:00", 4),
        ],
    )
    def test_hand_cases(self, ts, want):
        assert week_index(ts, ANCHOR) == want

    def test_vectorized(self):
        ts = pd.Series(pd.to_datetime(["2024-02-05", "2024-02-12", "2024-01-29"]))
        np.testing.assert_array_equal(week_index(ts, ANCHOR), [0, 1, -1])

    def test_non_monday_anchor_rejected(self):
        with pytest.raises(ValueError, match="Monday"):
            week_index("2024-02-05", "2024-02-06")

    def test_horizon_bounds(self):
        with pytest.raises(ValueError, match="outside the horizon"):
            week_index("2024-01-01", ANCHOR, n_weeks_pre=2)
        with pytest.raises(ValueError, match="outside the horizon"):
            week_index("2024-06-01", ANCHOR, n_weeks_post=10)


class TestAssignCohorts:
    square = ConvexPolygon([(-3, -3), (3, -3), (3, 3), (-3, 3)])

    def trips(self):
        rows = [
            # driver 1: completed inside dropoff in week 0
            mk_trip(1, "2024-02-06 10:00", "2024-02-06 10:01", "2024-02-06 10:05",
                    "2024-02-06 10:20", d=(0.0, 0.0)),
            # driver 2: cancelled inside (wk 1), completed outside (wk 2),
            # completed inside (wk 3) -> cohort 3
            mk_trip(2, "2024-02-13 10:00", "2024-02-13 10:01", None, None,
                    d=(0.0, 0.0), cancelled=True),
            mk_trip(2, "2024-02-20 10:00", "2024-02-20 10:01", "2024-02-20 10:05",
                    "2024-02-20 10:20", d=(10.0, 10.0)),
            mk_trip(2, "2024-02-27 10:00", "2024-02-27 10:01", "2024-02-27 10:05",
                    "2024-02-27 10:20", d=(1.0, -1.0)),
            # driver 3: inside only before launch -> never treated
            mk_trip(3, "2024-01-30 10:00", "2024-01-30 10:01", "2024-01-30 10:05",
                    "2024-01-30 10:20", d=(0.0, 0.0)),
            # driver 4: inside but past the horizon -> never treated
            mk_trip(4, "2024-05-10 10:00", "2024-05-10 10:01", "2024-05-10 10:05",
                    "2024-05-10 10:20", d=(0.0, 0.0)),
        ]
        return pd.DataFrame(rows)

    def test_hand_cohorts(self):
        out = assign_cohorts(self.trips(), self.square, ANCHOR, horizon=12)
        got = out.set_index("driver_id")["cohort"]
        assert got.loc[1] == 0
        assert got.loc[2] == 3
        assert pd.isna(got.loc[3])
        assert pd.isna(got.loc[4])

    def test_every_driver_covered(self):
        out = assign_cohorts(self.trips(), self.square, ANCHOR)
        assert sorted(out["driver_id"]) == [1, 2, 3, 4]

    def test_first_treatment_ts_matches_cohort_week(self):
        out = assign_cohorts(self.trips(), self.square, ANCHOR).set_index("driver_id")
        ts = out.loc[2, "first_treatment_ts"]
        assert week_index(ts, ANCHOR) == out.loc[2, "cohort"]


class TestDriverWeekPanel:
    def build(self, micro_trips, micro_cohorts):
        return build_driver_week_panel(micro_trips, micro_cohorts, TinyHorizon())

    def test_balanced_three_weeks_two_drivers(self, micro_trips, micro_cohorts):
        panel = self.build(micro_trips, micro_cohorts)
        assert len(panel) == 2 * 3
        assert list(panel["week"].unique()) == [-1, 0, 1]
        assert list(panel.columns[: len(PANEL_COLUMNS)]) == PANEL_COLUMNS

    def test_week0_hand_numbers(self, micro_trips, micro_cohorts):
        panel = self.build(micro_trips, micro_cohorts).set_index(["driver_id", "week"])
        row = panel.loc[(1, 0)]
        assert row["num_trip"] == 2
        assert row["num_hour"] == pytest.approx(55 / 60)
        assert row["trip_hour"] == pytest.approx(45 / 60)
        assert row["num_mile"] == pytest.approx(8.0)
        assert row["ave_utilization"] == pytest.approx(45 / 55)
        assert row["num_session"] == 1
        assert row["ave_dur_per_session"] == pytest.approx(70 / 60)
        assert row["ave_n_trip_per_hour"] == pytest.approx(2 / (55 / 60))
        assert row["hourly_earning"] == pytest.approx(30 / (55 / 60))
        assert row["earning_per_ride"] == pytest.approx(15.0)
        assert row["tips"] == pytest.approx(3.0)
        assert row["perc_tips"] == pytest.approx(0.5)
        assert row["weekly_cancel_rate"] == pytest.approx(1 / 3)
        assert row["driver_rating"] == pytest.approx(5.0)
        assert row["rider_wait_time"] == pytest.approx(10 / 60)
        assert row["frac_Phour"] == pytest.approx(0.0)
        assert row["enter_treatment"] == 1
        # per-trip earnings rates are 48 and 20 $/h -> sample variance 392
        assert row["hourly_earning_var"] == pytest.approx(392.0)
        assert row["earnings_week"] == pytest.approx(30.0)
        # rider payments minus external fees
        assert row["net_passenger_payments"] == pytest.approx(40.0 - 3.0)
        assert row["num_cancel"] == 1

    def test_preweek_hand_numbers(self, micro_trips, micro_cohorts):
        panel = self.build(micro_trips, micro_cohorts).set_index(["driver_id", "week"])
        row = panel.loc[(1, -1)]
        assert row["num_trip"] == 1
        assert row["num_hour"] == pytest.approx(35 / 60)
        assert row["ave_utilization"] == pytest.approx(30 / 35)
        assert row["perc_tips"] == pytest.approx(1.0)
        assert row["driver_rating"] == pytest.approx(4.0)
        assert row["enter_treatment"] == 0
        assert pd.isna(row["hourly_earning_var"])  # one trip, no dispersion

    def test_inactive_driver_rows_are_zero_not_nan(self, micro_trips, micro_cohorts):
        panel = self.build(micro_trips, micro_cohorts).set_index(["driver_id", "week"])
        for w in (-1, 0, 1):
            row = panel.loc[(2, w)]
            assert row["num_trip"] == 0 and row["num_hour"] == 0
            for c in [
                "ave_utilization", "hourly_earning", "earning_per_ride",
                "perc_tips", "weekly_cancel_rate", "rider_wait_time",
                "frac_Hdemand", "frac_Phour", "ave_dur_per_session",
            ]:
                assert row[c] == 0.0, c
            assert pd.isna(row["driver_rating"])
            assert row["enter_treatment"] == 0

    def test_peak_hour_fraction(self, micro_cohorts):
        # one trip fully inside the 4-7 PM window -> frac_Phour == 1
        trips = pd.DataFrame(
            [
                mk_trip(1, "2024-02-05 16:25", "2024-02-05 16:30",
                        "2024-02-05 16:35", "2024-02-05 17:30"),
                mk_trip(2, "2024-02-05 13:00", "2024-02-05 13:05",
                        "2024-02-05 13:10", "2024-02-05 14:00"),
            ]
        )
        cohorts = pd.DataFrame(
            {"driver_id": [1, 2], "cohort": pd.array([0, 0], dtype="Int64")}
        )
        panel = build_driver_week_panel(trips, cohorts, TinyHorizon())
        p = panel.set_index(["driver_id", "week"])
        assert p.loc[(1, 0), "frac_Phour"] == pytest.approx(1.0)
        assert p.loc[(2, 0), "frac_Phour"] == pytest.approx(0.0)

    def test_session_split_on_two_hour_gap(self, micro_cohorts):
        trips = pd.DataFrame(
            [
                mk_trip(1, "2024-02-05 08:00", "2024-02-05 08:05",
                        "2024-02-05 08:10", "2024-02-05 08:30"),
                # 2h05m after the previous dropoff -> new session
                mk_trip(1, "2024-02-05 10:30", "2024-02-05 10:35",
                        "2024-02-05 10:40", "2024-02-05 11:00"),
            ]
        )
        cohorts = micro_cohorts
        panel = build_driver_week_panel(trips, cohorts, TinyHorizon())
        row = panel.set_index(["driver_id", "week"]).loc[(1, 0)]
        assert row["num_session"] == 2
        assert row["ave_dur_per_session"] == pytest.approx(25 / 60)

    def test_duplicate_trips_rejected(self, micro_trips, micro_cohorts):
        dup = pd.concat([micro_trips, micro_trips.iloc[[1]]], ignore_index=True)
        with pytest.raises(ValueError, match="duplicate trips"):
            build_driver_week_panel(dup, micro_cohorts, TinyHorizon())

    def test_missing_cohort_coverage_rejected(self, micro_trips):
        cohorts = pd.DataFrame(
            {"driver_id": [2], "cohort": pd.array([pd.NA], dtype="Int64")}
        )
        with pytest.raises(ValueError, match="cohort assignment missing"):
            build_driver_week_panel(micro_trips, cohorts, TinyHorizon())

    def test_csv_round_trip(self, micro_trips, micro_cohorts, tmp_path):
        panel = self.build(micro_trips, micro_cohorts)
        p = tmp_path / "panel.csv"
        write_panel_csv(panel, p)
        back = read_panel_csv(p)
        assert list(back.columns) == PANEL_COLUMNS
        for c in PANEL_COLUMNS:
            np.testing.assert_allclose(
                back[c].to_numpy(dtype=float),
                panel[c].to_numpy(dtype=float),
                atol=1e-6,
                err_msg=c,
            )

    def test_read_rejects_missing_columns(self, tmp_path):
        p = tmp_path / "bad.csv"
        pd.DataFrame({"driver_id": [1]}).to_csv(p, index=False)
        with pytest.raises(ValueError, match="missing columns"):
            read_panel_csv(p)


class TestPanelOnSimulatedMarket:
    def test_balanced_and_finite(self, medium_sim, medium_panel):
        cfg, trips, _, _ = medium_sim
        panel, cohorts = medium_panel
        n_weeks = cfg.n_weeks_pre + cfg.n_weeks_post + 1
        assert len(panel) == cfg.n_drivers * n_weeks
        counts = panel.groupby("driver_id")["week"].count()
        assert (counts == n_weeks).all()
        ratios = ["ave_utilization", "hourly_earning", "perc_tips", "frac_Phour"]
        assert panel[ratios].notna().all().all()

    def test_accounting_against_trip_log(self, medium_sim, medium_panel):
        cfg, trips, _, _ = medium_sim
        panel, _ = medium_panel
        t = trips.copy()
        t["week"] = week_index(t["accept_ts"], cfg.anchor)
        done = t.loc[~t["cancelled"]]
        check = panel.set_index(["driver_id", "week"])
        some = done.groupby(["driver_id", "week"]).agg(
            n=("miles", "size"), miles=("miles", "sum"), earn=("driver_earnings", "sum")
        )
        sample = some.sample(n=40, random_state=0)
        for (d, w), row in sample.iterrows():
            got = check.loc[(d, w)]
            assert got["num_trip"] == row["n"]
            assert got["num_mile"] == pytest.approx(row["miles"])
            assert got["earnings_week"] == pytest.approx(row["earn"])

    def test_enter_treatment_tracks_cohort(self, medium_panel):
        panel, _ = medium_panel
        g = panel["cohort"]
        want = (g.notna() & (panel["week"] >= g.fillna(10**9))).astype(int)
        assert (panel["enter_treatment"] == want).all()

    def test_cohort_agrees_with_generator(self, medium_sim, medium_panel):
        _, _, _, truth = medium_sim
        _, cohorts = medium_panel
        got = cohorts.set_index("driver_id")["cohort"]
        agree = 0
        for d, want in truth.cohort.items():
            have = got.loc[d]
            agree += (pd.isna(have) and want is None) or (
                not pd.isna(have) and want is not None and int(have) == int(want)
            )
        assert agree / len(truth.cohort) > 0.95


class TestZoneWeekDemand:
    def demand(self):
        return pd.DataFrame(
            {
                "hex_q": [0, 5, 0],
                "hex_r": [0, 0, 0],
                "hour_index": [-100, -50, 10],
                "intents": [100, 10, 50],
                "requests": [80, 8, 40],
                "completes": [60, 6, 30],
            }
        )

    def test_hand_aggregation_and_decile(self):
        zw = build_zone_week_demand(self.demand(), hex_area_km2=36.0, zone_area_km2=36.0)
        assert list(zw.columns) == ZONE_COLUMNS
        zw = zw.set_index(["zone_id", "week"])
        assert zw.loc[("0:0", -1), "intents"] == 100
        assert zw.loc[("0:0", -1), "completes"] == 60
        assert zw.loc[("5:0", -1), "intents"] == 10
        assert zw.loc[("0:0", 0), "requests"] == 40
        # pre-period weekly intents 100 vs 10: only the first clears the 90th pct
        assert bool(zw.loc[("0:0", -1), "high_demand"]) is True
        assert bool(zw.loc[("0:0", 0), "high_demand"]) is True
        assert bool(zw.loc[("5:0", -1), "high_demand"]) is False

    def test_top_n_rule(self):
        zw = build_zone_week_demand(
            self.demand(), 36.0, 36.0, rule="top10", top_n=1
        ).set_index(["zone_id", "week"])
        assert bool(zw.loc[("0:0", -1), "high_demand"]) is True
        assert bool(zw.loc[("5:0", -1), "high_demand"]) is False

    def test_unknown_rule_rejected(self):
        with pytest.raises(ValueError, match="high-demand rule"):
            build_zone_week_demand(self.demand(), 36.0, 36.0, rule="median")

    def test_funnel_violations_rejected(self):
        bad = self.demand()
        bad.loc[0, "completes"] = 90  # above requests
        with pytest.raises(ValueError, match="funnel"):
            build_zone_week_demand(bad, 36.0, 36.0)
        bad = self.demand()
        bad.loc[0, "requests"] = 200  # above intents
        with pytest.raises(ValueError, match="funnel"):
            build_zone_week_demand(bad, 36.0, 36.0)

    def test_major_market_flag_and_price_index(self):
        square = ConvexPolygon([(-3, -3), (3, -3), (3, 3), (-3, 3)])
        zw = build_zone_week_demand(
            self.demand(),
            36.0,
            36.0,
            major_polygon=square,
            price_index={"0:0": [1.5, 2.0]},
        ).set_index(["zone_id", "week"])
        assert bool(zw.loc[("0:0", -1), "in_major_market"]) is True
        assert bool(zw.loc[("5:0", -1), "in_major_market"]) is False
        assert zw.loc[("0:0", -1), "price_indicator"] == pytest.approx(1.5)
        assert zw.loc[("0:0", 0), "price_indicator"] == pytest.approx(2.0)
        assert zw.loc[("5:0", -1), "price_indicator"] == pytest.approx(1.0)

    def test_zone_csv_writer(self, tmp_path):
        zw = build_zone_week_demand(self.demand(), 36.0, 36.0)
        p = tmp_path / "zones.csv"
        write_zone_csv(zw, p)
        back = pd.read_csv(p)
        assert list(back.columns) == ZONE_COLUMNS
        assert set(back["high_demand"]) <= {"true", "false", True, False}
