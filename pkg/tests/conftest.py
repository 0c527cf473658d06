"""Shared fixtures: one mid-sized simulated market reused across test files.

Also collects the acceptance-suite verdict lines and prints them in the
terminal summary so each criterion shows one PASS/FAIL line per run.
"""

import numpy as np
import pandas as pd
import pytest

from ridepolicy import panel as panelmod
from ridepolicy.simkit.config import SimConfig
from ridepolicy.simkit.generate import generate_market

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(n: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(
        f"criterion {n:>2} [{name}]: {'PASS' if ok else 'FAIL'} — {detail}"
    )
    assert ok, f"acceptance criterion {n} ({name}) failed: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def medium_sim():
    """250 drivers, 6 pre + 5 post weeks, 0.25 log-hours effect, seed 11."""
    cfg = SimConfig(
        seed=11, n_drivers=250, n_weeks_pre=6, n_weeks_post=5, effect_hours=0.25
    )
    trips, demand, truth = generate_market(cfg)
    return cfg, trips, demand, truth


@pytest.fixture(scope="session")
def medium_panel(medium_sim):
    cfg, trips, demand, truth = medium_sim
    cohorts = panelmod.assign_cohorts(
        trips, truth.major_polygon(), pd.Timestamp(truth.anchor), horizon=truth.n_weeks_post
    )
    panel = panelmod.build_driver_week_panel(trips, cohorts, cfg, demand)
    return panel, cohorts


@pytest.fixture(scope="session")
def default_sim():
    """Full default-size market (500 drivers, 13 + 12 weeks), seed 42."""
    cfg = SimConfig(seed=42, effect_hours=0.08)
    trips, demand, truth = generate_market(cfg)
    return cfg, trips, demand, truth


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
