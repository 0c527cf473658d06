"""Simulator configuration: market geometry, demand surface, effect knobs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ridepolicy.geo import ConvexPolygon, HexGrid

VEHICLE_TYPES = ("standard", "plus", "premium", "lux", "luxsuv", "courier")

# hour-of-day and day-of-week demand multipliers (Mon = index 0)
HOUR_MULT = np.array(
    [0.20, 0.18, 0.15, 0.15, 0.20, 0.45, 0.90, 1.70, 1.70, 1.00, 1.00, 1.05,
     1.10, 1.00, 0.95, 1.00, 1.90, 1.90, 1.85, 1.30, 1.25, 0.80, 0.60, 0.40]
)
DAY_MULT = np.array([1.0, 1.0, 1.0, 1.05, 1.15, 1.20, 0.90])


def regular_polygon(cx: float, cy: float, radius_km: float, n_sides: int = 8) -> ConvexPolygon:
    ang = np.arange(n_sides) * 2 * math.pi / n_sides + math.pi / n_sides
    pts = np.column_stack([cx + radius_km * np.cos(ang), cy + radius_km * np.sin(ang)])
    return ConvexPolygon(pts)


@dataclass(frozen=True)
class MarketLayout:
    """One major market plus adjacent markets on the km plane."""

    major: ConvexPolygon
    adjacent: tuple[ConvexPolygon, ...]

    @property
    def all_polygons(self) -> list[ConvexPolygon]:
        return [self.major, *self.adjacent]


def default_market_layout() -> MarketLayout:
    """Major market at the origin, two adjacent markets east and north.

    The nearest adjacent edges sit a few km outside the major boundary so
    border bands on both sides of the boundary carry driver activity.
    """
    return MarketLayout(
        major=regular_polygon(0.0, 0.0, 30.0),
        adjacent=(
            regular_polygon(60.0, 0.0, 26.0),
            regular_polygon(0.0, 60.0, 26.0),
        ),
    )


def small_market_layout() -> MarketLayout:
    """Compact three-market layout for fast tests."""
    return MarketLayout(
        major=regular_polygon(0.0, 0.0, 14.0),
        adjacent=(
            regular_polygon(30.0, 0.0, 13.0),
            regular_polygon(0.0, 30.0, 13.0),
        ),
    )


def _polygons_disjoint(a: ConvexPolygon, b: ConvexPolygon) -> bool:
    """Separating-axis test for two convex polygons."""
    for poly in (a, b):
        v = poly.vertices
        edges = np.roll(v, -1, axis=0) - v
        normals = np.column_stack([-edges[:, 1], edges[:, 0]])
        for nx, ny in normals:
            pa = a.vertices[:, 0] * nx + a.vertices[:, 1] * ny
            pb = b.vertices[:, 0] * nx + b.vertices[:, 1] * ny
            if pa.max() < pb.min() or pb.max() < pa.min():
                return True
    return False


def default_demand_map(
    layout: MarketLayout, hex_cell_area_km2: float = 5.16
) -> dict[tuple[int, int], float]:
    """Per-hex base intent rates: Gaussian bumps around market centroids.

    A few fixed hotspot cells near each centroid get boosted so a clear
    high-demand decile exists. Cells with negligible rate are dropped.
    """
    grid = HexGrid(hex_cell_area_km2)
    centers = []
    for poly, amp, sigma in [
        (layout.major, 224.0, 0.55),
        *[(p, 128.0, 0.5) for p in layout.adjacent],
    ]:
        cx, cy = poly.centroid
        # scale the bump width to the polygon size
        span = float(np.max(np.hypot(poly.vertices[:, 0] - cx, poly.vertices[:, 1] - cy)))
        centers.append((cx, cy, amp, sigma * span, span))

    rates: dict[tuple[int, int], float] = {}
    pad_km = 8.0
    for cx, cy, amp, sigma, span in centers:
        reach = span + pad_km
        q0, r0 = grid.hex_of(cx - reach, cy - reach)
        q1, r1 = grid.hex_of(cx + reach, cy + reach)
        qs = np.arange(min(q0, q1) - 3, max(q0, q1) + 4)
        rs = np.arange(min(r0, r1) - 3, max(r0, r1) + 4)
        qq, rr = np.meshgrid(qs, rs)
        x, y = grid.center(qq.ravel(), rr.ravel())
        d = np.hypot(x - cx, y - cy)
        keep = d <= reach
        rate = amp * np.exp(-0.5 * (d / sigma) ** 2)
        for q, r, w, ok in zip(qq.ravel(), rr.ravel(), rate, keep):
            if ok and w > 0.05:
                key = (int(q), int(r))
                rates[key] = rates.get(key, 0.0) + float(w)

    # deterministic hotspots: the centroid cell and two offset cells per market
    for cx, cy, amp, sigma, span in centers:
        for dx, dy in [(0.0, 0.0), (0.35 * span, 0.0), (0.0, -0.3 * span)]:
            q, r = grid.hex_of(cx + dx, cy + dy)
            key = (int(q), int(r))
            if key in rates:
                rates[key] *= 2.2
    return dict(sorted(rates.items()))


@dataclass(frozen=True)
class SimConfig:
    """Full parameterization of one simulated market-year.

    The three ``effect_*`` fields are ground-truth log-point lifts applied
    to treated driver-weeks; ``effect_demand_spillover`` lifts intent rates
    in major-market hexes after launch. Random-draw shapes never depend on
    effect values, so runs differing only in effects share one latent world.
    """

    seed: int
    n_drivers: int = 500
    n_weeks_pre: int = 13
    n_weeks_post: int = 12
    market_layout: MarketLayout = field(default_factory=default_market_layout)
    hex_cell_area_km2: float = 5.16
    demand_intensity_map: dict[tuple[int, int], float] | None = None
    effect_hours: float = 0.0
    effect_utilization: float = 0.0
    effect_hourly_earnings: float = 0.0
    effect_demand_spillover: float = 0.0
    anticipation_weeks: int = 0
    guarantee_share: float = 0.70
    price_index_volatility: float = 0.08
    anchor: str = "2024-02-05"
    major_home_share: float = 0.40
    crossing_hazard_scale: float = 1.0
    p_active: float = 0.92
    hours_noise_sd: float = 0.32
    trips_per_hour_scale: float = 1.0
    cancel_lift: float = 0.012

    @property
    def n_weeks(self) -> int:
        return self.n_weeks_pre + self.n_weeks_post + 1

    @property
    def week_range(self) -> range:
        return range(-self.n_weeks_pre, self.n_weeks_post + 1)

    @property
    def cohort_horizon(self) -> int:
        return min(12, self.n_weeks_post)

    def demand_map(self) -> dict[tuple[int, int], float]:
        if self.demand_intensity_map is not None:
            return self.demand_intensity_map
        return default_demand_map(self.market_layout, self.hex_cell_area_km2)

    def zeroed_effects(self) -> "SimConfig":
        return replace(
            self,
            effect_hours=0.0,
            effect_utilization=0.0,
            effect_hourly_earnings=0.0,
            effect_demand_spillover=0.0,
        )

    def validate(self) -> None:
        if self.n_drivers < 1:
            raise ValueError("n_drivers must be >= 1")
        if self.n_weeks_pre < 2 or self.n_weeks_post < 1:
            raise ValueError("need n_weeks_pre >= 2 and n_weeks_post >= 1")
        if not (0.0 < self.guarantee_share < 1.0):
            raise ValueError("guarantee_share must lie in (0, 1)")
        if self.hex_cell_area_km2 <= 0:
            raise ValueError("hex_cell_area_km2 must be positive")
        if self.price_index_volatility < 0:
            raise ValueError("price_index_volatility must be nonnegative")
        if self.anticipation_weeks < 0:
            raise ValueError("anticipation_weeks must be nonnegative")
        if abs(self.effect_hours) + abs(self.effect_utilization) > 0.8:
            raise ValueError("combined hours+utilization effect above 0.8 log points is unsupported")
        if self.effect_demand_spillover < 0:
            raise ValueError("effect_demand_spillover must be nonnegative")
        polys = self.market_layout.all_polygons
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if not _polygons_disjoint(polys[i], polys[j]):
                    raise ValueError(f"market polygons {i} and {j} overlap")
        for key, rate in (self.demand_intensity_map or {}).items():
            if rate < 0:
                raise ValueError(f"negative demand rate at hex {key}")
