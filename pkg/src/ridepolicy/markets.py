"""Shared market conventions: 15 areas x 5 daily slots x 7 days = 525 keys.

Both the generator and the production-function estimator need to agree on
how a (hex, hour) cell maps to a market, so the partition lives here.
Hours 0-6 fall outside every slot and map to no market.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SLOTS = ("morning_peak", "midday", "evening_peak", "off_peak", "late_night")
DAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
N_AREAS = 15

# hour-of-day -> slot index, -1 when outside all slots
_SLOT_BY_HOUR = np.full(24, -1, dtype=np.int64)
_SLOT_BY_HOUR[7:9] = 0
_SLOT_BY_HOUR[9:17] = 1
_SLOT_BY_HOUR[17:20] = 2
_SLOT_BY_HOUR[20:21] = 3
_SLOT_BY_HOUR[21:24] = 4


def slot_index_of_hour(hour_of_day):
    """Slot index for each hour of day; -1 for hours 0-6."""
    return _SLOT_BY_HOUR[np.asarray(hour_of_day) % 24]


def day_index_of_hour(hour_index):
    """Day-of-week index (0 = Mon) for an absolute hour index.

    Hour 0 is the anchor Monday 00:00; negative indices work because
    floor division rounds toward minus infinity.
    """
    return (np.asarray(hour_index) // 24) % 7


@dataclass(frozen=True)
class AreaPartition:
    """Rectangular 5 x 3 partition of the plane into 15 areas.

    Every point maps to exactly one area: the grid covers the layout's
    bounding box and clips outside points to the nearest edge cell.
    """

    x0: float
    y0: float
    x1: float
    y1: float
    nx: int = 5
    ny: int = 3

    @classmethod
    def from_polygons(cls, polygons) -> "AreaPartition":
        pts = np.vstack([p.vertices for p in polygons])
        return cls(
            x0=float(pts[:, 0].min()),
            y0=float(pts[:, 1].min()),
            x1=float(pts[:, 0].max()),
            y1=float(pts[:, 1].max()),
        )

    def area_of(self, x, y):
        """Area id in 1..15 for each point."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        wx = (self.x1 - self.x0) / self.nx or 1.0
        wy = (self.y1 - self.y0) / self.ny or 1.0
        col = np.clip(((x - self.x0) / wx).astype(np.int64), 0, self.nx - 1)
        row = np.clip(((y - self.y0) / wy).astype(np.int64), 0, self.ny - 1)
        return (row * self.nx + col + 1).astype(np.int64)


def market_key(area: int, slot_idx: int, day_idx: int) -> tuple[int, str, str]:
    return (int(area), SLOTS[slot_idx], DAYS[day_idx])


def all_market_keys() -> list[tuple[int, str, str]]:
    """The full 525-key universe in deterministic order."""
    return [
        (area, slot, day)
        for area in range(1, N_AREAS + 1)
        for slot in SLOTS
        for day in DAYS
    ]
