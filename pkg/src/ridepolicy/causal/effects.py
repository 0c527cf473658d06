"""Effect-size conversions."""

import math


def pct_effect(coefficient: float) -> float:
    """Percentage change implied by a log-outcome coefficient: 100·(e^c − 1)."""
    return 100.0 * math.expm1(coefficient)
