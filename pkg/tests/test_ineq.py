import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridepolicy.ineq import gini, lorenz


def gini_pairwise(x: np.ndarray) -> float:
    """Mean-absolute-difference definition, quadratic in n."""
    x = np.asarray(x, dtype=float)
    n = x.size
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2.0 * n * n * x.mean()))


def gini_lorenz_area(x: np.ndarray) -> float:
    """Twice the area between the diagonal and the Lorenz curve (trapezoids)."""
    p, s = lorenz(x)
    area_under = float(np.trapezoid(s, p))
    return 1.0 - 2.0 * area_under


values = st.lists(
    st.floats(min_value=0.0, max_value=1e6, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=60,
).filter(lambda v: sum(v) > 1e-9)


class TestGiniBasics:
    def test_equal_values_give_zero(self):
        assert gini(np.full(17, 3.5)) == pytest.approx(0.0, abs=1e-12)

    def test_single_cell_is_zero(self):
        assert gini([4.2]) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("n", [2, 5, 100])
    def test_point_mass_is_n_minus_1_over_n(self, n):
        x = np.zeros(n)
        x[0] = 7.0
        assert gini(x) == pytest.approx((n - 1) / n, abs=1e-12)

    def test_all_zero_raises(self):
        with pytest.raises(ValueError):
            gini(np.zeros(5))

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            gini([])

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            gini([1.0, -0.1])

    def test_nan_raises(self):
        with pytest.raises(ValueError):
            gini([1.0, np.nan])

    def test_known_small_example(self):
        # sorted x = (1, 2, 3): G = (2*(1*1+2*2+3*3)/(3*6)) - 4/3 = 2/9
        assert gini([3, 1, 2]) == pytest.approx(2.0 / 9.0, abs=1e-12)


class TestGiniAgreement:
    @given(values)
    @settings(max_examples=200, deadline=None)
    def test_matches_pairwise_definition(self, v):
        assert gini(v) == pytest.approx(gini_pairwise(np.array(v)), abs=1e-9)

    @given(values)
    @settings(max_examples=200, deadline=None)
    def test_matches_lorenz_area(self, v):
        assert gini(v) == pytest.approx(gini_lorenz_area(np.array(v)), abs=1e-9)


class TestGiniInvariances:
    @given(values, st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariant(self, v, c):
        x = np.array(v)
        assert gini(c * x) == pytest.approx(gini(x), abs=1e-9)

    @given(values, st.integers(min_value=2, max_value=5))
    @settings(max_examples=100, deadline=None)
    def test_replication_invariant(self, v, k):
        x = np.array(v)
        assert gini(np.tile(x, k)) == pytest.approx(gini(x), abs=1e-9)

    @given(values)
    @settings(max_examples=100, deadline=None)
    def test_bounded(self, v):
        n = len(v)
        g = gini(v)
        assert -1e-12 <= g <= (n - 1) / n + 1e-12

    def test_pigou_dalton_transfer_lowers_gini(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.exponential(5.0, size=20)
            lo, hi = int(np.argmin(x)), int(np.argmax(x))
            t = 0.49 * (x[hi] - x[lo])
            if t <= 0:
                continue
            y = x.copy()
            y[hi] -= t
            y[lo] += t
            assert gini(y) < gini(x) - 1e-12


class TestLorenz:
    @given(values)
    @settings(max_examples=100, deadline=None)
    def test_endpoints_and_monotonicity(self, v):
        p, s = lorenz(v)
        assert p[0] == 0.0 and s[0] == 0.0
        assert p[-1] == pytest.approx(1.0)
        assert s[-1] == pytest.approx(1.0)
        assert (np.diff(s) >= -1e-12).all()

    @given(values)
    @settings(max_examples=100, deadline=None)
    def test_convexity(self, v):
        _, s = lorenz(v)
        assert (np.diff(s, 2) >= -1e-9).all()

    def test_curve_below_diagonal(self):
        p, s = lorenz([1.0, 2.0, 10.0])
        assert (s <= p + 1e-12).all()
