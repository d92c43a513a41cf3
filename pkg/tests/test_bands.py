import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conflow.bands import (
    Band,
    RiskControllingBand,
    calibrate_eta,
    envelope,
    min_inflation,
    min_inflation_sided,
    pointwise_risk,
)

ZERO4 = np.zeros(4)


def exchangeable_problem(n, p, M, rng, skew=False):
    """Sample banks and targets drawn from the same per-input law."""
    centers = rng.normal(size=(n, 1)) * np.linspace(0, 1, p)
    noise = rng.exponential(size=(n, M + 1, p)) - 1 if skew else rng.normal(size=(n, M + 1, p))
    draws = centers[:, None, :] + noise
    return draws[:, :M], draws[:, M]


class TestEnvelope:
    def test_identical_samples(self):
        s = np.tile(np.arange(5.0), (4, 1))
        lo, hi = envelope(s, 0.1, 0.9)
        assert np.array_equal(lo, s[0]) and np.array_equal(hi, s[0])

    def test_two_samples(self):
        a, b = np.zeros(3), np.ones(3)
        lo, hi = envelope(np.stack([b, a]), 0.25, 0.75)
        assert np.array_equal(lo, a) and np.array_equal(hi, b)

    def test_normal_quantiles(self):
        s = np.random.default_rng(0).normal(size=(100, 50))
        lo, hi = envelope(s, 0.05, 0.95)
        # a single 5% order statistic of 100 draws has sd near 0.2, so compare coordinate means
        assert abs(lo.mean() + 1.645) < 0.15
        assert abs(hi.mean() - 1.645) < 0.15

    @pytest.mark.parametrize("q", [(0.5, 0.5), (0.9, 0.1), (0.0, 0.5)])
    def test_quantile_order(self, q):
        with pytest.raises(ValueError):
            envelope(np.zeros((3, 2)), *q)


class TestRisk:
    def test_inside(self):
        assert pointwise_risk(Band(ZERO4 - 1, ZERO4 + 1), ZERO4) == 0

    def test_all_above(self):
        assert pointwise_risk(Band(ZERO4 - 1, ZERO4 + 1), ZERO4 + 3, eta=1.0) == 1

    def test_one_outside(self):
        assert pointwise_risk(Band(ZERO4, ZERO4 + 1), np.array([0.5, 0.5, 2.0, 0.5])) == 0.25

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            pointwise_risk(Band(ZERO4, ZERO4), np.zeros(3))

    def test_inverted_band(self):
        with pytest.raises(ValueError):
            Band(ZERO4 + 1, ZERO4)

    def test_inflated_bounds(self):
        b = Band(ZERO4, ZERO4 + 1).inflated(0.5, 2.0)
        lo, hi = b.bounds
        assert np.all(lo == -0.5) and np.all(hi == 3.0) and np.all(b.width == 3.5)


class TestMinInflation:
    band = Band(ZERO4, ZERO4)
    y = np.array([0.0, 0.5, -1.0, 2.0])

    def test_quarter_risk(self):
        assert min_inflation(self.band, self.y, 0.25) == 1.0

    def test_zero_risk(self):
        assert min_inflation(self.band, self.y, 0.0) == 2.0

    def test_inside(self):
        assert min_inflation(Band(ZERO4 - 5, ZERO4 + 5), self.y) == 0

    def test_sided(self):
        assert min_inflation_sided(self.band, self.y, 0.0) == (1.0, 2.0)

    def test_delta_range(self):
        with pytest.raises(ValueError):
            min_inflation(self.band, self.y, 1.0)


class TestCalibrateEta:
    def test_all_inside(self):
        bands = [Band(ZERO4 - 1, ZERO4 + 1)] * 5
        assert calibrate_eta(bands, [ZERO4] * 5, 0.0, 0.1) == (0.0, 0.0)

    def test_order_statistic(self):
        bands = [Band(ZERO4, ZERO4)] * 3
        ys = [ZERO4, ZERO4, np.array([0, 0, 0, 1.0])]
        assert calibrate_eta(bands, ys, 0.0, 0.5) == (0.0, 0.0)
        assert calibrate_eta(bands, ys, 0.0, 0.2) == (1.0, 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            calibrate_eta([], [], 0.0, 0.1)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            calibrate_eta([Band(ZERO4, ZERO4)], [ZERO4], 0.0, 0.5, mode="sideways")


@given(
    arrays(np.float64, 12, elements=st.floats(-5, 5)),
    arrays(np.float64, 12, elements=st.floats(0, 3)),
    arrays(np.float64, 12, elements=st.floats(-10, 10)),
    st.floats(0, 3),
    st.floats(0, 3),
)
def test_risk_nonincreasing_in_eta(lower, width, y, e1, e2):
    band = Band(lower, lower + width)
    lo, hi = sorted((e1, e2))
    assert pointwise_risk(band, y, hi) <= pointwise_risk(band, y, lo)


@given(
    arrays(np.float64, 10, elements=st.floats(-5, 5)),
    arrays(np.float64, 10, elements=st.floats(-10, 10)),
    st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.95]),
)
def test_min_inflation_is_minimal(lower, y, delta):
    band = Band(lower, lower + 1.0)
    eta = min_inflation(band, y, delta)
    assert pointwise_risk(band, y, eta) <= delta
    if eta > 0:
        assert pointwise_risk(band, y, eta - 1e-9) > delta


@pytest.mark.parametrize("delta, alpha", [(0.0, 0.1), (0.05, 0.1)])
def test_coverage_on_exchangeable_data(delta, alpha):
    rng = np.random.default_rng(1)
    n_cal = n_test = 1000
    banks, ys = exchangeable_problem(n_cal, 16, 20, rng)
    est = RiskControllingBand(alpha=alpha, delta=delta).fit(banks, ys)
    test_banks, test_ys = exchangeable_problem(n_test, 16, 20, rng)
    cov = est.score(test_banks, test_ys)
    assert cov >= 1 - alpha - 3 * math.sqrt(alpha * (1 - alpha) / n_test)


def test_asymmetric_mode_tracks_skew():
    rng = np.random.default_rng(2)
    banks, ys = exchangeable_problem(800, 16, 10, rng, skew=True)
    est = RiskControllingBand(alpha=0.1, mode="asymmetric").fit(banks, ys)
    assert est.eta_lo_ < est.eta_hi_
    test_banks, test_ys = exchangeable_problem(800, 16, 10, rng, skew=True)
    assert est.score(test_banks, test_ys) >= 0.9 - 3 * math.sqrt(0.09 / 800)


def test_estimator_predict_shapes():
    rng = np.random.default_rng(3)
    banks, ys = exchangeable_problem(50, 8, 12, rng)
    est = RiskControllingBand(alpha=0.2).fit(banks, ys)
    lower, upper = est.predict(banks[:5])
    assert lower.shape == upper.shape == (5, 8)
    assert np.all(upper - lower >= 2 * est.eta_lo_)
