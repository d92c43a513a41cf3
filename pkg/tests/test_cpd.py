import math

import numpy as np
import pytest

from conflow.calibration import Filtration
from conflow.cpd import (
    BaseMeasure,
    ConformalPredictiveDistribution,
    CPDSpec,
    MixingMeasure,
    coverage_audit,
    sample_alpha,
    sample_cpd,
)
from conflow.flow import integrate_to_boundary
from conflow.numerics import RngStream
from conflow.scores import L2Score


@pytest.fixture(scope="module")
def calibration():
    rng = np.random.default_rng(0)
    y_cal = rng.normal(size=(500, 2))
    return y_cal, Filtration.from_scores(L2Score().evaluate(np.zeros(2), y_cal))


def make_spec(calibration, mixing):
    y_cal, filt = calibration
    return CPDSpec(L2Score(), filt, BaseMeasure.empirical(y_cal, jitter=0.01), mixing, np.zeros(2))


class TestMixingMeasure:
    def test_uniform_mean(self):
        rng = np.random.default_rng(1)
        draws = [sample_alpha(MixingMeasure.uniform(), rng) for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.005)

    def test_range_support(self):
        rng = np.random.default_rng(2)
        draws = [MixingMeasure.uniform_range(0.0, 0.1).sample(rng) for _ in range(2000)]
        assert min(draws) > 0 and max(draws) < 0.1

    def test_point_mass(self):
        rng = np.random.default_rng(3)
        assert {MixingMeasure.point(0.1).sample(rng) for _ in range(20)} == {0.1}

    def test_masses(self):
        assert MixingMeasure.uniform().mass_at_or_above(0.1) == pytest.approx(0.9)
        assert MixingMeasure.uniform_range(0.9, 1.0).mass_at_or_above(0.5) == 1.0
        assert MixingMeasure.uniform_range(0.0, 0.1).mass_at_or_above(0.1) == 0.0
        assert MixingMeasure.grid([0.2, 0.6], [0.25, 0.75]).mass_at_or_above(0.5) == 0.75

    @pytest.mark.parametrize(
        "kwargs",
        [dict(kind="bogus"), dict(kind="range", a=0.5, b=0.5), dict(kind="grid", levels=(0.2,), masses=(0.5,)),
         dict(kind="grid", levels=(1.0,), masses=(1.0,))],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            MixingMeasure(**kwargs)


class TestBaseMeasure:
    def test_empirical_draws_from_bank(self):
        bank = np.arange(6.0).reshape(3, 2)
        rng = np.random.default_rng(4)
        draws = {tuple(BaseMeasure.empirical(bank).sample(rng, np.zeros(2))) for _ in range(50)}
        assert draws == {tuple(row) for row in bank}

    def test_gaussian_centred_on_prediction(self):
        rng = np.random.default_rng(5)
        draws = np.stack([BaseMeasure.gaussian(2.0).sample(rng, np.full(3, 7.0)) for _ in range(4000)])
        assert np.allclose(draws.mean(axis=0), 7.0, atol=0.15)
        assert np.allclose(draws.std(axis=0), 2.0, atol=0.1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            BaseMeasure.empirical(np.empty((0, 2)))
        with pytest.raises(ValueError):
            BaseMeasure.gaussian(-1.0)


class TestSampleCPD:
    def test_single_sample_is_a_flow(self, calibration):
        y_cal, filt = calibration
        start = np.array([[2.0, -1.0]])
        spec = CPDSpec(L2Score(), filt, BaseMeasure.provided(start), MixingMeasure.point(0.1), np.zeros(2))
        out = sample_cpd(spec, 1, root_seed=4)
        tau, _ = filt.threshold(0.1)
        direct = integrate_to_boundary(L2Score(), np.zeros(2), start[0], tau, rng=RngStream(4, 0))
        assert np.array_equal(out.points[0], direct.terminal)
        assert out.alpha[0] == 0.1 and out.tau[0] == tau

    def test_boundary_support(self, calibration):
        res = sample_cpd(make_spec(calibration, MixingMeasure.uniform()), 500, root_seed=1)
        assert res.converged.all() and res.failure_rate == 0
        assert np.max(np.abs(res.scores - res.tau)) <= 1e-6

    def test_uniform_mixing_is_calibrated(self, calibration):
        _, filt = calibration
        res = sample_cpd(make_spec(calibration, MixingMeasure.uniform()), 10_000, root_seed=2)
        (row,) = coverage_audit(res.scores, filt, [0.5], MixingMeasure.uniform())
        assert row.target == 0.5
        assert row.coverage == pytest.approx(0.5, abs=0.015)

    def test_outer_shells(self, calibration):
        _, filt = calibration
        res = sample_cpd(make_spec(calibration, MixingMeasure.uniform_range(0.0, 0.1)), 300, root_seed=3)
        tau_01, _ = filt.threshold(0.1)
        assert np.all(res.scores >= tau_01 - 1e-6)

    def test_clamped_levels_flagged(self, calibration):
        res = sample_cpd(make_spec(calibration, MixingMeasure.uniform_range(0.0, 0.01)), 200, root_seed=5)
        lo, _ = calibration[1].exact_range()
        assert np.array_equal(res.clamped, res.alpha < lo)
        assert res.clamped.any()

    def test_deterministic(self, calibration, monkeypatch):
        spec = make_spec(calibration, MixingMeasure.uniform())
        monkeypatch.setenv("CONFLOW_THREADS", "1")
        a = sample_cpd(spec, 700, root_seed=6)
        monkeypatch.setenv("CONFLOW_THREADS", "2")
        b = sample_cpd(spec, 700, root_seed=6)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.alpha, b.alpha)

    def test_needs_positive_count(self, calibration):
        with pytest.raises(ValueError):
            sample_cpd(make_spec(calibration, MixingMeasure.uniform()), 0)


class TestCoverageAudit:
    def test_nesting(self, calibration):
        _, filt = calibration
        res = sample_cpd(make_spec(calibration, MixingMeasure.point(0.3)), 200, root_seed=7)
        rows = coverage_audit(res.scores, filt, [0.5, 0.2], MixingMeasure.point(0.3))
        assert rows[0].coverage == 0 and rows[0].target == 0
        assert rows[1].coverage == 1 and rows[1].target == 1

    def test_exclusion(self):
        filt = Filtration.from_scores(np.arange(1.0, 11.0))
        rows = coverage_audit([1.0, 50.0], filt, [0.5], MixingMeasure.uniform(), exclude=[False, True])
        assert rows[0].n_used == 1 and rows[0].coverage == 1


def test_estimator_samples_on_levels():
    rng = np.random.default_rng(8)
    y_hat = rng.normal(size=(300, 3))
    y = y_hat + rng.normal(size=(300, 3))
    cpd = ConformalPredictiveDistribution(L2Score(), base="gaussian", jitter=1.0).fit(y_hat, y)
    out = cpd.sample(np.zeros(3), n_samples=50, random_state=1)
    assert out.points.shape == (50, 3)
    assert np.allclose(out.scores, out.tau, atol=1e-6)
    with pytest.raises(ValueError):
        ConformalPredictiveDistribution(L2Score(), base="bogus").fit(y_hat, y).sample(np.zeros(3))


def test_audit_within_binomial_band(calibration):
    _, filt = calibration
    M = 4000
    res = sample_cpd(make_spec(calibration, MixingMeasure.uniform()), M, root_seed=9)
    for row in coverage_audit(res.scores, filt, [0.1, 0.3, 0.5, 0.7, 0.9], MixingMeasure.uniform()):
        assert abs(row.coverage - row.target) <= 3 * math.sqrt(row.beta * (1 - row.beta) / M) + 1 / filt.n
