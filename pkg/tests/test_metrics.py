import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conflow.datagen import sample_gp2d
from conflow.metrics import (
    MetricConfig,
    energy_distance,
    extract_patches,
    lsd,
    median_bandwidth,
    mmd_unbiased,
    patch_mmd,
    vendi_ratio,
    vendi_score,
)


def brute_lsd(samples, target):
    def power(x):
        H, W = x.shape
        Eh = np.exp(-2j * np.pi * np.outer(np.arange(H), np.arange(H)) / H)
        Ew = np.exp(-2j * np.pi * np.outer(np.arange(W), np.arange(W)) / W)
        return np.abs(Eh @ x @ Ew.T) ** 2

    beta = power(target).mean()
    ref = np.log(1 + power(target) / beta)
    return np.mean([np.mean((np.log(1 + power(s) / beta) - ref) ** 2) for s in samples])


class TestEnergyDistance:
    def test_identical(self):
        y = np.arange(6.0)
        assert energy_distance(np.tile(y, (4, 1)), y) == 0

    def test_scalar_example(self):
        assert energy_distance([[0.0], [2.0]], [1.0]) == 0.5

    def test_single_sample_is_rms(self):
        s, y = np.array([1.0, 2.0, 5.0]), np.zeros(3)
        assert energy_distance(s[None], y) == pytest.approx(np.sqrt(np.mean(s**2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            energy_distance(np.zeros((2, 3)), np.zeros(4))

    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        S, y = rng.normal(size=(7, 3)), rng.normal(size=3)
        assert energy_distance(S[rng.permutation(7)], y) == pytest.approx(energy_distance(S, y), rel=1e-12)


class TestLSD:
    def test_identical(self):
        x = np.random.default_rng(0).normal(size=(8, 8))
        assert lsd(x[None], x) == 0

    def test_doubled_field(self):
        x = np.random.default_rng(1).normal(size=(8, 8))
        assert lsd((2 * x)[None], x) > 0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        target, samples = rng.normal(size=(8, 8)), rng.normal(size=(3, 8, 8))
        assert lsd(samples, target) == pytest.approx(brute_lsd(samples, target), abs=1e-9)

    def test_zero_target_is_defined(self):
        assert np.isfinite(lsd(np.ones((1, 4, 4)), np.zeros((4, 4))))

    def test_shift_invariant(self):
        rng = np.random.default_rng(3)
        t, s = rng.normal(size=(16, 16)), rng.normal(size=(2, 16, 16))
        shifted = lsd(np.roll(s, (3, 5), axis=(1, 2)), np.roll(t, (3, 5), axis=(0, 1)))
        assert shifted == pytest.approx(lsd(s, t), rel=1e-12)


class TestPatchMMD:
    def test_kernel_at_zero_distance(self):
        A = np.zeros((3, 2))
        # all points coincide: each Gaussian kernel entry is 1 and the estimate is 0
        assert mmd_unbiased(A, A, [0.1, 1.0, 10.0]) == pytest.approx(0.0, abs=1e-15)

    def test_disjoint_constants(self):
        cfg = MetricConfig(patch=4, stride=4)
        assert patch_mmd(np.ones((2, 16, 16)), np.zeros((16, 16)), cfg) > 0

    def test_patch_grid(self):
        p = extract_patches(np.arange(64.0).reshape(8, 8), patch=4, stride=4)
        assert p.shape == (4, 16)
        assert p[1, 0] == 4 and p[2, 0] == 32

    def test_standardized_patches(self):
        p = extract_patches(np.random.default_rng(4).normal(size=(16, 16)), 4, 4, standardize=True)
        assert np.allclose(p.mean(axis=1), 0) and np.allclose(p.std(axis=1), 1)

    def test_too_few_patches(self):
        with pytest.raises(ValueError):
            mmd_unbiased(np.zeros((1, 2)), np.zeros((3, 2)), [1.0])

    def test_bandwidth_fallbacks(self):
        assert median_bandwidth(np.zeros((4, 2))) == 1.0
        pts = np.array([[0.0], [0.0], [0.0], [0.0], [2.0]])
        assert median_bandwidth(pts) == 2.0

    @pytest.mark.parametrize(
        "draw, cfg",
        [
            (lambda rng: rng.normal(size=(4, 32, 32)), MetricConfig()),
            (lambda rng: sample_gp2d(4, 32, 0.05, rng), MetricConfig(patch=4, stride=8)),
        ],
        ids=["white-noise", "gp-spaced-patches"],
    )
    def test_unbiased_over_seeds(self, draw, cfg):
        # patches must be close to independent within a field for the estimator to be unbiased
        vals = np.array([
            patch_mmd(f[1:], f[0], cfg) for f in (draw(np.random.default_rng(s)) for s in range(100))
        ])
        assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))

    @pytest.mark.parametrize("kwargs", [dict(patch=0), dict(stride=0), dict(multipliers=())])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            MetricConfig(**kwargs)


class TestVendi:
    def test_identical_samples(self):
        x = np.random.default_rng(5).normal(size=10)
        assert vendi_score(np.tile(x, (6, 1))) == pytest.approx(1.0)

    def test_orthogonal_samples(self):
        # rows of a Hadamard matrix without the constant row: zero mean and mutually orthogonal
        H = np.array([[1.0]])
        for _ in range(3):
            H = np.block([[H, H], [H, -H]])
        assert vendi_score(H[1:]) == pytest.approx(7.0)

    def test_ratio_of_same_set(self):
        x = np.random.default_rng(6).normal(size=(9, 5))
        assert vendi_ratio(x, x) == 1.0

    def test_constant_sample(self):
        with pytest.raises(ValueError):
            vendi_score(np.ones((3, 4)))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_range(self, seed, K):
        x = np.random.default_rng(seed).normal(size=(K, 6))
        v = vendi_score(x)
        assert 1 - 1e-9 <= v <= K + 1e-9
