"""Split-conformal thresholds and their localized (weighted-quantile) variant."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, check_alpha
from .numerics import resize, weighted_quantile
from .scores import turning_angles


@dataclass(frozen=True)
class Filtration:
    """Sorted calibration scores; maps a miscoverage level to a threshold."""

    sorted_scores: np.ndarray

    @classmethod
    def from_scores(cls, scores):
        scores = as_float_array(scores, "scores").ravel()
        if scores.size == 0:
            raise ValueError("a filtration needs at least one calibration score")
        s = np.sort(scores)
        s.setflags(write=False)
        return cls(s)

    @property
    def n(self):
        return self.sorted_scores.size

    def rank(self, alpha):
        """Order-statistic index ``ceil((1 - alpha)(n + 1))`` (1-based, unclamped)."""
        alpha = check_alpha(alpha)
        # 1e-9 guards products like 0.9 * 10 that land a hair above an integer
        return max(1, math.ceil((1.0 - alpha) * (self.n + 1) - 1e-9))

    def threshold(self, alpha):
        """``(tau, clamped)``; ranks beyond ``n`` are clamped to the maximum."""
        k = self.rank(alpha)
        clamped = k > self.n
        return float(self.sorted_scores[min(k, self.n) - 1]), clamped

    def thresholds(self, alphas):
        alphas = np.asarray(alphas, dtype=np.float64)
        if np.any((alphas <= 0) | (alphas >= 1)):
            raise ValueError("alpha values must lie in (0, 1)")
        k = np.maximum(1, np.ceil((1.0 - alphas) * (self.n + 1) - 1e-9).astype(np.int64))
        clamped = k > self.n
        return self.sorted_scores[np.minimum(k, self.n) - 1], clamped

    def exact_range(self):
        """Levels for which the threshold needs no clamping."""
        return 1.0 / (self.n + 1), self.n / (self.n + 1)


def conformal_threshold(filtration, alpha):
    return filtration.threshold(alpha)


class ConformalCalibrator(BaseEstimator):
    """Split-conformal calibration for any score model.

    >>> from conflow.scores import L2Score
    >>> cal = ConformalCalibrator(L2Score()).fit(np.zeros((10, 1)), np.arange(1, 11)[:, None] / 10)
    >>> cal.threshold(0.2)
    (0.9, False)
    """

    def __init__(self, score):
        self.score = score

    def fit(self, y_hat, y):
        self.scores_ = np.atleast_1d(self.score.evaluate(y_hat, y)).ravel()
        self.filtration_ = Filtration.from_scores(self.scores_)
        return self

    def threshold(self, alpha):
        check_is_fitted(self, "filtration_")
        return self.filtration_.threshold(alpha)

    def contains(self, y_hat, y, alpha):
        tau, _ = self.threshold(alpha)
        return np.asarray(self.score.evaluate(y_hat, y)) <= tau


# --- localization -----------------------------------------------------------


def extract_field_features(x, pooled=8):
    """Per-channel mean and std followed by an 8x8 nearest-pooled copy of the
    channel-mean field. ``x`` is ``(H, W, C)``; output length ``2C + 64``."""
    x = as_float_array(x, "x")
    if x.ndim == 2:
        x = x[..., None]
    stats = np.stack([x.mean(axis=(0, 1)), x.std(axis=(0, 1))], axis=1).ravel()
    small = resize(x.mean(axis=2), pooled, pooled, mode="nearest")
    return np.concatenate([stats, small.ravel()])


def extract_traj_features(y_hat):
    """``(mean_speed, std_speed, mean_curvature, mean_turn)`` of a (T, 2) path."""
    y_hat = as_float_array(y_hat, "y_hat")
    if y_hat.ndim != 2 or y_hat.shape[1] != 2 or y_hat.shape[0] < 3:
        raise ValueError(f"trajectory features need (T, 2) with T >= 3, got {y_hat.shape}")
    v = np.diff(y_hat, axis=0)
    speed = np.linalg.norm(v, axis=1)
    curv = np.linalg.norm(np.diff(y_hat, n=2, axis=0), axis=1)
    theta = turning_angles(v[None])[0][0]
    return np.array([speed.mean(), speed.std(), curv.mean(), theta.mean()])


FEATURE_EXTRACTORS = {"field": extract_field_features, "trajectory": extract_traj_features}


@dataclass(frozen=True)
class LocalizerConfig:
    """Calibration-only standardization statistics plus RBF bandwidth."""

    mean: np.ndarray
    std: np.ndarray
    bandwidth: float

    @classmethod
    def from_features(cls, features, bandwidth=None):
        features = as_float_array(features, "features", min_ndim=2)
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        z = (features - mean) / std
        if bandwidth is None:
            d = pdist(z) if len(z) > 1 else np.array([])
            bandwidth = float(np.median(d)) if d.size and np.median(d) > 0 else 1.0
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        return cls(mean, std, float(bandwidth))

    def standardize(self, features):
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


def rbf_weights(cal_z, query_z, bandwidth):
    """Normalized RBF weights; ``(weights, fallback)`` where fallback marks
    total underflow replaced by uniform weights."""
    d2 = np.sum((cal_z - query_z) ** 2, axis=1)
    w = np.exp(-d2 / (2.0 * bandwidth**2))
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        return np.full(len(d2), 1.0 / len(d2)), True
    return w / total, False


def local_threshold(scores, cal_features, query_features, alpha, cfg, return_flag=False):
    """Weighted ``1 - alpha`` quantile of calibration scores with RBF weights
    centred at the query's standardized features."""
    alpha = check_alpha(alpha)
    cal_z = cfg.standardize(cal_features)
    q_z = cfg.standardize(query_features)
    w, fallback = rbf_weights(cal_z, q_z, cfg.bandwidth)
    tau = weighted_quantile(scores, w, 1.0 - alpha)
    return (tau, fallback) if return_flag else tau


class LocalizedCalibrator(BaseEstimator):
    """Input-dependent conformal thresholds from similarity-weighted
    calibration scores.

    Parameters
    ----------
    score : ScoreModel
    features : {"field", "trajectory"} or callable
        Feature map applied to the localizing variable (the input field for
        ``"field"``, the prediction for ``"trajectory"``).
    bandwidth : float or None
        RBF bandwidth on standardized features; ``None`` uses the median
        pairwise distance of calibration features.
    """

    def __init__(self, score, features="field", bandwidth=None):
        self.score = score
        self.features = features
        self.bandwidth = bandwidth

    def _featurize(self, z):
        fn = FEATURE_EXTRACTORS[self.features] if isinstance(self.features, str) else self.features
        return np.stack([fn(zi) for zi in z])

    def fit(self, y_hat, y, local_vars=None):
        """``local_vars`` defaults to ``y_hat`` (geometry-only localization)."""
        self.scores_ = np.atleast_1d(self.score.evaluate(y_hat, y)).ravel()
        z = y_hat if local_vars is None else local_vars
        self.features_ = self._featurize(z)
        self.config_ = LocalizerConfig.from_features(self.features_, self.bandwidth)
        return self

    def threshold(self, alpha, local_var, return_flag=False):
        check_is_fitted(self, "config_")
        q = self._featurize([local_var])[0]
        return local_threshold(
            self.scores_, self.features_, q, alpha, self.config_, return_flag=return_flag
        )
