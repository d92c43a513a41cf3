"""Pointwise risk-controlling prediction bands built from boundary samples.

An envelope ``[l, u]`` of coordinatewise sample quantiles is widened by an
inflation ``eta`` chosen on held-out data so that, with probability at least
``1 - alpha``, at most a fraction ``delta`` of coordinates fall outside.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, check_alpha, check_same_shape
from .calibration import Filtration
from .numerics import empirical_quantile, parallel_map


@dataclass(frozen=True)
class Band:
    lower: np.ndarray
    upper: np.ndarray
    eta_lo: float = 0.0
    eta_hi: float = 0.0

    def __post_init__(self):
        check_same_shape(self.lower, self.upper, ("lower", "upper"))
        if self.eta_lo < 0 or self.eta_hi < 0:
            raise ValueError("inflations must be nonnegative")
        if np.any(np.asarray(self.lower) - self.eta_lo > np.asarray(self.upper) + self.eta_hi):
            raise ValueError("lower bound exceeds upper bound")

    def inflated(self, eta_lo, eta_hi=None):
        return Band(self.lower, self.upper, eta_lo, eta_lo if eta_hi is None else eta_hi)

    @property
    def bounds(self):
        return np.asarray(self.lower) - self.eta_lo, np.asarray(self.upper) + self.eta_hi

    @property
    def width(self):
        lo, hi = self.bounds
        return hi - lo


def envelope(samples, lo_q, hi_q):
    """Coordinatewise empirical quantiles of a ``(M, ...)`` sample bank."""
    samples = as_float_array(samples, "samples")
    if samples.ndim < 1 or samples.shape[0] < 2:
        raise ValueError("an envelope needs at least two samples")
    if not 0.0 < lo_q < hi_q < 1.0:
        raise ValueError("quantiles must satisfy 0 < lo_q < hi_q < 1")
    return empirical_quantile(samples, lo_q, axis=0), empirical_quantile(samples, hi_q, axis=0)


def _excesses(band, y):
    """Per-coordinate distances below and above the band's (inflated) bounds."""
    y = as_float_array(y, "y")
    check_same_shape(band.lower, y, ("band", "y"))
    lo, hi = band.bounds
    return np.maximum(lo - y, 0.0), np.maximum(y - hi, 0.0)


def pointwise_risk(band, y, eta=0.0):
    """Fraction of coordinates of ``y`` outside the band widened by a further ``eta``."""
    below, above = _excesses(band, y)
    return float(np.mean((below > eta) | (above > eta)))


def _kth_smallest(excess, delta):
    p = excess.size
    k = math.ceil((1.0 - delta) * p - 1e-9)
    return float(np.partition(excess.ravel(), k - 1)[k - 1])


def min_inflation(band, y, delta=0.0):
    """Smallest extra ``eta >= 0`` whose pointwise risk is at most ``delta``."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    below, above = _excesses(band, y)
    return _kth_smallest(np.maximum(below, above), delta)


def min_inflation_sided(band, y, delta=0.0):
    """``(eta_lo, eta_hi)``: per-side minimal inflations."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    below, above = _excesses(band, y)
    return _kth_smallest(below, delta), _kth_smallest(above, delta)


def calibrate_eta(bands, ys, delta=0.0, alpha=0.1, mode="symmetric"):
    """Conformal order statistic of per-sample minimal inflations.

    Returns ``(eta_lo, eta_hi)``; in ``"asymmetric"`` mode each side uses
    level ``alpha / 2`` on its own excesses.
    """
    alpha = check_alpha(alpha)
    if len(bands) == 0 or len(bands) != len(ys):
        raise ValueError("need a nonempty set of matching bands and calibration targets")
    if mode == "symmetric":
        etas = parallel_map(lambda bi: min_inflation(bi[0], bi[1], delta), zip(bands, ys))
        eta, _ = Filtration.from_scores(etas).threshold(alpha)
        return eta, eta
    if mode == "asymmetric":
        sided = np.array(parallel_map(lambda bi: min_inflation_sided(bi[0], bi[1], delta), zip(bands, ys)))
        eta_lo, _ = Filtration.from_scores(sided[:, 0]).threshold(alpha / 2)
        eta_hi, _ = Filtration.from_scores(sided[:, 1]).threshold(alpha / 2)
        return eta_lo, eta_hi
    raise ValueError(f"unknown mode {mode!r}")


class RiskControllingBand(BaseEstimator):
    """Reconformalized envelope bands.

    ``fit`` takes, for each calibration input, a bank of boundary samples
    ``(n, M, ...)`` and the observed targets ``(n, ...)``; ``predict`` maps
    sample banks for new inputs to inflated ``(lower, upper)`` arrays.
    """

    def __init__(self, alpha=0.1, delta=0.0, mode="symmetric", lo_q=None, hi_q=None):
        self.alpha = alpha
        self.delta = delta
        self.mode = mode
        self.lo_q = lo_q
        self.hi_q = hi_q

    def _quantiles(self):
        lo = self.alpha / 2 if self.lo_q is None else self.lo_q
        hi = 1 - self.alpha / 2 if self.hi_q is None else self.hi_q
        return lo, hi

    def envelopes(self, sample_banks):
        lo_q, hi_q = self._quantiles()
        return [Band(*envelope(bank, lo_q, hi_q)) for bank in sample_banks]

    def fit(self, sample_banks, y):
        check_alpha(self.alpha)
        bands = self.envelopes(sample_banks)
        self.eta_lo_, self.eta_hi_ = calibrate_eta(bands, y, self.delta, self.alpha, self.mode)
        return self

    def predict_bands(self, sample_banks):
        check_is_fitted(self, "eta_lo_")
        return [b.inflated(self.eta_lo_, self.eta_hi_) for b in self.envelopes(sample_banks)]

    def predict(self, sample_banks):
        bounds = [b.bounds for b in self.predict_bands(sample_banks)]
        return np.stack([lo for lo, _ in bounds]), np.stack([hi for _, hi in bounds])

    def score(self, sample_banks, y):
        """Fraction of targets whose pointwise risk is at most ``delta``."""
        bands = self.predict_bands(sample_banks)
        return float(np.mean([pointwise_risk(b, yi) <= self.delta for b, yi in zip(bands, y)]))
