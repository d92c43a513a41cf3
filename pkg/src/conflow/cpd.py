"""Conformal predictive distributions supported on conformal boundaries.

A sample is drawn by picking a level ``alpha ~ pi`` and a start ``y0 ~ mu``,
then flowing ``y0`` onto the boundary of the level-``alpha`` conformal set.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import DegenerateGradient, as_float_array
from .calibration import Filtration
from .flow import OK, FlowOptions, integrate_batch
from .numerics import RngStream


@dataclass(frozen=True)
class MixingMeasure:
    """Distribution ``pi`` over miscoverage levels in (0, 1)."""

    kind: str
    a: float = 0.0
    b: float = 1.0
    levels: tuple = ()
    masses: tuple = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "range", "grid"):
            raise ValueError(f"unknown mixing measure kind {self.kind!r}")
        if self.kind == "range" and not 0.0 <= self.a < self.b <= 1.0:
            raise ValueError("range bounds must satisfy 0 <= a < b <= 1")
        if self.kind == "grid":
            lv = np.asarray(self.levels, dtype=np.float64)
            ms = np.asarray(self.masses, dtype=np.float64)
            if lv.size == 0 or lv.shape != ms.shape:
                raise ValueError("grid needs matching nonempty levels and masses")
            if np.any((lv <= 0) | (lv >= 1)):
                raise ValueError("grid levels must lie in (0, 1)")
            if np.any(ms < 0) or abs(ms.sum() - 1.0) > 1e-9:
                raise ValueError("grid masses must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def uniform_range(cls, a, b):
        return cls("range", a=float(a), b=float(b))

    @classmethod
    def grid(cls, levels, masses=None):
        levels = tuple(float(v) for v in np.atleast_1d(levels))
        if masses is None:
            masses = (1.0 / len(levels),) * len(levels)
        return cls("grid", levels=levels, masses=tuple(float(m) for m in masses))

    @classmethod
    def point(cls, level):
        return cls.grid([level], [1.0])

    def sample(self, rng):
        if self.kind == "grid":
            return float(rng.choice(np.asarray(self.levels), p=np.asarray(self.masses)))
        lo, hi = (0.0, 1.0) if self.kind == "uniform" else (self.a, self.b)
        while True:
            u = float(rng.uniform(lo, hi))
            if 0.0 < u < 1.0:
                return u

    def mass_at_or_above(self, beta):
        """``pi([beta, 1))``."""
        if self.kind == "grid":
            lv = np.asarray(self.levels)
            return float(np.asarray(self.masses)[lv >= beta].sum())
        lo, hi = (0.0, 1.0) if self.kind == "uniform" else (self.a, self.b)
        return float(np.clip((hi - max(beta, lo)) / (hi - lo), 0.0, 1.0))


def sample_alpha(pi, rng):
    return pi.sample(rng)


@dataclass(frozen=True)
class BaseMeasure:
    """Distribution ``mu`` of flow starting points.

    ``empirical`` resamples calibration targets (plus optional Gaussian
    jitter), ``gaussian`` perturbs the prediction and ``provided`` resamples a
    fixed bank.
    """

    kind: str
    bank: np.ndarray = None
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("empirical", "gaussian", "provided"):
            raise ValueError(f"unknown base measure kind {self.kind!r}")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")
        if self.kind != "gaussian" and (self.bank is None or len(self.bank) == 0):
            raise ValueError(f"{self.kind} base measure needs a nonempty sample bank")

    @classmethod
    def empirical(cls, targets, jitter=0.0):
        return cls("empirical", np.asarray(targets, dtype=np.float64), float(jitter))

    @classmethod
    def gaussian(cls, scale):
        return cls("gaussian", None, float(scale))

    @classmethod
    def provided(cls, samples):
        return cls("provided", np.asarray(samples, dtype=np.float64))

    def sample(self, rng, y_hat):
        if self.kind == "gaussian":
            return y_hat + self.scale * rng.standard_normal(np.shape(y_hat))
        y0 = self.bank[int(rng.integers(len(self.bank)))].copy()
        if self.scale > 0:
            y0 = y0 + self.scale * rng.standard_normal(y0.shape)
        return y0


@dataclass
class CPDSpec:
    score: object
    filtration: Filtration
    base: BaseMeasure
    mixing: MixingMeasure
    y_hat: np.ndarray
    flow_options: FlowOptions = field(default_factory=FlowOptions)


@dataclass
class CPDSamples:
    points: np.ndarray
    alpha: np.ndarray
    tau: np.ndarray
    clamped: np.ndarray
    converged: np.ndarray
    scores: np.ndarray
    status: np.ndarray

    @property
    def failure_rate(self):
        return float(np.mean(~self.converged))


def sample_cpd(spec, M, root_seed=0, raise_on_failure=False):
    """Draw ``M`` samples; sample ``m`` uses stream ``(root_seed, m)``."""
    M = int(M)
    if M < 1:
        raise ValueError("M must be at least 1")
    y_hat = as_float_array(spec.y_hat, "y_hat")
    streams = [RngStream(root_seed, m) for m in range(M)]
    alphas = np.empty(M)
    y0 = np.empty((M,) + y_hat.shape)
    for m, stream in enumerate(streams):
        rng = stream.generator()
        alphas[m] = spec.mixing.sample(rng)
        y0[m] = spec.base.sample(rng, y_hat)
    tau, clamped = spec.filtration.thresholds(alphas)
    res = integrate_batch(spec.score, y_hat[None], y0, tau, spec.flow_options, streams)
    if raise_on_failure:
        bad = np.flatnonzero(res.status != OK)
        if bad.size:
            raise DegenerateGradient(f"flow failed for sample {bad[0]}", index=int(bad[0]))
    scores = np.asarray(spec.score._value_grad(np.broadcast_to(y_hat, y0.shape), res.terminal)[0])
    return CPDSamples(res.terminal, alphas, tau, clamped, res.converged, scores, res.status)


@dataclass
class AuditRow:
    beta: float
    coverage: float
    target: float
    n_used: int


def coverage_audit(scores, filtration, betas, mixing, tol=1e-6, exclude=None):
    """Empirical ``P(S <= tau_beta + tol)`` next to the analytic ``pi([beta, 1))``.

    ``exclude`` optionally masks samples (e.g. clamped or unconverged ones).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if exclude is not None:
        scores = scores[~np.asarray(exclude, dtype=bool)]
    rows = []
    for beta in np.atleast_1d(betas):
        tau_b, _ = filtration.threshold(float(beta))
        cov = float(np.mean(scores <= tau_b + tol)) if scores.size else float("nan")
        rows.append(AuditRow(float(beta), cov, mixing.mass_at_or_above(float(beta)), scores.size))
    return rows


class ConformalPredictiveDistribution(BaseEstimator):
    """Boundary-supported predictive distribution around a prediction.

    Parameters
    ----------
    score : ScoreModel
    mixing : MixingMeasure or None
        Level distribution; ``None`` means uniform on (0, 1).
    base : {"empirical", "gaussian"}
        Starting-point distribution: calibration targets or a Gaussian
        around the prediction with standard deviation ``jitter``.
    jitter : float
    """

    def __init__(self, score, mixing=None, base="empirical", jitter=0.0, tol=1e-6):
        self.score = score
        self.mixing = mixing
        self.base = base
        self.jitter = jitter
        self.tol = tol

    def fit(self, y_hat, y):
        y = as_float_array(y, "y")
        self.filtration_ = Filtration.from_scores(np.atleast_1d(self.score.evaluate(y_hat, y)))
        self.targets_ = y
        return self

    def spec(self, y_hat):
        check_is_fitted(self, "filtration_")
        if self.base == "empirical":
            base = BaseMeasure.empirical(self.targets_, self.jitter)
        elif self.base == "gaussian":
            base = BaseMeasure.gaussian(self.jitter)
        else:
            raise ValueError(f"unknown base {self.base!r}")
        return CPDSpec(
            self.score,
            self.filtration_,
            base,
            self.mixing or MixingMeasure.uniform(),
            np.asarray(y_hat, dtype=np.float64),
            FlowOptions(tol=self.tol),
        )

    def sample(self, y_hat, n_samples=1, random_state=0):
        return sample_cpd(self.spec(y_hat), n_samples, random_state)
