"""Sampling conformal prediction set boundaries with score-controlled flows."""

from ._validation import ConvergenceFailure, DegenerateGradient, NonFiniteState
from .bands import Band, RiskControllingBand, calibrate_eta, envelope, min_inflation, pointwise_risk
from .calibration import (
    ConformalCalibrator,
    Filtration,
    LocalizedCalibrator,
    conformal_threshold,
    local_threshold,
)
from .cpd import (
    BaseMeasure,
    ConformalPredictiveDistribution,
    CPDSpec,
    MixingMeasure,
    coverage_audit,
    sample_alpha,
    sample_cpd,
)
from .datagen import Dataset, LinearPredictor, fit_ridge
from .flow import (
    BoundarySampler,
    FlowOptions,
    FlowResult,
    auto_lambda,
    hitting_time,
    integrate_batch,
    integrate_to_boundary,
    velocity,
)
from .metrics import MetricConfig, energy_distance, lsd, patch_mmd, vendi_ratio, vendi_score
from .numerics import RngStream
from .repulsion import RepulsionOptions, TangentRepulsion, repulse, repulsion_scores, tangent_project
from .scores import SCORE_FAMILIES, make_score

__version__ = "0.1.0"
