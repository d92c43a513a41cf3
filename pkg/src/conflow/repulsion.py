"""Tangent repulsion: spread boundary points along a level set.

Each round pushes every point away from the others with inverse-distance
forces, keeps only the component tangent to the level set, takes a step and
then pulls the point back onto the set with Newton polish.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConvergenceFailure, as_float_array
from .flow import FlowOptions, polish_batch
from .numerics import RngStream
from .scores import DEGENERATE_GRAD_SQ


@dataclass(frozen=True)
class RepulsionOptions:
    steps: int = 50
    step_size: float = 0.1
    floor: float = 1e-9

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.floor > 0:
            raise ValueError("floor must be positive")


@dataclass
class RepulsionResult:
    points: np.ndarray
    min_distance_trace: np.ndarray
    coincident_pairs: int
    polish_steps_used: int


def repulsion_scores(batch, floor=1e-9, rng=None):
    """``R_i = sum_{j != i} (y_i - y_j) / ||y_i - y_j||^2`` over the leading axis.

    Pairs closer than ``floor`` contribute a random antisymmetric unit
    direction scaled by ``1 / floor``. Returns ``(R, n_coincident_pairs)``.
    """
    batch = as_float_array(batch, "batch")
    B = batch.shape[0] if batch.ndim else 0
    if B < 2:
        raise ValueError("repulsion needs at least two points")
    Y = batch.reshape(B, -1)
    Y = Y - Y.mean(axis=0)
    d2 = cdist(Y, Y, "sqeuclidean")
    near = d2 < floor**2
    np.fill_diagonal(near, False)
    with np.errstate(divide="ignore"):
        W = np.where(near | (d2 == 0), 0.0, 1.0 / d2)
    np.fill_diagonal(W, 0.0)
    R = W.sum(axis=1)[:, None] * Y - W @ Y
    pairs = np.argwhere(np.triu(near))
    if len(pairs):
        rng = rng if rng is not None else RngStream(0, 0).generator()
        for i, j in pairs:
            u = rng.standard_normal(Y.shape[1])
            u /= np.linalg.norm(u)
            R[i] += u / floor
            R[j] -= u / floor
    return R.reshape(batch.shape), len(pairs)


def tangent_project(R, g):
    """Remove the component of ``R`` along ``g`` (row-wise for batches)."""
    R = np.asarray(R, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    single = R.shape == g.shape and R.ndim == 1
    Rb = R.reshape(1, -1) if single else R.reshape(R.shape[0], -1)
    gb = g.reshape(1, -1) if single else g.reshape(g.shape[0], -1)
    gsq = np.sum(gb**2, axis=1)
    if np.any(gsq < DEGENERATE_GRAD_SQ):
        raise ValueError("cannot project onto the tangent of a vanishing gradient")
    v = Rb.copy()
    # a second pass removes the round-off left by the first
    for _ in range(2):
        v = v - (np.sum(v * gb, axis=1) / gsq)[:, None] * gb
    return v.reshape(R.shape)


def min_pairwise_distance(batch):
    Y = np.asarray(batch, dtype=np.float64)
    return float(pdist(Y.reshape(len(Y), -1)).min())


def repulse(batch, model, y_hat, tau, opts=None, flow_opts=None, rng=None):
    """Run ``opts.steps`` rounds of tangent repulsion on boundary points.

    Every member must start within ``flow_opts.tol`` of the level set and is
    returned on it after each round.
    """
    opts = opts or RepulsionOptions()
    flow_opts = flow_opts or FlowOptions()
    y = as_float_array(batch, "batch").copy()
    B = y.shape[0]
    if np.ndim(tau) != 0:
        raise ValueError("a repulsion batch lives on a single level set; tau must be scalar")
    tau = float(tau)
    y_hat = np.broadcast_to(as_float_array(y_hat, "y_hat"), y.shape)
    rng = rng if rng is not None else RngStream(0, 0).generator()

    s = model._value_grad(y_hat, y)[0]
    off = np.flatnonzero(np.abs(s - tau) > flow_opts.tol)
    if off.size:
        raise ValueError(f"member {off[0]} is not on the level set")

    trace = [min_pairwise_distance(y)]
    coincident = 0
    polish_total = 0
    for _ in range(opts.steps):
        R, n_near = repulsion_scores(y, opts.floor, rng)
        coincident += n_near
        g = model._value_grad(y_hat, y)[1]
        y = y + opts.step_size * tangent_project(R, g)
        y, s, used, stuck, _ = polish_batch(
            model, y_hat, y, tau, flow_opts.tol, flow_opts.max_polish_steps
        )
        polish_total += int(used.sum())
        failed = np.flatnonzero((np.abs(s - tau) > flow_opts.tol) | stuck | ~np.isfinite(s))
        if failed.size:
            raise ConvergenceFailure(
                f"correction back to the level set failed for member {failed[0]}",
                index=int(failed[0]),
            )
        trace.append(min_pairwise_distance(y))
    return RepulsionResult(y, np.array(trace), coincident, polish_total)


class TangentRepulsion(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`repulse` for a fixed level ``tau``."""

    def __init__(self, score, tau, steps=50, step_size=0.1, floor=1e-9, tol=1e-6, random_state=0):
        self.score = score
        self.tau = tau
        self.steps = steps
        self.step_size = step_size
        self.floor = floor
        self.tol = tol
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def transform(self, batch, y_hat=None):
        if y_hat is None:
            raise ValueError("transform needs the prediction y_hat")
        res = repulse(
            batch,
            self.score,
            y_hat,
            self.tau,
            RepulsionOptions(self.steps, self.step_size, self.floor),
            FlowOptions(tol=self.tol),
            RngStream(self.random_state, 0).generator(),
        )
        return res.points
