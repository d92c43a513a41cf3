"""Score-controlled flow that carries points onto a conformal level set.

The velocity is the minimum-norm field whose score error obeys
``d/dt (S - tau) = -lam (S - tau)``::

    v(y) = -lam (S(y) - tau) grad S(y) / ||grad S(y)||^2

Integration uses fixed-step classical RK4 over ``[0, horizon]`` followed by
polish iterations (explicit Euler steps with ``lam * dt = 1``, i.e. scalar
Newton steps on the score) until ``|S - tau| <= tol``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import DegenerateGradient, NonFiniteState, as_float_array, check_alpha
from .calibration import ConformalCalibrator
from .numerics import RngStream, parallel_map
from .scores import DEGENERATE_GRAD_SQ

OK, DEGENERATE, NONFINITE = 0, 1, 2


@dataclass(frozen=True)
class FlowOptions:
    steps: int = 20
    horizon: float = 1.0
    tol: float = 1e-6
    max_polish_steps: int = 200
    jitter_sigma: float = 1e-6
    jitter_retries: int = 3

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.max_polish_steps < 0 or self.jitter_retries < 0:
            raise ValueError("step budgets must be nonnegative")


@dataclass
class FlowResult:
    terminal: np.ndarray
    score_trace: np.ndarray
    converged: bool
    lambda_used: float
    polish_steps_used: int
    tau: float
    status: int = OK
    jitter_retries_used: int = 0

    @property
    def error_trace(self):
        return self.score_trace - self.tau

    @property
    def final_error(self):
        return abs(self.score_trace[-1] - self.tau)


@dataclass
class BatchFlowResult:
    """Per-member arrays for a batch of trajectories.

    ``rk_trace`` holds the score after each RK4 step (``steps + 1`` columns,
    starting at ``t = 0``); ``polish_traces[i]`` holds the scores after each
    polish iteration of member ``i``.
    """

    terminal: np.ndarray
    tau: np.ndarray
    rk_trace: np.ndarray
    polish_traces: list
    converged: np.ndarray
    lambda_used: np.ndarray
    polish_steps_used: np.ndarray
    status: np.ndarray
    jitter_retries_used: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.tau)

    @property
    def final_score(self):
        return np.array(
            [p[-1] if len(p) else r[-1] for p, r in zip(self.polish_traces, self.rk_trace)]
        )

    @property
    def final_error(self):
        return np.abs(self.final_score - self.tau)

    @property
    def rk_error(self):
        """``|S - tau|`` after the fixed RK4 phase, before polishing."""
        return np.abs(self.rk_trace[:, -1] - self.tau)

    def __getitem__(self, i):
        return FlowResult(
            terminal=self.terminal[i],
            score_trace=np.concatenate([self.rk_trace[i], self.polish_traces[i]]),
            converged=bool(self.converged[i]),
            lambda_used=float(self.lambda_used[i]),
            polish_steps_used=int(self.polish_steps_used[i]),
            tau=float(self.tau[i]),
            status=int(self.status[i]),
            jitter_retries_used=int(self.jitter_retries_used[i]),
        )

    @classmethod
    def concatenate(cls, parts):
        return cls(
            terminal=np.concatenate([p.terminal for p in parts]),
            tau=np.concatenate([p.tau for p in parts]),
            rk_trace=np.concatenate([p.rk_trace for p in parts]),
            polish_traces=[t for p in parts for t in p.polish_traces],
            converged=np.concatenate([p.converged for p in parts]),
            lambda_used=np.concatenate([p.lambda_used for p in parts]),
            polish_steps_used=np.concatenate([p.polish_steps_used for p in parts]),
            status=np.concatenate([p.status for p in parts]),
            jitter_retries_used=np.concatenate([p.jitter_retries_used for p in parts]),
        )


def auto_lambda(s0, tau, eps, horizon=1.0):
    """Rate that brings ``|S - tau|`` from ``|s0 - tau|`` down to ``eps`` at ``horizon``."""
    gap = abs(s0 - tau)
    if gap <= eps:
        return 0.0
    return math.log(gap / eps) / horizon


def hitting_time(s0, tau, eps, lam):
    """First time the exact flow reaches ``|S - tau| <= eps``."""
    gap = abs(s0 - tau)
    if gap <= eps:
        return 0.0
    if not lam > 0:
        raise ValueError("lambda must be positive when the start is outside the tolerance")
    return math.log(gap / eps) / lam


def _sumsq(g):
    return np.sum(g.reshape(g.shape[0], -1) ** 2, axis=1)


def _col(v, like):
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def _velocity_batch(model, y_hat, y, tau, lam):
    s, g = model._value_grad(y_hat, y)
    err = s - tau
    gsq = _sumsq(g)
    degenerate = (gsq < DEGENERATE_GRAD_SQ) & (err != 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where((err == 0) | degenerate, 0.0, -lam * err / gsq)
    return _col(coef, g) * g, s, degenerate


def velocity(model, y_hat, y, tau, lam, tol=0.0):
    """Minimum-norm score-controlling velocity at a single point."""
    y = as_float_array(y, "y")
    y_hat = np.broadcast_to(as_float_array(y_hat, "y_hat"), y.shape)
    v, s, degenerate = _velocity_batch(model, y_hat[None], y[None], np.array([tau]), lam)
    if degenerate[0] and abs(s[0] - tau) > tol:
        raise DegenerateGradient("score gradient vanishes away from the level set")
    return v[0]


def polish_batch(model, y_hat, y, tau, tol, max_steps, active=None):
    """Newton steps ``y <- y - (S - tau) g / ||g||^2`` until ``|S - tau| <= tol``.

    Returns ``(y, s, steps_used, stuck, traces)``; ``stuck`` marks members
    whose gradient vanished and ``traces[i]`` lists the scores after each step.
    """
    y = np.array(y, dtype=np.float64)
    B = y.shape[0]
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (B,))
    s, g = model._value_grad(y_hat, y)
    s = s.copy()
    if active is None:
        active = np.isfinite(s)
    active = active & (np.abs(s - tau) > tol)
    used = np.zeros(B, dtype=np.int64)
    stuck = np.zeros(B, dtype=bool)
    traces = [[] for _ in range(B)]
    idx = np.flatnonzero(active)
    g_i = g[idx]
    for _ in range(max_steps):
        if idx.size == 0:
            break
        gsq = _sumsq(g_i)
        bad = gsq < DEGENERATE_GRAD_SQ
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(bad, 0.0, -(s[idx] - tau[idx]) / gsq)
        y[idx] = y[idx] + _col(coef, g_i) * g_i
        s_new, g_new = model._value_grad(y_hat[idx], y[idx])
        s[idx] = s_new
        used[idx] += 1
        for j, i in enumerate(idx):
            traces[i].append(s_new[j])
        stuck[idx[bad]] = True
        keep = (np.abs(s_new - tau[idx]) > tol) & ~bad & np.isfinite(s_new)
        idx, g_i = idx[keep], g_new[keep]
    return y, s, used, stuck, [np.asarray(t, dtype=np.float64) for t in traces]


def _integrate_chunk(model, y_hat, y0, tau, opts, streams):
    B = y0.shape[0]
    y = y0.copy()
    status = np.zeros(B, dtype=np.int64)
    retries = np.zeros(B, dtype=np.int64)

    s, g = model._value_grad(y_hat, y)
    bad = (_sumsq(g) < DEGENERATE_GRAD_SQ) & (np.abs(s - tau) > opts.tol)
    gens = {}
    for attempt in range(opts.jitter_retries):
        if not bad.any():
            break
        for i in np.flatnonzero(bad):
            if i not in gens:
                gens[i] = streams[i].child(1).generator()
            y[i] = y[i] + opts.jitter_sigma * gens[i].standard_normal(y.shape[1:])
            retries[i] += 1
        idx = np.flatnonzero(bad)
        s_i, g_i = model._value_grad(y_hat[idx], y[idx])
        s[idx] = s_i
        still = (_sumsq(g_i) < DEGENERATE_GRAD_SQ) & (np.abs(s_i - tau[idx]) > opts.tol)
        bad[idx] = still
    status[bad] = DEGENERATE

    gap = np.abs(s - tau)
    with np.errstate(divide="ignore"):
        lam = np.where(gap > opts.tol, np.log(gap / opts.tol) / opts.horizon, 0.0)
    lam[status != OK] = 0.0

    h = opts.horizon / opts.steps
    trace = np.empty((B, opts.steps + 1))
    trace[:, 0] = s
    for k in range(opts.steps):
        k1, _, _ = _velocity_batch(model, y_hat, y, tau, lam)
        k2, _, _ = _velocity_batch(model, y_hat, y + 0.5 * h * k1, tau, lam)
        k3, _, _ = _velocity_batch(model, y_hat, y + 0.5 * h * k2, tau, lam)
        k4, _, _ = _velocity_batch(model, y_hat, y + h * k3, tau, lam)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        trace[:, k + 1] = model._value_grad(y_hat, y)[0]

    active = (np.abs(trace[:, -1] - tau) > opts.tol) & (status == OK) & np.isfinite(trace[:, -1])
    y, s, used, stuck, polish = polish_batch(
        model, y_hat, y, tau, opts.tol, opts.max_polish_steps, active=active
    )
    status[stuck] = DEGENERATE

    finite = np.all(np.isfinite(y.reshape(B, -1)), axis=1) & np.isfinite(s)
    status[~finite] = NONFINITE
    converged = (np.abs(s - tau) <= opts.tol) & (status == OK)
    return BatchFlowResult(
        terminal=y,
        tau=tau.copy(),
        rk_trace=trace,
        polish_traces=polish,
        converged=converged,
        lambda_used=lam,
        polish_steps_used=used,
        status=status,
        jitter_retries_used=retries,
    )


def integrate_batch(model, y_hat, y0, tau, opts=None, streams=None, chunk_size=512):
    """Integrate a batch of starting points ``y0`` (leading axis) to their
    level sets ``tau`` (scalar or per member).

    ``streams`` supplies one :class:`RngStream` per member for jitter; by
    default member ``i`` uses ``RngStream(0, i)``. Work is split into fixed
    chunks so results do not depend on the worker count.
    """
    opts = opts or FlowOptions()
    y0 = as_float_array(y0, "y0")
    y_hat = np.broadcast_to(as_float_array(y_hat, "y_hat"), y0.shape)
    B = y0.shape[0]
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (B,)).copy()
    if not np.all(np.isfinite(tau)):
        raise ValueError("tau must be finite")
    if streams is None:
        streams = [RngStream(0, i) for i in range(B)]
    bounds = [(a, min(a + chunk_size, B)) for a in range(0, B, chunk_size)]

    def run(bound):
        a, b = bound
        return _integrate_chunk(
            model, np.ascontiguousarray(y_hat[a:b]), y0[a:b].copy(), tau[a:b], opts, streams[a:b]
        )

    return BatchFlowResult.concatenate(parallel_map(run, bounds))


def integrate_to_boundary(model, y_hat, y0, tau, opts=None, rng=None):
    """Flow a single point ``y0`` onto ``{y : S(y_hat, y) = tau}``."""
    y0 = as_float_array(y0, "y0")
    stream = rng if rng is not None else RngStream(0, 0)
    res = integrate_batch(model, np.asarray(y_hat)[None], y0[None], tau, opts, [stream])[0]
    if res.status == DEGENERATE:
        raise DegenerateGradient("score gradient vanished after jitter retries", index=0)
    if res.status == NONFINITE:
        raise NonFiniteState("flow state left the finite range", index=0)
    return res


class BoundarySampler(TransformerMixin, BaseEstimator):
    """Maps starting points onto the boundary of the level-``alpha`` conformal set.

    ``fit`` calibrates the threshold on held-out pairs; ``transform`` flows
    each row of ``y0`` to the boundary around the matching row of ``y_hat``.
    """

    def __init__(self, score, alpha=0.1, steps=20, horizon=1.0, tol=1e-6, max_polish_steps=200):
        self.score = score
        self.alpha = alpha
        self.steps = steps
        self.horizon = horizon
        self.tol = tol
        self.max_polish_steps = max_polish_steps

    def _options(self):
        return FlowOptions(self.steps, self.horizon, self.tol, self.max_polish_steps)

    def fit(self, y_hat, y):
        check_alpha(self.alpha)
        self.calibrator_ = ConformalCalibrator(self.score).fit(y_hat, y)
        self.tau_, self.clamped_ = self.calibrator_.threshold(self.alpha)
        return self

    def flow(self, y0, y_hat, root_seed=0):
        check_is_fitted(self, "tau_")
        y0 = as_float_array(y0, "y0")
        streams = [RngStream(root_seed, i) for i in range(len(y0))]
        return integrate_batch(self.score, y_hat, y0, self.tau_, self._options(), streams)

    def transform(self, y0, y_hat=None):
        if y_hat is None:
            raise ValueError("transform needs the predictions y_hat")
        return self.flow(y0, y_hat).terminal
