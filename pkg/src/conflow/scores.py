"""Nonconformity score families with analytic gradients in the candidate output.

Every score is an sklearn-style estimator. ``evaluate(y_hat, y)`` and
``gradient(y_hat, y)`` accept either a single output or a batch with leading
axes; ``y_hat`` broadcasts against ``y``. Gradients are taken with respect to
``y`` with ``y_hat`` held fixed, which is what the boundary flow needs.

Output layouts: vectors ``(D,)``, fields ``(H, W, C)``, trajectories ``(T, 2)``.
"""

import math

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import DegenerateGradient, as_float_array, is_power_of_two
from .numerics import dwt2, idwt2, mad

EPS_NUM = 1e-8
ARCCOS_CLIP = 1.0 - 1e-7
DEGENERATE_GRAD_SQ = 1e-12


class ScoreModel(BaseEstimator):
    """Base class: subclasses implement ``_value_grad(r_hat, y)`` on batches."""

    event_ndim = 1
    requires_fit = False
    norm_based = True

    def fit(self, y_hat=None, y=None):
        return self

    def _check_fitted(self):
        if self.requires_fit and not getattr(self, "is_fitted_", False):
            raise NotFittedError(f"{type(self).__name__} must be fitted before use")

    def _check_event(self, event_shape):
        if len(event_shape) != self.event_ndim:
            raise ValueError(
                f"{type(self).__name__} expects {self.event_ndim}-d outputs, got shape {event_shape}"
            )

    def _batch(self, y_hat, y):
        self._check_fitted()
        y = as_float_array(y, "y")
        y_hat = as_float_array(y_hat, "y_hat")
        if y.ndim < self.event_ndim:
            raise ValueError(f"y must have at least {self.event_ndim} dimensions")
        event = y.shape[y.ndim - self.event_ndim:]
        self._check_event(event)
        if y_hat.shape[y_hat.ndim - self.event_ndim:] != event:
            raise ValueError(f"shape mismatch: y_hat {y_hat.shape} vs y {y.shape}")
        shape = np.broadcast_shapes(y.shape, y_hat.shape)
        lead = shape[: len(shape) - self.event_ndim]
        yb = np.broadcast_to(y, shape).reshape((-1,) + event)
        yhb = np.broadcast_to(y_hat, shape).reshape((-1,) + event)
        return yhb, yb, lead, shape

    def value_and_grad(self, y_hat, y):
        """Scores and gradients, shaped like the broadcast batch."""
        yhb, yb, lead, shape = self._batch(y_hat, y)
        s, g = self._value_grad(yhb, yb)
        return s.reshape(lead), g.reshape(shape)

    def evaluate(self, y_hat, y):
        yhb, yb, lead, _ = self._batch(y_hat, y)
        s = self._value(yhb, yb)
        return float(s[0]) if lead == () else s.reshape(lead)

    def gradient(self, y_hat, y, strict=False):
        """Analytic gradient with respect to ``y``.

        With ``strict=True`` a gradient whose squared norm is below 1e-12
        raises :class:`DegenerateGradient`.
        """
        _, g = self.value_and_grad(y_hat, y)
        if strict:
            axes = tuple(range(g.ndim - self.event_ndim, g.ndim))
            bad = np.sum(g * g, axis=axes) < DEGENERATE_GRAD_SQ
            if np.any(bad):
                raise DegenerateGradient("score gradient vanishes", index=np.flatnonzero(bad))
        return g

    def _value(self, y_hat, y):
        return self._value_grad(y_hat, y)[0]

    def __call__(self, y_hat, y):
        return self.evaluate(y_hat, y)


def _sum_event(a, ndim):
    return a.reshape(a.shape[0], -1).sum(axis=1) if ndim else a


def _bcast(v, like):
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


class _RMSScore(ScoreModel):
    def _value_grad(self, y_hat, y):
        r = y - y_hat
        n = r[0].size
        s = np.sqrt(_sum_event(r * r, 1) / n)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(_bcast(s, r) > 0, r / (n * _bcast(s, r)), 0.0)
        return s, g


class L2Score(_RMSScore):
    """Root mean squared residual over the ``D`` output coordinates."""


class FieldL2Score(_RMSScore):
    """Global RMS error over an ``(H, W, C)`` field."""

    event_ndim = 3


class TrajL2Score(_RMSScore):
    """RMS position error over a ``(T, 2)`` trajectory."""

    event_ndim = 2


class L1Score(ScoreModel):
    """Mean absolute residual. Subgradient uses ``sign(0) = 0``."""

    def _value_grad(self, y_hat, y):
        r = y - y_hat
        n = r.shape[1]
        return np.abs(r).sum(axis=1) / n, np.sign(r) / n


class HuberScore(ScoreModel):
    def __init__(self, delta=1.0):
        self.delta = delta

    def _value_grad(self, y_hat, y):
        d = float(self.delta)
        r = y - y_hat
        a = np.abs(r)
        quad = a < d
        per = np.where(quad, 0.5 * r * r, d * (a - 0.5 * d))
        n = r.shape[1]
        g = np.where(quad, r, d * np.sign(r)) / n
        return per.sum(axis=1) / n, g


class KNNScore(ScoreModel):
    """Mean squared distance from the residual to its ``k`` nearest
    calibration residuals. The neighbour set is frozen within one gradient
    evaluation."""

    requires_fit = True

    def __init__(self, k=10):
        self.k = k

    def fit(self, y_hat, y=None):
        """Store the residual bank ``y - y_hat`` (or ``y_hat`` itself if ``y`` is None)."""
        bank = as_float_array(y_hat, "residuals", min_ndim=2)
        if y is not None:
            bank = as_float_array(y, "y") - bank
        if bank.shape[0] < self.k:
            raise ValueError(f"residual bank has {bank.shape[0]} rows, fewer than k={self.k}")
        self.bank_ = bank.reshape(bank.shape[0], -1)
        self.is_fitted_ = True
        return self

    def _value_grad(self, y_hat, y):
        r = y - y_hat
        if r.shape[1] != self.bank_.shape[1]:
            raise ValueError("residual dimension does not match the bank")
        k = int(self.k)
        d2 = (
            np.sum(r * r, axis=1)[:, None]
            - 2.0 * r @ self.bank_.T
            + np.sum(self.bank_**2, axis=1)[None, :]
        )
        nn = np.argpartition(d2, k - 1, axis=1)[:, :k]
        neigh = self.bank_[nn]
        diff = r[:, None, :] - neigh
        s = np.sum(diff * diff, axis=(1, 2)) / k
        g = 2.0 * diff.mean(axis=1)
        return s, g


class GaussianNLLScore(ScoreModel):
    """Negative log-likelihood of the residual under a fitted diagonal Gaussian."""

    requires_fit = True
    norm_based = False

    def __init__(self, eps=EPS_NUM):
        self.eps = eps

    def fit(self, y_hat, y=None):
        r = as_float_array(y_hat, "residuals", min_ndim=2)
        if y is not None:
            r = as_float_array(y, "y") - r
        if r.shape[0] < 2:
            raise ValueError("need at least two residuals")
        self.mean_ = r.mean(axis=0)
        self.var_ = np.maximum(r.var(axis=0), self.eps)
        self.is_fitted_ = True
        return self

    def _value_grad(self, y_hat, y):
        z = (y - y_hat) - self.mean_
        s = 0.5 * np.sum(z * z / self.var_ + np.log(2 * np.pi * self.var_), axis=1)
        return s, z / self.var_


class StudentTNLLScore(ScoreModel):
    """Negative log-density of a multivariate Student-t residual model with
    fixed degrees of freedom and moment-matched diagonal scale."""

    requires_fit = True
    norm_based = False

    def __init__(self, nu=3.0, eps=EPS_NUM):
        self.nu = nu
        self.eps = eps

    def fit(self, y_hat, y=None):
        if not self.nu > 2:
            raise ValueError("moment matching needs nu > 2")
        r = as_float_array(y_hat, "residuals", min_ndim=2)
        if y is not None:
            r = as_float_array(y, "y") - r
        if r.shape[0] < 2:
            raise ValueError("need at least two residuals")
        nu = float(self.nu)
        self.mean_ = r.mean(axis=0)
        self.scale_ = np.maximum(r.var(axis=0) * (nu - 2.0) / nu, self.eps)
        d = r.shape[1]
        self.log_norm_ = (
            -gammaln((nu + d) / 2.0)
            + gammaln(nu / 2.0)
            + 0.5 * d * math.log(nu * math.pi)
            + 0.5 * np.sum(np.log(self.scale_))
        )
        self.is_fitted_ = True
        return self

    def _value_grad(self, y_hat, y):
        nu = float(self.nu)
        z = (y - y_hat) - self.mean_
        d = z.shape[1]
        q = np.sum(z * z / self.scale_, axis=1)
        s = self.log_norm_ + 0.5 * (nu + d) * np.log1p(q / nu)
        g = ((nu + d) / (nu + q))[:, None] * z / self.scale_
        return s, g


def fit_residual_model(family, residuals, **params):
    """Fit a residual-based score (``"knn"``, ``"gauss"`` or ``"student_t"``)."""
    cls = {"knn": KNNScore, "gauss": GaussianNLLScore, "student_t": StudentTNLLScore}[family]
    return cls(**params).fit(residuals)


# --- field scores -----------------------------------------------------------


def _check_field_pow2(shape):
    if not (is_power_of_two(shape[1]) and is_power_of_two(shape[2])):
        raise ValueError(f"spectral scores need power-of-two spatial dims, got {shape[1:3]}")


def _power(field):
    F = np.fft.fft2(field, axes=(1, 2))
    return F, F.real**2 + F.imag**2


def _power_adjoint(weights, F):
    """Gradient of ``sum(weights * |F|^2)`` with respect to the real field."""
    hw = F.shape[1] * F.shape[2]
    return 2.0 * hw * np.real(np.fft.ifft2(weights * F, axes=(1, 2)))


class SobolevScore(ScoreModel):
    """H1-like discrepancy: residual energy plus periodic first differences."""

    event_ndim = 3

    def __init__(self, lam=1.0):
        self.lam = lam

    def _value_grad(self, y_hat, y):
        e = y - y_hat
        n = e[0].size
        dx = np.roll(e, -1, axis=2) - e
        dy = np.roll(e, -1, axis=1) - e
        lam = float(self.lam)
        s2 = (_sum_event(e * e, 1) + lam * (_sum_event(dx * dx, 1) + _sum_event(dy * dy, 1))) / n
        s = np.sqrt(s2)
        adj = e + lam * ((np.roll(dx, 1, axis=2) - dx) + (np.roll(dy, 1, axis=1) - dy))
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(_bcast(s, e) > 0, adj / (n * _bcast(s, e)), 0.0)
        return s, g


class PSDScore(ScoreModel):
    """Unnormalized l1 distance between channel-summed power spectra.

    Uses the full 2-D DFT grid; frequencies where both spectra coincide get
    subgradient zero.
    """

    event_ndim = 3

    def _value_grad(self, y_hat, y):
        _check_field_pow2(y.shape)
        Fy, Py = _power(y)
        _, Ph = _power(y_hat)
        diff = Ph.sum(axis=3) - Py.sum(axis=3)
        s = np.abs(diff).sum(axis=(1, 2))
        g = -_power_adjoint(np.sign(diff)[..., None], Fy)
        return s, g


class WaveletScore(ScoreModel):
    """Sum over channels and scales of the mean RMS db2 detail magnitude."""

    event_ndim = 3

    def __init__(self, depth=3):
        self.depth = depth

    def _value_grad(self, y_hat, y):
        e = y_hat - y
        approx, details = dwt2(e, self.depth, axes=(1, 2))
        s = np.zeros(e.shape[0])
        grads = []
        for level in details:
            gl = []
            for c in level:
                m = c.shape[1] * c.shape[2]
                rms = np.sqrt(np.sum(c * c, axis=(1, 2)) / m)
                s += rms.sum(axis=1) / 3.0
                rb = rms[:, None, None, :]
                with np.errstate(invalid="ignore", divide="ignore"):
                    gl.append(np.where(rb > 0, c / (3.0 * m * rb), 0.0))
            grads.append(tuple(gl))
        g_e = idwt2(np.zeros_like(approx), grads, axes=(1, 2))
        return s, -g_e


class ComboMaxScore(ScoreModel):
    """Max of the Sobolev and PSD scores, each divided by a calibration scale.

    ``scales`` may be given directly; otherwise :meth:`fit` sets each scale to
    the median of that base score over calibration pairs.
    """

    event_ndim = 3
    requires_fit = True

    def __init__(self, lam=1.0, scales=None, eps=EPS_NUM):
        self.lam = lam
        self.scales = scales
        self.eps = eps

    def _bases(self):
        return SobolevScore(lam=self.lam), PSDScore()

    def fit(self, y_hat=None, y=None):
        if self.scales is not None:
            self.scales_ = np.asarray(self.scales, dtype=np.float64)
        else:
            sob, psd = self._bases()
            terms = np.stack([sob.evaluate(y_hat, y), psd.evaluate(y_hat, y)], axis=-1)
            self.scales_ = fit_score_scales(terms, kind="median")
        self.is_fitted_ = True
        return self

    def _check_fitted(self):
        if self.scales is not None and not getattr(self, "is_fitted_", False):
            self.fit()
        super()._check_fitted()

    def _value_grad(self, y_hat, y):
        sob, psd = self._bases()
        s1, g1 = sob._value_grad(y_hat, y)
        s2, g2 = psd._value_grad(y_hat, y)
        k1, k2 = self.scales_ + self.eps
        a, b = s1 / k1, s2 / k2
        first = a >= b
        s = np.where(first, a, b)
        g = np.where(_bcast(first, g1), g1 / k1, g2 / k2)
        return s, g


def _weighted_rms(terms, grads, weights, scales, eps):
    """Weighted RMS of ``terms / scales`` and its gradient from term gradients."""
    wsum = float(np.sum(weights)) + eps
    norm = terms / scales
    s = np.sqrt(np.sum(weights * norm * norm, axis=1) / wsum)
    coef = weights * terms / (scales * scales * wsum)
    g = np.zeros_like(grads[0])
    for k, gk in enumerate(grads):
        g += _bcast(coef[:, k], gk) * gk
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(_bcast(s, g) > 0, g / _bcast(s, g), 0.0)
    return s, g


class LocalCombinedScore(ScoreModel):
    """Weighted RMS of a jittered RMSE term and a log-power-spectrum term,
    each normalized by a MAD calibration scale (the CPD-L score)."""

    event_ndim = 3
    requires_fit = True

    def __init__(self, w_l2=10.0, w_spec=1.0, scales=None, eps=EPS_NUM, eps_spec=1e-8):
        self.w_l2 = w_l2
        self.w_spec = w_spec
        self.scales = scales
        self.eps = eps
        self.eps_spec = eps_spec

    def fit(self, y_hat=None, y=None):
        if self.scales is not None:
            self.scales_ = np.asarray(self.scales, dtype=np.float64)
        else:
            self.scales_ = fit_score_scales(self.terms(y_hat, y), kind="mad", eps=self.eps)
        self.is_fitted_ = True
        return self

    def _check_fitted(self):
        if self.scales is not None and not getattr(self, "is_fitted_", False):
            self.fit()
        super()._check_fitted()

    def terms(self, y_hat, y):
        """``(t_l2, t_spec)`` per pair, last axis of length 2."""
        y = as_float_array(y, "y")
        y_hat = as_float_array(y_hat, "y_hat")
        shape = np.broadcast_shapes(y.shape, y_hat.shape)
        event = shape[-3:]
        yb = np.broadcast_to(y, shape).reshape((-1,) + event)
        yhb = np.broadcast_to(y_hat, shape).reshape((-1,) + event)
        t, _ = self._terms_grads(yhb, yb)
        return t.reshape(shape[:-3] + (2,))

    def _log_spec(self, field):
        z = field - field.mean(axis=(1, 2), keepdims=True)
        F, P = _power(z)
        return F, P, np.log1p(P + self.eps_spec)

    def _terms_grads(self, y_hat, y):
        _check_field_pow2(y.shape)
        eps = self.eps
        e = y - y_hat
        n = e[0].size
        t_l2 = np.sqrt(_sum_event(e * e, 1) / n + eps)
        g_l2 = e / (n * _bcast(t_l2, e))

        Fy, Py, Sy = self._log_spec(y)
        _, _, Sh = self._log_spec(y_hat)
        hw = y.shape[1] * y.shape[2]
        c = y.shape[3]
        diff = Sy - Sh
        d_spec = np.sum(diff * diff, axis=(1, 2, 3)) / (hw * c)
        t_spec = np.sqrt(d_spec + eps)
        a = 2.0 * diff / ((hw * c) * (1.0 + Py + self.eps_spec))
        g_z = _power_adjoint(a, Fy)
        g_d = g_z - g_z.mean(axis=(1, 2), keepdims=True)
        g_spec = g_d / (2.0 * _bcast(t_spec, g_d))
        return np.stack([t_l2, t_spec], axis=1), (g_l2, g_spec)

    def _value_grad(self, y_hat, y):
        terms, grads = self._terms_grads(y_hat, y)
        w = np.array([self.w_l2, self.w_spec], dtype=np.float64)
        return _weighted_rms(terms, grads, w, self.scales_, self.eps)


# --- trajectory scores ------------------------------------------------------

CGT_TERMS = ("pos", "vel", "curv", "speed", "turn", "len")


def _d1t(u):
    """Adjoint of the forward difference along axis 1."""
    out = np.zeros((u.shape[0], u.shape[1] + 1) + u.shape[2:])
    out[:, 1:] += u
    out[:, :-1] -= u
    return out


def _d2t(u):
    out = np.zeros((u.shape[0], u.shape[1] + 2) + u.shape[2:])
    out[:, 2:] += u
    out[:, 1:-1] -= 2.0 * u
    out[:, :-2] += u
    return out


def _safe_unit(v, norm):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norm[..., None] > 0, v / norm[..., None], 0.0)


def turning_angles(v, eps=EPS_NUM, clip=ARCCOS_CLIP):
    """Turning angles between consecutive step vectors ``v`` of shape (B, T-1, 2).

    Returns ``(theta, cos, unclipped_mask, norms)``.
    """
    nv = np.linalg.norm(v, axis=-1)
    num = np.sum(v[:, :-1] * v[:, 1:], axis=-1)
    den = nv[:, :-1] * nv[:, 1:] + eps
    c = num / den
    inside = np.abs(c) < clip
    theta = np.arccos(np.clip(c, -clip, clip))
    return theta, (num, den, c), inside, nv


class CGTScore(ScoreModel):
    """Conditional geometric trajectory score: weighted RMS of six normalized
    geometry discrepancies (position, velocity, curvature, speed, turning,
    path length)."""

    event_ndim = 2
    requires_fit = True

    def __init__(self, weights=None, scales=None, eps=EPS_NUM):
        self.weights = weights
        self.scales = scales
        self.eps = eps

    def _weights(self):
        return np.ones(6) if self.weights is None else np.asarray(self.weights, dtype=np.float64)

    def fit(self, y_hat=None, y=None):
        if self.scales is not None:
            self.scales_ = np.asarray(self.scales, dtype=np.float64)
        else:
            self.scales_ = fit_score_scales(self.terms(y_hat, y), kind="mad", eps=self.eps)
        self.is_fitted_ = True
        return self

    def _check_fitted(self):
        if self.scales is not None and not getattr(self, "is_fitted_", False):
            self.fit()
        super()._check_fitted()

    def _check_event(self, event_shape):
        super()._check_event(event_shape)
        if event_shape[1] != 2 or event_shape[0] < 3:
            raise ValueError(f"CGT needs (T, 2) trajectories with T >= 3, got {event_shape}")

    def terms(self, y_hat, y):
        """The six raw terms per pair, last axis ordered as ``CGT_TERMS``."""
        y = as_float_array(y, "y")
        y_hat = as_float_array(y_hat, "y_hat")
        shape = np.broadcast_shapes(y.shape, y_hat.shape)
        self._check_event(shape[-2:])
        yb = np.broadcast_to(y, shape).reshape((-1,) + shape[-2:])
        yhb = np.broadcast_to(y_hat, shape).reshape((-1,) + shape[-2:])
        t, _ = self._terms_grads(yhb, yb)
        return t.reshape(shape[:-2] + (6,))

    def _terms_grads(self, y_hat, y):
        eps = self.eps
        T = y.shape[1]
        e = y - y_hat
        t_pos = np.sqrt(np.sum(e * e, axis=(1, 2)) / (2 * T) + eps)
        g_pos = e / (2 * T * t_pos[:, None, None])

        v, vh = np.diff(y, axis=1), np.diff(y_hat, axis=1)
        ev = v - vh
        t_vel = np.sqrt(np.sum(ev * ev, axis=(1, 2)) / (2 * (T - 1)) + eps)
        g_vel = _d1t(ev) / (2 * (T - 1) * t_vel[:, None, None])

        ec = np.diff(y, n=2, axis=1) - np.diff(y_hat, n=2, axis=1)
        t_curv = np.sqrt(np.sum(ec * ec, axis=(1, 2)) / (2 * (T - 2)) + eps)
        g_curv = _d2t(ec) / (2 * (T - 2) * t_curv[:, None, None])

        th, (num, den, c), inside, nv = turning_angles(v, eps)
        thh, _, _, nvh = turning_angles(vh, eps)
        unit = _safe_unit(v, nv)

        dsp = nv - nvh
        t_speed = np.sqrt(np.sum(dsp * dsp, axis=1) / (T - 1) + eps)
        g_speed = _d1t(dsp[..., None] * unit / ((T - 1) * t_speed[:, None, None]))

        dth = th - thh
        t_turn = np.sqrt(np.sum(dth * dth, axis=1) / (T - 2) + eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            dtheta_dc = np.where(inside, -1.0 / np.sqrt(np.maximum(1.0 - c * c, 1e-300)), 0.0)
        w = dth / ((T - 2) * t_turn[:, None]) * dtheta_dc
        v0, v1 = v[:, :-1], v[:, 1:]
        n0, n1 = nv[:, :-1, None], nv[:, 1:, None]
        u0, u1 = unit[:, :-1], unit[:, 1:]
        dc_dv0 = v1 / den[..., None] - (num / den**2)[..., None] * n1 * u0
        dc_dv1 = v0 / den[..., None] - (num / den**2)[..., None] * n0 * u1
        g_v = np.zeros_like(v)
        g_v[:, :-1] += w[..., None] * dc_dv0
        g_v[:, 1:] += w[..., None] * dc_dv1
        g_turn = _d1t(g_v)

        L, Lh = nv.sum(axis=1), nvh.sum(axis=1)
        t_len = np.abs(L - Lh)
        g_len = np.sign(L - Lh)[:, None, None] * _d1t(unit)

        terms = np.stack([t_pos, t_vel, t_curv, t_speed, t_turn, t_len], axis=1)
        return terms, (g_pos, g_vel, g_curv, g_speed, g_turn, g_len)

    def _value_grad(self, y_hat, y):
        terms, grads = self._terms_grads(y_hat, y)
        return _weighted_rms(terms, grads, self._weights(), self.scales_, self.eps)


def fit_score_scales(terms, kind="mad", eps=EPS_NUM):
    """Per-term calibration scales from an ``(n, n_terms)`` array.

    ``kind="median"`` gives the per-term median (composite max score);
    ``kind="mad"`` gives MAD + ``eps`` (weighted-RMS scores).
    """
    terms = as_float_array(terms, "terms")
    if terms.ndim == 1:
        terms = terms[:, None]
    terms = terms.reshape(-1, terms.shape[-1])
    if terms.shape[0] < 2:
        raise ValueError("need at least two calibration samples")
    if kind == "median":
        return np.median(terms, axis=0)
    if kind == "mad":
        return np.array([mad(col) for col in terms.T]) + eps
    raise ValueError(f"unknown scale kind {kind!r}")


SCORE_FAMILIES = {
    "l2": L2Score,
    "l1": L1Score,
    "huber": HuberScore,
    "knn": KNNScore,
    "gauss": GaussianNLLScore,
    "student_t": StudentTNLLScore,
    "field_l2": FieldL2Score,
    "sobolev": SobolevScore,
    "psd": PSDScore,
    "wavelet": WaveletScore,
    "combo_max": ComboMaxScore,
    "local_combined": LocalCombinedScore,
    "traj_l2": TrajL2Score,
    "cgt": CGTScore,
}


def make_score(family, **params):
    try:
        cls = SCORE_FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown score family {family!r}") from None
    return cls(**params)
