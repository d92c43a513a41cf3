"""Synthetic exchangeable regression tasks and a closed-form ridge predictor.

Every generator takes ``(seed, split)``. Parameters shared by all splits of one
experiment (for example the coefficient matrix) come from stream 0 of the
seed; each split draws its data from its own stream.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.ndimage import gaussian_filter1d
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .numerics import RngStream, resize

SPLITS = ("train", "cal", "test")
_SPLIT_STREAM = {"train": 1, "cal": 2, "test": 3, "extra": 4}
GP_JITTER = 1e-8


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    split: str
    seed: int
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.Y)


def _rng(seed, split):
    if split not in _SPLIT_STREAM:
        raise ValueError(f"unknown split {split!r}")
    return RngStream(seed, _SPLIT_STREAM[split]).generator()


def _shared_rng(seed):
    return RngStream(seed, 0).generator()


def gen_linear_gaussian(p, n, seed, split="train"):
    """``Y = X Theta + eps`` with standard normal ``Theta``, ``X`` and ``eps``."""
    if p < 1 or n < 1:
        raise ValueError("p and n must be positive")
    theta = _shared_rng(seed).standard_normal((p, p))
    rng = _rng(seed, split)
    X = rng.standard_normal((n, p))
    return Dataset(X, X @ theta + rng.standard_normal((n, p)), split, seed, {"theta": theta})


def student_t_scales(p):
    return np.exp(np.linspace(0.0, 1.5, p))


def gen_linear_student_t(p, n, seed, split="train", df=3.0):
    """Linear model with heteroskedastic ``t_3`` noise of scale ``exp(linspace(0, 1.5, p))``."""
    if p < 2 or n < 1:
        raise ValueError("need p >= 2 and n >= 1")
    theta = _shared_rng(seed).standard_normal((p, p))
    rng = _rng(seed, split)
    X = rng.standard_normal((n, p))
    noise = rng.standard_t(df, size=(n, p)) * student_t_scales(p)
    return Dataset(X, X @ theta + noise, split, seed, {"theta": theta})


def rbf_kernel(u, length):
    d = u[:, None] - u[None, :]
    return np.exp(-(d**2) / (2.0 * length**2))


def sample_gp1d(n, p, length, rng):
    u = np.linspace(0.0, 1.0, p)
    L = cholesky(rbf_kernel(u, length) + GP_JITTER * np.eye(p), lower=True)
    return rng.standard_normal((n, p)) @ L.T


def bias_mean(u, variant):
    if variant == "bias_mu":
        return 0.5 + 0.25 * np.sin(4 * np.pi * (2 * u - 1))
    return 0.5 * np.sin(4 * np.pi * (2 * u - 1))


def bias_scale(p):
    return 0.5 * np.linspace(1.0, 4 * np.pi, p)


def _center_exp(Y, half):
    E = np.exp((Y - Y.mean(axis=0)) / (2.0 if half else 1.0))
    return E - (E.mean(axis=0) if half else E.mean())


GP1D_VARIANTS = ("symmetric", "asym", "bias_mu", "bias_mu_sigma")


def gen_gp1d(n, p, seed, split="train", variant="symmetric", lx=0.2, ly=0.2, beta=0.6):
    """1-D functional regression ``Y = beta X + eps`` with four output variants.

    ``asym`` exponentiates the pointwise-centred outputs and removes the global
    mean. The two bias variants apply a half-amplitude centred exponential on
    every split and add a deterministic mean (and scale) change on ``cal`` and
    ``test`` only. Centring statistics are computed within each split.
    """
    if p < 2 or n < 1:
        raise ValueError("need p >= 2 and n >= 1")
    if variant not in GP1D_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = _rng(seed, split)
    X = sample_gp1d(n, p, lx, rng)
    Y = beta * X + sample_gp1d(n, p, ly, rng)
    u = np.linspace(0.0, 1.0, p)
    if variant == "asym":
        Y = _center_exp(Y, half=False)
    elif variant in ("bias_mu", "bias_mu_sigma"):
        Y = _center_exp(Y, half=True)
        if split != "train":
            scale = bias_scale(p) if variant == "bias_mu_sigma" else 1.0
            Y = bias_mean(u, variant) + scale * Y
    return Dataset(X, Y, split, seed, {"grid": u})


def circulant_eigs_1d(p, length, max_doublings=4):
    """Eigenvalues of the smallest circulant embedding (size ``2p``, doubled as
    needed) of the RBF covariance on ``linspace(0, 1, p)``."""
    h = 1.0 / (p - 1) if p > 1 else 1.0
    m = 2 * p
    for _ in range(max_doublings + 1):
        k = np.arange(m)
        lag = np.minimum(k, m - k) * h
        lam = np.fft.fft(np.exp(-(lag**2) / (2.0 * length**2))).real
        if lam.min() >= -1e-8 * lam.max():
            return np.clip(lam, 0.0, None), m
        m *= 2
    raise np.linalg.LinAlgError("circulant embedding is not positive semidefinite")


def sample_gp2d(n, p, length, rng):
    """Zero-mean unit-variance separable RBF fields on a ``p x p`` lattice."""
    lam, m = circulant_eigs_1d(p, length)
    eig = np.outer(lam, lam) + GP_JITTER
    amp = np.sqrt(eig / (m * m))
    out = np.empty((n, p, p))
    for i in range(n):
        xi = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        out[i] = np.fft.fft2(amp * xi).real[:p, :p]
    return out


def gen_gp2d(n, p, seed, split="train", lx=0.15, ly=0.08, beta=0.6):
    """``Y = beta X + eps`` for independent 2-D GP fields; shapes ``(n, p, p, 1)``."""
    rng = _rng(seed, split)
    X = sample_gp2d(n, p, lx, rng)
    Y = beta * X + sample_gp2d(n, p, ly, rng)
    return Dataset(X[..., None], Y[..., None], split, seed)


def gen_gp2d_downscale(n, p, seed, split="train", length=0.15, q=8):
    """High-resolution GP targets with bilinear ``q x q`` coarsened inputs."""
    rng = _rng(seed, split)
    Y = sample_gp2d(n, p, length, rng)[..., None]
    X = np.stack([resize(y, q, q, mode="bilinear") for y in Y])
    return Dataset(X, Y, split, seed)


def gen_trajectories(n, seed, split="train", T=36, context=24, noise=0.05, smooth=3.0):
    """Smooth planar paths from integrated Gaussian-smoothed velocities.

    ``X`` holds the first ``context`` positions and ``Y`` the rest. The
    ``pred`` extra is ``Y`` plus a random-walk error of scale ``noise``.
    """
    if T < 3 or not 0 < context < T - 2:
        raise ValueError("need T >= 3 and a horizon of at least three steps")
    rng = _rng(seed, split)
    heading = rng.uniform(0, 2 * np.pi, size=n)
    drift = np.stack([np.cos(heading), np.sin(heading)], axis=1)[:, None, :]
    vel = drift + gaussian_filter1d(rng.standard_normal((n, T, 2)), smooth, axis=1, mode="nearest")
    pos = np.cumsum(vel, axis=1)
    pos -= pos[:, :1]
    X, Y = pos[:, :context], pos[:, context:]
    pred = Y + noise * np.cumsum(rng.standard_normal(Y.shape), axis=1)
    return Dataset(X, Y, split, seed, {"pred": pred})


GENERATORS = {
    "linear_gaussian": gen_linear_gaussian,
    "linear_student_t": gen_linear_student_t,
    "gp1d": gen_gp1d,
    "gp2d": gen_gp2d,
    "gp2d_downscale": gen_gp2d_downscale,
    "trajectories": gen_trajectories,
}


class LinearPredictor(RegressorMixin, BaseEstimator):
    """Closed-form ridge regression on flattened inputs and outputs.

    Uses the dual system when there are more features than samples. With
    ``ridge=0`` a rank-deficient design raises ``LinAlgError``.
    """

    def __init__(self, ridge=1e-3):
        self.ridge = ridge

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(X) == 0 or len(X) != len(y):
            raise ValueError("X and y must be nonempty with matching rows")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.out_shape_ = y.shape[1:]
        Xf = X.reshape(len(X), -1)
        Yf = y.reshape(len(y), -1)
        self.x_mean_ = Xf.mean(axis=0)
        y_mean = Yf.mean(axis=0)
        Xc = Xf - self.x_mean_
        Yc = Yf - y_mean
        n, d = Xc.shape
        if d <= n:
            A = Xc.T @ Xc + self.ridge * np.eye(d)
            self.coef_ = cho_solve(self._factor(A), Xc.T @ Yc)
        else:
            A = Xc @ Xc.T + self.ridge * np.eye(n)
            self.coef_ = Xc.T @ cho_solve(self._factor(A), Yc)
        self.intercept_ = y_mean
        return self

    @staticmethod
    def _factor(A):
        try:
            c = cho_factor(A)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("ridge system is singular") from None
        diag = np.abs(np.diag(c[0]))
        if diag.min() <= 1e-7 * diag.max():
            raise np.linalg.LinAlgError("ridge system is singular")
        return c

    def predict(self, X):
        check_is_fitted(self, "coef_")
        Xf = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        out = (Xf - self.x_mean_) @ self.coef_ + self.intercept_
        return out.reshape((len(X),) + self.out_shape_)


def fit_ridge(train, ridge=1e-3):
    return LinearPredictor(ridge).fit(train.X, train.Y)
