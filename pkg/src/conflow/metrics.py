"""Distributional metrics between predictive samples and realized targets."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ._validation import as_float_array
from .numerics import fft2_power

LSD_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricConfig:
    patch: int = 7
    stride: int = 4
    multipliers: tuple = (0.5, 1.0, 2.0)
    standardize: bool = False

    def __post_init__(self):
        if self.patch < 1 or self.stride < 1:
            raise ValueError("patch and stride must be positive")
        if not self.multipliers or min(self.multipliers) <= 0:
            raise ValueError("bandwidth multipliers must be positive")


def _flatten(samples, target):
    samples = as_float_array(samples, "samples")
    target = as_float_array(target, "target")
    if samples.shape[1:] != target.shape:
        raise ValueError(f"sample shape {samples.shape[1:]} does not match target {target.shape}")
    return samples.reshape(len(samples), -1), target.reshape(1, -1)


def energy_distance(samples, target):
    """Energy score of ``K`` samples against one target, with RMS norms.

    >>> energy_distance([[0.0], [2.0]], [1.0])
    0.5
    """
    S, y = _flatten(samples, target)
    if len(S) == 0:
        raise ValueError("need at least one sample")
    scale = np.sqrt(S.shape[1])
    first = cdist(S, y).mean() / scale
    second = cdist(S, S).sum() / (2.0 * len(S) ** 2) / scale
    return float(first - second)


def _log_spectrum(field, beta):
    return np.log1p(fft2_power(field, axes=(0, 1)) / beta)


def lsd(samples, target):
    """Mean squared difference of ``log(1 + P / beta)`` spectra, averaged over
    samples; ``beta`` is the mean target power. Fields are ``(H, W)`` or
    ``(H, W, C)`` with the DFT taken per channel."""
    samples = as_float_array(samples, "samples")
    target = as_float_array(target, "target")
    if samples.shape[1:] != target.shape:
        raise ValueError("sample and target field shapes differ")
    beta = max(float(fft2_power(target, axes=(0, 1)).mean()), LSD_FLOOR)
    ref = _log_spectrum(target, beta)
    return float(np.mean([np.mean((_log_spectrum(s, beta) - ref) ** 2) for s in samples]))


def extract_patches(field, patch=7, stride=4, standardize=False):
    """Flattened ``patch x patch`` windows on a regular grid of a 2-D or 3-D field."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 2:
        field = field[..., None]
    H, W = field.shape[:2]
    if patch > H or patch > W:
        raise ValueError("patch larger than field")
    win = np.lib.stride_tricks.sliding_window_view(field, (patch, patch), axis=(0, 1))
    out = win[::stride, ::stride].reshape(-1, field.shape[2] * patch * patch)
    if standardize:
        sd = out.std(axis=1, keepdims=True)
        out = (out - out.mean(axis=1, keepdims=True)) / np.where(sd > 0, sd, 1.0)
    return out


def median_bandwidth(points):
    d = pdist(points)
    med = float(np.median(d)) if d.size else 0.0
    if med > 0:
        return med
    pos = d[d > 0]
    return float(pos.mean()) if pos.size else 1.0


def _offdiag_mean(K):
    n = len(K)
    return (K.sum() - np.trace(K)) / (n * (n - 1))


def mmd_unbiased(A, B, bandwidths):
    """Unbiased squared MMD with Gaussian kernels, averaged over bandwidths."""
    if len(A) < 2 or len(B) < 2:
        raise ValueError("unbiased MMD needs at least two points per side")
    daa = cdist(A, A, "sqeuclidean")
    dbb = cdist(B, B, "sqeuclidean")
    dab = cdist(A, B, "sqeuclidean")
    vals = []
    for bw in bandwidths:
        g = 1.0 / (2.0 * bw**2)
        vals.append(
            _offdiag_mean(np.exp(-g * daa))
            + _offdiag_mean(np.exp(-g * dbb))
            - 2.0 * np.exp(-g * dab).mean()
        )
    return float(np.mean(vals))


def patch_mmd(samples, target, cfg=None):
    """Patch MMD between the target's patches and the pooled sample patches."""
    cfg = cfg or MetricConfig()
    A = extract_patches(target, cfg.patch, cfg.stride, cfg.standardize)
    B = np.concatenate([extract_patches(s, cfg.patch, cfg.stride, cfg.standardize) for s in samples])
    base = median_bandwidth(np.concatenate([A, B]))
    return mmd_unbiased(A, B, [m * base for m in cfg.multipliers])


def vendi_score(samples):
    """``exp`` of the eigenvalue entropy of the cosine-similarity matrix over ``K``.

    Each sample is flattened and has its own mean removed before the cosine.
    """
    X = as_float_array(samples, "samples")
    X = X.reshape(len(X), -1)
    X = X - X.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine similarity undefined for a constant sample")
    X = X / norms[:, None]
    lam = np.clip(np.linalg.eigvalsh(X @ X.T / len(X)), 0.0, None)
    lam = lam[lam > 0]
    lam = lam / lam.sum()
    return float(np.exp(-np.sum(lam * np.log(lam))))


def vendi_ratio(samples, reference):
    return vendi_score(samples) / vendi_score(reference)
