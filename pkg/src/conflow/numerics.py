"""Numerical substrate: reproducible RNG streams, spectra, wavelets, resampling
and robust/weighted statistics.

All array functions accept float64 ndarrays and never mutate their inputs.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._validation import as_float_array, is_power_of_two

# Relative slack for cumulative-mass comparisons so that k/n style levels are
# not lost to summation round-off.
_MASS_SLACK = 1e-12


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(root_seed, stream_id)``.

    Two streams with the same address produce bitwise identical draws no
    matter in which order or on which thread they are consumed.
    """

    root_seed: int
    stream_id: int = 0

    def generator(self):
        seq = np.random.SeedSequence(int(self.root_seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream_id):
        # Nested addressing: mix the parent id into the root so children of
        # different parents never collide.
        seq = np.random.SeedSequence(int(self.root_seed), spawn_key=(int(self.stream_id),))
        return RngStream(int(seq.generate_state(1, np.uint64)[0]), int(stream_id))


def n_threads():
    """Worker count from ``CONFLOW_THREADS`` (default 1)."""
    try:
        n = int(os.environ.get("CONFLOW_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn, items):
    """Ordered map over ``items``, optionally on a thread pool.

    Results are returned in input order so callers are schedule independent.
    """
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def weighted_quantile(values, weights, level):
    """First value whose cumulative normalized weight reaches ``level``.

    Values are sorted ascending with a stable order for ties, so equal values
    keep their input order.

    >>> weighted_quantile([1, 2, 3, 4], [0.7, 0.1, 0.1, 0.1], 0.5)
    1.0
    """
    values = as_float_array(values, "values").ravel()
    weights = as_float_array(weights, "weights").ravel()
    if values.size == 0:
        raise ValueError("weighted_quantile of an empty sequence")
    if weights.shape != values.shape:
        raise ValueError("values and weights must have the same length")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("at least one weight must be positive")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order]) / total
    idx = int(np.searchsorted(cum, level * (1.0 - _MASS_SLACK), side="left"))
    idx = min(idx, values.size - 1)
    return float(values[order[idx]])


def empirical_quantile(values, level, axis=0):
    """Uniform-weight version of :func:`weighted_quantile` along ``axis``."""
    values = np.sort(np.asarray(values, dtype=np.float64), axis=axis)
    n = values.shape[axis]
    k = int(np.ceil(level * n * (1.0 - _MASS_SLACK)))
    k = min(max(k, 1), n)
    return np.take(values, k - 1, axis=axis)


def mad(values):
    """Median absolute deviation about the median (unscaled)."""
    values = as_float_array(values, "values").ravel()
    if values.size == 0:
        raise ValueError("mad of an empty sequence")
    return float(np.median(np.abs(values - np.median(values))))


def _check_pow2_dims(shape):
    for n in shape:
        if not is_power_of_two(n):
            raise ValueError(f"spatial dimensions must be powers of two, got {tuple(shape)}")


def fft2(field, axes=(-2, -1)):
    """2-D DFT over ``axes`` (radix-2 sizes only)."""
    field = np.asarray(field, dtype=np.float64)
    _check_pow2_dims([field.shape[a] for a in axes])
    return np.fft.fft2(field, axes=axes)


def fft2_power(field, axes=(-2, -1)):
    """Squared modulus of the unnormalized 2-D DFT.

    Parseval: ``power.sum() / (H * W) == (field ** 2).sum()``.
    """
    F = fft2(field, axes=axes)
    return F.real**2 + F.imag**2


# Daubechies-2 (four tap) orthonormal analysis filters.
_SQ3 = np.sqrt(3.0)
DB2_LO = np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0))
DB2_HI = np.array([(-1) ** k * DB2_LO[3 - k] for k in range(4)])


def _analysis_1d(x, axis):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(4)[None, :]) % n
    windows = x[..., idx]
    lo = windows @ DB2_LO
    hi = windows @ DB2_HI
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesis_1d(lo, hi, axis):
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    out = np.zeros(lo.shape[:-1] + (n,))
    for k in range(4):
        pos = (2 * np.arange(half) + k) % n
        # positions are distinct for a fixed tap, so fancy-index += is safe
        out[..., pos] += DB2_LO[k] * lo + DB2_HI[k] * hi
    return np.moveaxis(out, -1, axis)


def dwt2(field, depth, axes=(-2, -1)):
    """Periodic separable db2 analysis.

    Returns ``(approx, details)`` where ``details[j]`` is ``(cH, cV, cD)`` at
    scale ``j + 1`` (finest first). ``cH`` is high-pass along the first axis,
    ``cV`` along the second and ``cD`` along both.
    """
    field = np.asarray(field, dtype=np.float64)
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be at least 1")
    a0, a1 = (ax % field.ndim for ax in axes)
    for ax in (a0, a1):
        if field.shape[ax] % (2**depth):
            raise ValueError(
                f"dimension {field.shape[ax]} is not divisible by 2**depth={2**depth}"
            )
    details = []
    approx = field
    for _ in range(depth):
        lo0, hi0 = _analysis_1d(approx, a0)
        ll, lh = _analysis_1d(lo0, a1)
        hl, hh = _analysis_1d(hi0, a1)
        details.append((hl, lh, hh))
        approx = ll
    return approx, details


def idwt2(approx, details, axes=(-2, -1)):
    """Inverse (and adjoint) of :func:`dwt2`."""
    approx = np.asarray(approx, dtype=np.float64)
    a0, a1 = (ax % approx.ndim for ax in axes)
    for cH, cV, cD in reversed(details):
        lo0 = _synthesis_1d(approx, cV, a1)
        hi0 = _synthesis_1d(cH, cD, a1)
        approx = _synthesis_1d(lo0, hi0, a0)
    return approx


def resize(field, out_h, out_w, mode="nearest"):
    """Resample the two leading axes of ``field`` to ``(out_h, out_w)``.

    ``nearest`` maps output ``(i, j)`` to input ``(i*H//out_h, j*W//out_w)``;
    ``bilinear`` uses corner-aligned sample positions.
    """
    field = np.asarray(field, dtype=np.float64)
    out_h, out_w = int(out_h), int(out_w)
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dimensions must be positive")
    H, W = field.shape[:2]
    if mode == "nearest":
        ii = (np.arange(out_h) * H) // out_h
        jj = (np.arange(out_w) * W) // out_w
        return field[ii][:, jj]
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")

    def positions(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = positions(out_h, H)
    c0, c1, fc = positions(out_w, W)
    fr = fr.reshape((-1, 1) + (1,) * (field.ndim - 2))
    fc = fc.reshape((1, -1) + (1,) * (field.ndim - 2))
    top = field[r0][:, c0] * (1 - fc) + field[r0][:, c1] * fc
    bot = field[r1][:, c0] * (1 - fc) + field[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr
