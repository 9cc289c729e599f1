"""Element-wise and statistical baseline metrics.

Reductions over voxels use a canonical (sorted) accumulation order so that
applying the same index permutation (90-degree rotations, flips, periodic
shifts) to both inputs changes nothing, bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConstantInput, FieldTooSmall, InfinitePSNR, ShapeMismatch
from .fields import VolumeField


def _as_data(f) -> np.ndarray:
    return f.data if isinstance(f, VolumeField) else np.asarray(f)


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} vs {b.shape}")


def _permutation_invariant_mean(values: np.ndarray) -> float:
    # sorting fixes the summation order regardless of input layout
    flat = np.sort(values, axis=None)
    return float(flat.sum(dtype=np.float64) / flat.size)


def mse(a, b) -> float:
    """Mean squared per-sample difference over all channels."""
    da, db = _as_data(a), _as_data(b)
    _check_same_shape(da, db)
    diff = da.astype(np.float64) - db.astype(np.float64)
    return _permutation_invariant_mean(diff * diff)


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; raises InfinitePSNR on identical inputs."""
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    err = mse(a, b)
    if err == 0.0:
        raise InfinitePSNR("inputs are identical, PSNR is unbounded")
    return float(10.0 * np.log10(max_value * max_value / err))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def ssim3d(a, b, window_size: int = 11, sigma: float = 1.5,
           k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean local SSIM over all valid window positions and channels.

    A separable 3D Gaussian window extends the classic image formulation to
    volumes. Inputs are expected pre-normalized to [0, data_range].
    """
    da = _as_data(a).astype(np.float64)
    db = _as_data(b).astype(np.float64)
    _check_same_shape(da, db)
    if min(da.shape[1:]) < window_size:
        raise FieldTooSmall(f"dims {da.shape[1:]} below window size {window_size}")

    w = gaussian_window(window_size, sigma)
    m = window_size // 2

    def filt(x):
        for ax in (1, 2, 3):
            x = correlate1d(x, w, axis=ax, mode="constant")
        return x[:, m:-m or None, m:-m or None, m:-m or None]

    mu_a = filt(da)
    mu_b = filt(db)
    a2 = filt(da * da)
    b2 = filt(db * db)
    ab = filt(da * db)
    var_a = a2 - mu_a * mu_a
    var_b = b2 - mu_b * mu_b
    cov = ab - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return _permutation_invariant_mean(ssim_map)


def pearson_corr(x, y) -> float:
    """Product-moment correlation; fields are flattened first."""
    xv = _as_data(x).astype(np.float64).ravel()
    yv = _as_data(y).astype(np.float64).ravel()
    if xv.size != yv.size:
        raise ShapeMismatch(f"length {xv.size} vs {yv.size}")
    if xv.size < 2:
        raise ValueError("need at least two samples")
    xm = xv - xv.mean()
    ym = yv - yv.mean()
    sx = float(np.dot(xm, xm))
    sy = float(np.dot(ym, ym))
    if sx == 0.0 or sy == 0.0:
        raise ConstantInput("correlation of a constant sequence is undefined")
    r = float(np.dot(xm, ym)) / np.sqrt(sx * sy)
    return float(np.clip(r, -1.0, 1.0))


def average_ranks(values) -> np.ndarray:
    """Ranks starting at 1; ties receive the average of their rank range."""
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    xv = _as_data(x).ravel()
    yv = _as_data(y).ravel()
    if xv.size != yv.size:
        raise ShapeMismatch(f"length {xv.size} vs {yv.size}")
    rx = average_ranks(xv)
    ry = average_ranks(yv)
    # identical or exactly reversed rank vectors are +-1 by definition;
    # returning them structurally avoids the last-ulp sqrt rounding
    if np.array_equal(rx, ry):
        if rx.min() == rx.max():
            raise ConstantInput("correlation of a constant sequence is undefined")
        return 1.0
    if np.array_equal(rx + ry, np.full_like(rx, rx.size + 1.0)):
        return -1.0
    return pearson_corr(rx, ry)
