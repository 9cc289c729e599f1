"""Entropy-based similarity model.

A sequence of states that drifts apart at rate controlled by a curvature
parameter c follows the normalized logarithmic decay D(w) = log(c*w + 1) /
log(c + 1) over the linear position w in [0, 1]. Fitting c per sequence
turns observed decorrelation into ground-truth distances for every state
pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConstantInput, TooShort
from .metrics import mse, pearson_corr

GAMMA_BOUNDS = (-3.0, 6.0)
GAMMA_TOL = 1e-4


@dataclass
class SimilarityFit:
    """Fitted curvature exponent (c = 10**gamma) and fit diagnostics."""

    gamma: float
    residual: float
    degenerate: bool = False

    @property
    def c(self) -> float:
        return 10.0 ** self.gamma


@dataclass
class PairDistances:
    """All i<j pairs of an (n+1)-state sequence with gaps, ground truth, predictions."""

    n: int
    pairs: list[tuple[int, int]]
    w: np.ndarray  # normalized gaps (j - i) / n
    g: np.ndarray  # ground-truth distances from the similarity model
    d: Optional[np.ndarray] = None  # predicted distances, filled by a metric
    fit: Optional[SimilarityFit] = None


def entropy_distance(w, c: float):
    """Similarity-model distance for gap w in [0, 1] and curvature c > 0."""
    if c <= 0:
        raise ValueError("c must be positive")
    w = np.asarray(w, dtype=np.float64)
    out = np.log(c * w + 1.0) / np.log(c + 1.0)
    return float(out) if out.ndim == 0 else out


def _fit_sse(q: np.ndarray, w: np.ndarray, gamma: float) -> float:
    model = entropy_distance(w, 10.0 ** gamma)
    diff = model - q
    return float(np.dot(diff, diff))


def _golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - invphi * (b - a)
    c2 = a + invphi * (b - a)
    f1, f2 = f(c1), f(c2)
    while (b - a) > tol:
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = f(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = f(c2)
    return 0.5 * (a + b)


def fit_c(q) -> SimilarityFit:
    """Least-squares fit of the similarity model to proxy distances q.

    q holds one value per state s_1..s_n, assumed min-max normalized to
    [0, 1]; the model is evaluated at the linear positions w_i = i/n. The
    exponent is found by a coarse scan plus golden-section refinement. A
    constant q (or a failed fit) falls back to the near-linear model at the
    lower bound instead of erroring, so batch generation never aborts.
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    n = q.size
    if n < 3:
        raise TooShort(f"need at least 3 proxy distances, got {n}")
    w = np.arange(1, n + 1, dtype=np.float64) / n

    lo, hi = GAMMA_BOUNDS
    if not np.all(np.isfinite(q)) or float(q.max() - q.min()) < 1e-12:
        return SimilarityFit(gamma=lo, residual=_fit_sse(np.nan_to_num(q), w, lo), degenerate=True)

    grid = np.linspace(lo, hi, 46)
    sse = [_fit_sse(q, w, g) for g in grid]
    best = int(np.argmin(sse))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    gamma = _golden_section(lambda g: _fit_sse(q, w, g), a, b, GAMMA_TOL)
    residual = _fit_sse(q, w, gamma)
    if not np.isfinite(residual):
        return SimilarityFit(gamma=lo, residual=float("inf"), degenerate=True)
    return SimilarityFit(gamma=float(gamma), residual=residual, degenerate=False)


def iter_pairs(n: int):
    """State-index pairs in canonical order: i ascending, then j."""
    for i in range(n):
        for j in range(i + 1, n + 1):
            yield (i, j)


def ground_truth_distances(n: int, c: float) -> PairDistances:
    """Ground-truth distances g for every pair of an (n+1)-state sequence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pairs = list(iter_pairs(n))
    w = np.array([(j - i) / n for i, j in pairs], dtype=np.float64)
    g = entropy_distance(w, c)
    return PairDistances(n=n, pairs=pairs, w=w, g=g)


def _states_of(seq) -> list:
    return seq.states if hasattr(seq, "states") else list(seq)


def sequence_proxy_distances(seq) -> np.ndarray:
    """Pearson distances 1 - PCC(s_0, s_i) for i = 1..n."""
    states = _states_of(seq)
    return np.array([1.0 - pearson_corr(states[0], states[i]) for i in range(1, len(states))])


def normalize_unit(q: np.ndarray) -> np.ndarray:
    span = float(q.max() - q.min())
    if span < 1e-12:
        return np.zeros_like(q)
    return (q - q.min()) / span


def evaluate_metric_on_sequence(metric: Callable, seq) -> PairDistances:
    """Predicted distances d plus fitted ground truth for one sequence.

    The curvature is fitted to the normalized Pearson distances of the
    sequence; d is filled with metric(s_i, s_j) in canonical pair order.
    """
    states = _states_of(seq)
    n = len(states) - 1
    if n < 2:
        raise TooShort("need at least 3 states")
    try:
        q = normalize_unit(sequence_proxy_distances(states))
        fit = fit_c(q)
    except ConstantInput:
        fit = SimilarityFit(gamma=GAMMA_BOUNDS[0], residual=0.0, degenerate=True)
    pd = ground_truth_distances(n, fit.c)
    pd.fit = fit
    pd.d = np.array([metric(states[i], states[j]) for i, j in pd.pairs], dtype=np.float64)
    return pd


def proxy_difficulty(seq) -> float:
    """Correlation of the MSE proxy trajectory against a linear ramp.

    High values mean the sequence drifts apart almost linearly (easy);
    low values mean early saturation (difficult). Raises ConstantInput when
    every proxy distance is equal.
    """
    states = _states_of(seq)
    n = len(states) - 1
    if n < 2:
        raise ValueError("need at least 3 states")
    proxy = np.array([mse(states[0], states[i]) for i in range(1, n + 1)])
    ramp = np.arange(1, n + 1, dtype=np.float64) / n
    return pearson_corr(proxy, ramp)
