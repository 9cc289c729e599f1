"""Experiment drivers: rank-correlation tables, difficulty histograms,
rotation/scale invariance sweeps, and the long-horizon case study."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConstantInput, DegenerateRange
from .fields import VolumeField, normalize_minmax, rotate_arbitrary, trilinear_resample
from .metrics import mse, pearson_corr, psnr, srcc, ssim3d
from .nn.model import MultiscaleModel, forward_features, metric_from_features
from .nn.tensor import no_grad
from .simmodel import entropy_distance, fit_c, iter_pairs, normalize_unit
from .training import augment_sequence


# -- metric adapters -------------------------------------------------------------


@dataclass
class MetricAdapter:
    """A distance metric plus its input-normalization convention."""

    metric_id: str
    distance: callable  # (VolumeField, VolumeField) -> float
    lo: float = 0.0
    hi: float = 1.0
    pair_distances: callable = None  # optional fast path over a whole sequence

    def prepare(self, states: list[VolumeField]) -> list[VolumeField]:
        try:
            return normalize_minmax(states, self.lo, self.hi)
        except DegenerateRange:
            return states


def classical_adapter(metric_id: str) -> MetricAdapter:
    """mse / psnr / ssim / pearson over jointly [0,1]-normalized states.

    Similarity scores are turned into distances (1 - ssim, negated psnr) so
    every adapter grows with dissimilarity.
    """
    table = {
        "mse": lambda a, b: mse(a, b),
        "psnr": lambda a, b: -psnr(a, b, 1.0),
        "ssim": lambda a, b: 1.0 - ssim3d(a, b),
        "pearson": lambda a, b: 1.0 - pearson_corr(a, b),
    }
    if metric_id not in table:
        raise KeyError(f"unknown classical metric {metric_id!r}")
    return MetricAdapter(metric_id, table[metric_id])


def model_adapter(model: MultiscaleModel, metric_id: str = "model") -> MetricAdapter:
    """Learned-metric adapter: [-1,1] normalization, scalar repetition,
    one feature pass per state when scoring whole sequences."""

    def distance(a: VolumeField, b: VolumeField) -> float:
        from .nn.model import metric_forward

        with no_grad():
            return float(metric_forward(model, a.data, b.data).data)

    def pair_distances(states: list[VolumeField], pairs) -> np.ndarray:
        arrays = augment_sequence([s.data for s in states], states[0].kind, None, training=False)
        with no_grad():
            feats = [forward_features(model, s) for s in arrays]
            return np.array(
                [float(metric_from_features(model, feats[i], feats[j]).data) for i, j in pairs]
            )

    adapter = MetricAdapter(metric_id, distance, lo=-1.0, hi=1.0)
    adapter.pair_distances = pair_distances
    return adapter


# -- dataset SRCC ------------------------------------------------------------------


@dataclass
class EvalReport:
    metric_id: str
    dataset_id: str
    per_sequence: list
    flagged: list
    mean: float

    def to_csv(self, path):
        rows = ["metric,dataset,sequence,srcc,flagged"]
        for i, v in enumerate(self.per_sequence):
            rows.append(f"{self.metric_id},{self.dataset_id},{i},{v!r},{int(i in self.flagged)}")
        rows.append(f"{self.metric_id},{self.dataset_id},mean,{self.mean!r},")
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def dataset_srcc(adapter: MetricAdapter, sequences, dataset_id: str = "") -> EvalReport:
    """Per-sequence SRCC of predicted distances against the linear gaps."""
    per_seq = []
    flagged = []
    for si, seq in enumerate(sequences):
        states = seq.states if hasattr(seq, "states") else list(seq)
        n = len(states) - 1
        pairs = list(iter_pairs(n))
        w = np.array([(j - i) / n for i, j in pairs])
        if adapter.pair_distances is not None:
            d = adapter.pair_distances(states, pairs)
        else:
            prepared = adapter.prepare(states)
            d = np.array([adapter.distance(prepared[i], prepared[j]) for i, j in pairs])
        try:
            value = srcc(d, w)
        except ConstantInput:
            value = 0.0
            flagged.append(si)
        per_seq.append(float(value))
    return EvalReport(
        metric_id=adapter.metric_id,
        dataset_id=dataset_id,
        per_sequence=per_seq,
        flagged=flagged,
        mean=float(np.mean(per_seq)) if per_seq else 0.0,
    )


# -- difficulty histogram ------------------------------------------------------------


@dataclass
class HistogramReport:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    skew: float

    def to_csv(self, path):
        rows = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            rows.append(f"{lo!r},{hi!r},{int(c)}")
        rows.append(f"mean,{self.mean!r},")
        rows.append(f"std,{self.std!r},")
        rows.append(f"skew,{self.skew!r},")
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def difficulty_histogram(sequences_or_values, bin_size: float = 0.05) -> HistogramReport:
    """Binned sequence difficulties over [-1, 1] with summary statistics."""
    values = np.array(
        [s.difficulty if hasattr(s, "difficulty") else float(s) for s in sequences_or_values]
    )
    nbins = int(round(2.0 / bin_size))
    edges = np.linspace(-1.0, 1.0, nbins + 1)
    counts, _ = np.histogram(values, bins=edges)
    mean = float(values.mean())
    std = float(values.std())
    if std > 0:
        skew = float(np.mean((values - mean) ** 3) / std**3)
    else:
        skew = 0.0
    return HistogramReport(edges=edges, counts=counts, mean=mean, std=std, skew=skew)


# -- invariance sweeps ------------------------------------------------------------------


@dataclass
class InvarianceReport:
    kind: str  # rotation | scale
    coordinates: np.ndarray  # angles in degrees, or scale factors
    distances: np.ndarray  # (pairs, len(coordinates))
    deviations: np.ndarray  # distances minus per-pair mean

    def to_csv(self, path):
        name = "angle" if self.kind == "rotation" else "factor"
        rows = [f"pair,{name},distance,deviation"]
        for pi in range(self.distances.shape[0]):
            for ci, coord in enumerate(self.coordinates):
                rows.append(
                    f"{pi},{coord!r},{self.distances[pi, ci]!r},{self.deviations[pi, ci]!r}"
                )
        mean_curve = self.deviations.mean(axis=0)
        for ci, coord in enumerate(self.coordinates):
            rows.append(f"mean,{coord!r},,{mean_curve[ci]!r}")
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def select_invariance_pairs(sequences, count: int = 8, seed: int = 0):
    """Fixed random (sequence, i, j) picks used by both sweep kinds."""
    rng = np.random.default_rng(seed)
    picks = []
    for _ in range(count):
        si = int(rng.integers(0, len(sequences)))
        states = sequences[si].states
        i = int(rng.integers(0, len(states) - 1))
        j = int(rng.integers(i + 1, len(states)))
        picks.append((si, i, j))
    return picks


def pairs_from_picks(adapter: MetricAdapter, sequences, picks):
    out = []
    for si, i, j in picks:
        prepared = adapter.prepare(sequences[si].states)
        out.append((prepared[i], prepared[j]))
    return out


def rotation_invariance(
    adapter: MetricAdapter, pairs, step: float = 5.0, seed: int = 0, fill: float = 0.0
) -> InvarianceReport:
    """Distance over joint rotations of both inputs about a random axis.

    Rotations use zero fill and frame cut; exact multiples of 90 degrees
    take the index-permutation path, so element-wise metrics deviate by
    exactly zero there.
    """
    rng = np.random.default_rng(seed)
    angles = np.arange(0.0, 360.0, step)
    dist = np.empty((len(pairs), angles.size))
    for pi, (a, b) in enumerate(pairs):
        axis = ("x", "y", "z")[int(rng.integers(0, 3))]
        for ci, angle in enumerate(angles):
            ra = rotate_arbitrary(a, axis, angle, fill=fill)
            rb = rotate_arbitrary(b, axis, angle, fill=fill)
            dist[pi, ci] = adapter.distance(ra, rb)
    dev = dist - dist.mean(axis=1, keepdims=True)
    return InvarianceReport("rotation", angles, dist, dev)


def scale_invariance(adapter: MetricAdapter, pairs, factors=(0.25, 0.5, 1.0, 2.0, 4.0)) -> InvarianceReport:
    """Distance over joint resampling of both inputs by each factor."""
    factors = np.array(sorted(factors))
    dist = np.empty((len(pairs), factors.size))
    for pi, (a, b) in enumerate(pairs):
        dims = a.dims
        for ci, factor in enumerate(factors):
            target = tuple(max(int(round(d * factor)), 1) for d in dims)
            ra = trilinear_resample(a, target)
            rb = trilinear_resample(b, target)
            dist[pi, ci] = adapter.distance(ra, rb)
    dev = dist - dist.mean(axis=1, keepdims=True)
    return InvarianceReport("scale", factors, dist, dev)


# -- case study ------------------------------------------------------------------------


@dataclass
class CaseStudyReport:
    pearson: np.ndarray  # 1 - PCC(f_0, f_i), min-max normalized
    model: np.ndarray  # similarity-model curve from the fitted exponent
    metric: np.ndarray  # metric trajectory, min-max normalized
    srcc_a: float  # rank agreement pearson vs model
    srcc_b: float  # rank agreement model vs metric
    gamma: float

    def to_csv(self, path):
        rows = ["frame,pearson,model,metric"]
        for i in range(self.pearson.size):
            rows.append(f"{i},{self.pearson[i]!r},{self.model[i]!r},{self.metric[i]!r}")
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def case_study(metric_distance, frames: list[VolumeField]) -> CaseStudyReport:
    """Track one reference frame against a long ordered stack.

    Frames are individually normalized to [-1, 1]; trajectories start at
    the frame-zero self-distance of 0 and are min-max normalized to [0, 1]
    at the end, which leaves rank order (and so both SRCC values) intact.
    """
    if len(frames) < 3:
        raise ValueError("need at least 3 frames")
    frames = [normalize_minmax([f], -1.0, 1.0)[0] for f in frames]
    n = len(frames) - 1
    pearson = np.array([0.0] + [1.0 - pearson_corr(frames[0], frames[i]) for i in range(1, n + 1)])
    fit = fit_c(normalize_unit(pearson[1:]))
    w = np.arange(0, n + 1, dtype=np.float64) / n
    model_curve = entropy_distance(w, fit.c)
    metric_traj = np.array([0.0] + [float(metric_distance(frames[0], frames[i])) for i in range(1, n + 1)])
    return CaseStudyReport(
        pearson=normalize_unit(pearson),
        model=normalize_unit(model_curve),
        metric=normalize_unit(metric_traj),
        srcc_a=srcc(pearson, model_curve),
        srcc_b=srcc(model_curve, metric_traj),
        gamma=fit.gamma,
    )
