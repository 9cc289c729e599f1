import numpy as np
import pytest

from volmetrics.datagen import gen_waves_sequence
from volmetrics.fields import field_from_array
from volmetrics.harness import (
    case_study,
    classical_adapter,
    dataset_srcc,
    difficulty_histogram,
    model_adapter,
    pairs_from_picks,
    rotation_invariance,
    scale_invariance,
    select_invariance_pairs,
)
from volmetrics.metrics import srcc
from volmetrics.nn.model import ModelConfig, build_model, init_feature_normalization
from volmetrics.simmodel import entropy_distance


def wave_dataset(count=4, n=6, size=16, seed=0):
    return [gen_waves_sequence(seed * 100 + i, n, size) for i in range(count)]


class FakeSeq:
    def __init__(self, states, difficulty=0.7):
        self.states = states
        self.difficulty = difficulty


def oracle_adapter():
    """Index-gap oracle: distance = (j - i) / n via hidden state identity."""
    from volmetrics.harness import MetricAdapter

    registry = {}

    def prepare(states):
        for k, s in enumerate(states):
            registry[id(s)] = k
        return states

    def distance(a, b):
        return (registry[id(b)] - registry[id(a)]) / 10.0

    ad = MetricAdapter("oracle", distance)
    ad.prepare = prepare
    return ad


class TestDatasetSrcc:
    def test_oracle_metric_scores_one(self):
        seqs = wave_dataset(count=3)
        report = dataset_srcc(oracle_adapter(), seqs, "wav")
        assert report.mean == pytest.approx(1.0, abs=1e-12)
        assert report.per_sequence == [1.0, 1.0, 1.0]

    def test_constant_metric_flagged_zero(self):
        from volmetrics.harness import MetricAdapter

        seqs = wave_dataset(count=2)
        report = dataset_srcc(MetricAdapter("const", lambda a, b: 1.0), seqs)
        assert report.mean == 0.0
        assert report.flagged == [0, 1]

    def test_mse_on_waves_reasonable(self):
        seqs = wave_dataset(count=6, n=6, size=16, seed=3)
        report = dataset_srcc(classical_adapter("mse"), seqs, "wav")
        assert report.mean > 0.5

    def test_csv_shape(self, tmp_path):
        seqs = wave_dataset(count=2)
        report = dataset_srcc(classical_adapter("mse"), seqs, "wav")
        p = tmp_path / "r.csv"
        report.to_csv(p)
        lines = p.read_text().strip().splitlines()
        assert len(lines) == 1 + 2 + 1  # header + rows + mean


class TestHistogram:
    def test_single_bin(self):
        report = difficulty_histogram([0.75] * 10)
        assert report.counts.sum() == 10
        assert (report.counts > 0).sum() == 1
        assert report.mean == pytest.approx(0.75)

    def test_band_edges_exact(self):
        report = difficulty_histogram([0.0])
        # 0.65 and 0.85 must be bin edges (multiples of 0.05)
        assert np.any(np.isclose(report.edges, 0.65))
        assert np.any(np.isclose(report.edges, 0.85))

    def test_curve_count(self):
        report = difficulty_histogram([0.1, 0.2, 0.9, -0.4])
        assert report.edges.size == 41


class TestInvariance:
    def _pairs(self, count=2, size=12):
        rng = np.random.default_rng(4)
        out = []
        for _ in range(count):
            a = field_from_array(rng.random((1, size, size, size), dtype=np.float32))
            b = field_from_array(rng.random((1, size, size, size), dtype=np.float32))
            out.append((a, b))
        return out

    def test_elementwise_exact_at_right_angles(self):
        pairs = self._pairs()
        report = rotation_invariance(classical_adapter("mse"), pairs, step=90.0, seed=1)
        base = report.distances[:, 0]
        for ci in range(report.coordinates.size):
            assert np.array_equal(report.distances[:, ci], base)

    def test_curve_length_72(self):
        pairs = self._pairs(count=1)
        report = rotation_invariance(classical_adapter("mse"), pairs, step=5.0)
        assert report.coordinates.size == 72
        assert report.distances.shape == (1, 72)

    def test_learned_metric_finite_deviation(self):
        model = build_model(ModelConfig(scale_count=2, block_channels=(4, 6), dtype="float32"), seed=1)
        rng = np.random.default_rng(5)
        init_feature_normalization(model, [rng.random((3, 8, 8, 8)).astype(np.float32) for _ in range(2)])
        pairs = self._pairs(count=1, size=8)
        report = rotation_invariance(model_adapter(model), pairs, step=45.0)
        assert np.all(np.isfinite(report.deviations))

    def test_scale_constant_metric_on_constant_pair(self):
        a = field_from_array(np.full((1, 8, 8, 8), 0.25, np.float32))
        b = field_from_array(np.full((1, 8, 8, 8), 0.75, np.float32))
        report = scale_invariance(classical_adapter("mse"), [(a, b)], factors=(0.5, 1.0, 2.0))
        assert np.ptp(report.distances[0]) < 1e-12
        assert np.allclose(report.deviations[0], 0.0, atol=1e-12)

    def test_factor_one_zero_deviation_relative_to_itself(self):
        pairs = self._pairs(count=1, size=8)
        report = scale_invariance(classical_adapter("mse"), [(pairs[0][0], pairs[0][0])], factors=(1.0,))
        assert report.deviations[0][0] == 0.0

    def test_select_pairs_deterministic(self):
        seqs = wave_dataset(count=3)
        assert select_invariance_pairs(seqs, 8, seed=2) == select_invariance_pairs(seqs, 8, seed=2)
        pairs = pairs_from_picks(classical_adapter("mse"), seqs, select_invariance_pairs(seqs, 4, seed=2))
        assert len(pairs) == 4

    def test_incompatible_factor_raises(self):
        from volmetrics.errors import IndivisibleDims

        model = build_model(ModelConfig(dtype="float32"), seed=2)
        rng = np.random.default_rng(6)
        init_feature_normalization(model, [rng.random((3, 16, 16, 16)).astype(np.float32)])
        pairs = self._pairs(count=1, size=16)
        # 0.75 * 16 = 12, not divisible by the 2^3 pooling chain
        with pytest.raises(IndivisibleDims):
            scale_invariance(model_adapter(model), pairs, factors=(0.75,))


def synthetic_model_frames(n=12, size=16, c=25.0, seed=6):
    """Frame stack whose Pearson trajectory lies exactly on the model curve.

    Frame i mixes the base field with an independent one at an angle chosen
    so that PCC(f_0, f_i) = 1 - D(i/n; c) exactly (both fields unit-norm,
    zero-mean, orthogonal)."""
    rng = np.random.default_rng(seed)

    def unit(x):
        x = x - x.mean()
        return x / np.linalg.norm(x)

    base = unit(rng.standard_normal((size, size, size)))
    other = unit(rng.standard_normal((size, size, size)))
    other = unit(other - base * float((base * other).sum()))  # orthogonalize
    frames = []
    w = np.arange(0, n + 1) / n
    target = 1.0 - entropy_distance(w, c)
    for i in range(n + 1):
        rho = float(np.clip(target[i], -1.0, 1.0))
        mix = rho * base + np.sqrt(max(1 - rho * rho, 0.0)) * other
        frames.append(field_from_array(mix[None].astype(np.float32)))
    return frames


class TestCaseStudy:
    def test_srcc_a_exactly_one_on_model_curve(self):
        frames = synthetic_model_frames()
        pearson_distance = classical_adapter("pearson").distance
        report = case_study(pearson_distance, frames)
        assert report.srcc_a == 1.0

    def test_pearson_metric_matches_model_ranks(self):
        frames = synthetic_model_frames(c=4.0, seed=7)
        pearson_distance = classical_adapter("pearson").distance
        report = case_study(pearson_distance, frames)
        assert report.srcc_b == report.srcc_a

    def test_first_entries_zero(self):
        frames = synthetic_model_frames(n=6, seed=8)
        report = case_study(classical_adapter("mse").distance, frames)
        assert report.pearson[0] == 0.0
        assert report.model[0] == 0.0
        assert report.metric[0] == 0.0

    def test_trajectories_normalized(self):
        frames = synthetic_model_frames(n=8, seed=9)
        report = case_study(classical_adapter("mse").distance, frames)
        for traj in (report.pearson, report.model, report.metric):
            assert traj.min() == 0.0 and traj.max() == pytest.approx(1.0)

    def test_normalization_preserves_srcc(self):
        frames = synthetic_model_frames(n=8, seed=10)
        report = case_study(classical_adapter("mse").distance, frames)
        assert srcc(report.model, report.metric) == pytest.approx(report.srcc_b, abs=1e-12)
