import numpy as np
import pytest

from volmetrics.errors import CalibrationDiverged, OutOfBounds, UnknownParam
from volmetrics.fields import circular_shift, field_from_array
from volmetrics.datagen import (
    VolumeRepository,
    advect_semi_lagrangian,
    calibrate_delta,
    diffuse_exact,
    extract_cutout_sequence,
    fourier_diffusion_factors,
    gen_shapes_sequence,
    gen_waves_sequence,
    init_advdiff_state,
    perturb_params,
    run_simulation_sequence,
    sample_sim_params,
)
from volmetrics.datagen.procedural import wave_kernel
from volmetrics.metrics import mse


class TestInitState:
    def test_determinism(self):
        a = init_advdiff_state(sample_sim_params(7), 16)
        b = init_advdiff_state(sample_sim_params(7), 16)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_zero_coefficients_zero_velocity(self):
        p = sample_sim_params(3)
        p.f[:] = 0.0
        vel, _ = init_advdiff_state(p, 8)
        assert np.abs(vel).max() == 0.0

    def test_density_bounded_by_three(self):
        _, dens = init_advdiff_state(sample_sim_params(11), 16)
        assert np.abs(dens).max() <= 3.0 + 1e-12


class TestSolverSteps:
    def test_no_dynamics_density_unchanged(self):
        p = sample_sim_params(5)
        p.f[:] = 0.0  # no velocity, no force
        p.nu = 1e-12
        p.noise_strength = 0.0
        from volmetrics.datagen import TransportSim

        sim = TransportSim(p, 16)
        d0 = sim.state.density.copy()
        sim.run(3)
        assert np.abs(sim.state.density - d0).max() < 1e-6

    def test_single_mode_decay_oracle(self):
        # sin(2*pi*x/N) must decay by exp(-nu (2*pi/N)^2) per unit step
        n = 32
        nu, dt, steps = 0.05, 1.0, 10
        x = np.arange(n) / n
        dens = np.broadcast_to(np.sin(2 * np.pi * x), (n, n, n)).copy()[None]
        factors = fourier_diffusion_factors((n, n, n), nu, dt)
        out = dens
        for _ in range(steps):
            out = diffuse_exact(out, factors)
        k = 2 * np.pi / n
        expected = np.exp(-nu * k * k * dt * steps)
        ratio = out[0, 0, 0, 8] / dens[0, 0, 0, 8]  # x where sin = 1
        assert abs(ratio - expected) / expected < 1e-3

    def test_diffusion_preserves_mean_and_contracts(self):
        rng = np.random.default_rng(0)
        dens = rng.random((1, 16, 16, 16))
        factors = fourier_diffusion_factors((16, 16, 16), 0.03, 1.0)
        out = diffuse_exact(dens, factors)
        assert abs(out.mean() - dens.mean()) < 1e-12
        spec_in = np.abs(np.fft.rfftn(dens, axes=(1, 2, 3)))
        spec_out = np.abs(np.fft.rfftn(out, axes=(1, 2, 3)))
        assert np.all(spec_out <= spec_in + 1e-9)

    def test_integer_advection_matches_circular_shift(self):
        rng = np.random.default_rng(1)
        dens = rng.random((1, 16, 16, 16)).astype(np.float64)
        vel = np.zeros((3, 16, 16, 16))
        vel[0] = 3.0  # +3 cells along x per step
        out = advect_semi_lagrangian(dens, vel, 1.0)
        expected = circular_shift(field_from_array(dens.astype(np.float32)), (0, 0, 3))
        assert np.abs(out - expected.data).max() < 1e-4

    def test_advection_bounded_by_extrema_exactly(self):
        rng = np.random.default_rng(2)
        dens = rng.random((1, 12, 12, 12))
        vel = rng.normal(0, 1.7, (3, 12, 12, 12))
        out = advect_semi_lagrangian(dens, vel, 1.0)
        assert out.max() <= dens.max()
        assert out.min() >= dens.min()


class TestRunSimulationSequence:
    def test_degenerate_when_nothing_varies(self):
        base = sample_sim_params(9, noise_strength=0.0)
        seq = run_simulation_sequence(base, "f1", 0.0, n=3, steps=5, resolution=8)
        assert seq.degenerate
        assert seq.difficulty == 1.0

    def test_eleven_states(self):
        base = sample_sim_params(10, noise_strength=0.0)
        seq = run_simulation_sequence(base, "f2", 0.02, n=10, steps=3, resolution=8)
        assert len(seq.states) == 11

    def test_unknown_param(self):
        base = sample_sim_params(11)
        with pytest.raises(UnknownParam):
            run_simulation_sequence(base, "f6", 0.1, n=2, steps=1, resolution=8)

    def test_proxy_nondecreasing_mostly(self):
        # calibrated-magnitude perturbations drift monotonically on most steps
        base = sample_sim_params(12, noise_strength=0.0)
        seq = run_simulation_sequence(base, "f1", 0.03, n=6, steps=10, resolution=16)
        proxy = [mse(seq.states[0], seq.states[k]) for k in range(1, 7)]
        increases = sum(1 for a, b in zip(proxy, proxy[1:]) if b >= a)
        assert increases >= 0.8 * (len(proxy) - 1)

    def test_identical_noise_stream_across_variants(self):
        base = sample_sim_params(13, noise_strength=0.05)
        seq = run_simulation_sequence(base, "f1", 0.0, n=2, steps=4, resolution=8, noise_seed=3)
        # delta = 0 with shared noise: all states bitwise identical
        assert np.array_equal(seq.states[0].data, seq.states[1].data)
        assert np.array_equal(seq.states[0].data, seq.states[2].data)


class TestPerturb:
    def test_group_shift(self):
        base = sample_sim_params(14)
        p = perturb_params(base, "f3", 0.25)
        assert np.allclose(p.f[2] - base.f[2], 0.25)
        assert np.array_equal(p.f[0], base.f[0])

    def test_noise_param(self):
        base = sample_sim_params(15, noise_strength=0.01)
        p = perturb_params(base, "noise", 0.02)
        assert p.noise_strength == pytest.approx(0.03)


class TestProcedural:
    def test_wave_kernel_values(self):
        # center value 1, envelope exp(-3.7) at the nominal radius
        assert wave_kernel(np.array(0.0), 0.2, 5.0) == pytest.approx(1.0)
        r = 5.0
        w = 0.17
        val = wave_kernel(np.array(r), w, r)
        assert val == pytest.approx(np.cos(w * r) * np.exp(-3.7), abs=1e-12)
        assert np.exp(-3.7) == pytest.approx(0.0247, abs=1e-4)

    def test_two_coincident_waves_double(self):
        zz = np.arange(8.0)
        single = wave_kernel(zz, 0.2, 4.0)
        assert np.allclose(single + single, 2 * single)

    def test_waves_determinism(self):
        a = gen_waves_sequence(21, 4, 16)
        b = gen_waves_sequence(21, 4, 16)
        for x, y in zip(a.states, b.states):
            assert np.array_equal(x.data, y.data)

    def test_waves_n_zero(self):
        seq = gen_waves_sequence(22, 0, 16)
        assert len(seq.states) == 1
        assert float(seq.states[0].data.max()) > 0

    def test_shapes_determinism_and_marker(self):
        a = gen_shapes_sequence(23, 3, 16)
        b = gen_shapes_sequence(23, 3, 16)
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.states, b.states))
        assert float(a.states[0].data.max()) > 0

    def test_shapes_centroid_moves_monotonically(self):
        # single path: the marker centroid must advance along the path
        for seed in range(40):
            seq = gen_shapes_sequence(seed, 5, 24, smooth=True)
            rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
            if rng.integers(1, 4) == 1:
                break
        else:
            pytest.skip("no single-path seed found")
        zz, yy, xx = np.meshgrid(*([np.arange(24.0)] * 3), indexing="ij")
        cents = []
        for s in seq.states:
            m = s.data[0].astype(np.float64)
            tot = m.sum()
            cents.append(np.array([(zz * m).sum(), (yy * m).sum(), (xx * m).sum()]) / tot)
        direction = cents[-1] - cents[0]
        direction /= np.linalg.norm(direction)
        proj = [float(np.dot(c - cents[0], direction)) for c in cents]
        assert all(b > a - 1e-9 for a, b in zip(proj, proj[1:]))

    def test_smooth_flag_softens_edges(self):
        hard = gen_shapes_sequence(25, 1, 16, smooth=False)
        soft = gen_shapes_sequence(25, 1, 16, smooth=True)
        hard_vals = np.unique(hard.states[0].data)
        soft_vals = np.unique(soft.states[0].data)
        assert len(soft_vals) > len(hard_vals)


class TestCalibrateDelta:
    def test_already_in_band(self):
        calls = []

        def gen(delta, seed):
            calls.append(delta)
            return 0.75

        assert calibrate_delta(gen, 1.0, sample_count=2, max_iter=5) == 1.0
        assert len(calls) == 2

    def test_monotone_synthetic_converges(self):
        # difficulty exp(-delta): in band for delta in [ln(1/0.85), ln(1/0.65)]
        gen = lambda delta, seed: float(np.exp(-delta))
        delta = calibrate_delta(gen, 0.01, sample_count=1, max_iter=10)
        assert 0.65 <= np.exp(-delta) <= 0.85

    def test_constant_difficulty_diverges(self):
        with pytest.raises(CalibrationDiverged):
            calibrate_delta(lambda d, s: 0.2, 1.0, sample_count=1, max_iter=8)

    def test_waves_calibration_smoke(self):
        gen = lambda delta, seed: gen_waves_sequence(seed, 6, 16, travel=delta)
        delta = calibrate_delta(gen, 1.0, sample_count=3, max_iter=10, seed=5)
        diffs = [gen(delta, 900 + i).difficulty for i in range(4)]
        assert 0.5 <= float(np.mean(diffs)) <= 0.95


class TestCutouts:
    def _repo(self, t=6, c=1, s=24, seed=31):
        rng = np.random.default_rng(seed)
        return VolumeRepository(rng.random((t, c, s, s, s), dtype=np.float64).astype(np.float32))

    def test_static_window_identical_states(self):
        repo = self._repo()
        seq = extract_cutout_sequence(repo, (0, 4, 4, 4), 0, (0, 0, 0), 0, 1.0, 3, 8)
        for s in seq.states[1:]:
            assert np.array_equal(s.data, seq.states[0].data)

    def test_temporal_translation(self):
        repo = self._repo()
        seq = extract_cutout_sequence(repo, (0, 2, 2, 2), 1, (0, 0, 0), 0, 1.0, 5, 8)
        assert np.array_equal(seq.states[2].data, repo.data[2, :, 2:10, 2:10, 2:10])

    def test_temporal_offset_thirteen(self):
        # smoke-plume style repositories step 13 frames per state
        repo = self._repo(t=14 * 2 + 1)
        seq = extract_cutout_sequence(repo, (0, 4, 4, 4), 13, (0, 0, 0), 0, 1.0, 2, 8)
        assert np.array_equal(seq.states[1].data, repo.data[13, :, 4:12, 4:12, 4:12])
        assert np.array_equal(seq.states[2].data, repo.data[26, :, 4:12, 4:12, 4:12])

    def test_out_of_bounds_reports_index(self):
        repo = self._repo()
        with pytest.raises(OutOfBounds):
            extract_cutout_sequence(repo, (0, 10, 10, 10), 0, (0, 0, 0), 0, 2.0, 2, 8)

    def test_scale_two_box_filter(self):
        repo = self._repo()
        seq = extract_cutout_sequence(repo, (0, 0, 0, 0), 0, (0, 0, 0), 0, 2.0, 1, 8)
        block = repo.data[0, :, 0:16, 0:16, 0:16].astype(np.float64)
        manual = block.reshape(1, 8, 2, 8, 2, 8, 2).mean(axis=(2, 4, 6))
        assert np.allclose(seq.states[0].data, manual, atol=1e-6)
        assert seq.states[0].dims == (8, 8, 8)

    def test_scale_half_upsamples(self):
        repo = self._repo()
        seq = extract_cutout_sequence(repo, (0, 0, 0, 0), 0, (0, 0, 0), 0, 0.5, 1, 8)
        assert seq.states[0].dims == (8, 8, 8)

    def test_jitter_stays_deterministic(self):
        repo = self._repo()
        a = extract_cutout_sequence(repo, (0, 8, 8, 8), 0, (0, 0, 0), 2, 1.0, 3, 8, seed=4)
        b = extract_cutout_sequence(repo, (0, 8, 8, 8), 0, (0, 0, 0), 2, 1.0, 3, 8, seed=4)
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.states, b.states))
