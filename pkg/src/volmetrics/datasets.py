"""Dataset generation: config-driven sequence batches plus manifests.

Every sequence draws its own seed from (dataset seed, index), so batches
are reproducible bit for bit regardless of worker count and order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .datagen import (
    calibrate_delta,
    extract_cutout_sequence,
    gen_shapes_sequence,
    gen_waves_sequence,
    run_simulation_sequence,
    sample_sim_params,
)
from .datagen.sequences import DIFFICULTY_BAND, Sequence
from .errors import OutOfBounds, UnknownParam
from .storage import open_repository, sequence_entry, write_manifest, write_sequence_stack

SIM_METHODS = ("advdiff", "advdiff_densitynoise", "burgers")
FIELD_KINDS = {
    "waves": "marker",
    "shapes": "marker",
    "advdiff": "scalar",
    "advdiff_densitynoise": "scalar",
    "burgers": "velocity",
}


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def _delta_for(config: dict, param: str) -> float:
    delta = config.get("delta", 1.0)
    if isinstance(delta, dict):
        if param not in delta:
            raise UnknownParam(f"no calibrated delta recorded for {param!r}")
        return float(delta[param])
    return float(delta)


def generate_sequence(config: dict, index: int) -> Sequence:
    method = config["method"]
    n = int(config.get("n", 10))
    res = int(config["resolution"])
    seed_i = derive_seed(config["seed"], index)
    if method == "waves":
        return gen_waves_sequence(
            seed_i, n, res, noise=config.get("noise", False), travel=float(config.get("travel", 1.0))
        )
    if method == "shapes":
        return gen_shapes_sequence(
            seed_i,
            n,
            res,
            smooth=config.get("smooth", False),
            noise=config.get("noise", False),
            travel=float(config.get("travel", 1.0)),
        )
    if method in SIM_METHODS:
        varied = config.get("varied_params", ["f1"])
        param = varied[index % len(varied)]
        base = sample_sim_params(seed_i, method, float(config.get("noise_strength", 0.01)))
        return run_simulation_sequence(
            base,
            param,
            _delta_for(config, param),
            n,
            steps=int(config.get("steps", 120)),
            resolution=res,
            noise_seed=seed_i,
        )
    if method == "cutout":
        return _generate_cutout(config, index, seed_i, n, res)
    raise ValueError(f"unknown generation method {method!r}")


def _generate_cutout(config: dict, index: int, seed_i: int, n: int, out_dims: int) -> Sequence:
    repo = open_repository(config["repository"])
    rng = np.random.default_rng(np.random.SeedSequence([seed_i, 555]))
    scales = config.get("scales", [1.0])
    weights = np.array(config.get("scale_weights", [1.0] * len(scales)), dtype=np.float64)
    weights = weights / weights.sum()
    scale = float(scales[int(rng.choice(len(scales), p=weights))])
    dt = int(config.get("delta_t", 1))
    dxyz = [int(v) for v in config.get("delta_xyz", [0, 0, 0])]
    jitter = int(config.get("jitter", 0))
    side = int(round(scale * out_dims))
    t_span = n * dt
    t_max = repo.frames - 1 - t_span
    if t_max < 0:
        raise OutOfBounds(f"repository too short for n={n} steps of delta_t={dt}")
    t0 = int(rng.integers(0, t_max + 1))
    origin = []
    for ax, dim in enumerate(repo.spatial):
        travel = n * dxyz[ax]
        lo = jitter + max(0, -travel)
        hi = dim - side - jitter - max(0, travel)
        if hi < lo:
            raise OutOfBounds(f"axis {ax}: no valid window for side {side} in dim {dim}")
        origin.append(int(rng.integers(lo, hi + 1)))
    return extract_cutout_sequence(
        repo,
        (t0, *origin),
        dt,
        dxyz,
        jitter,
        scale,
        n,
        out_dims,
        seed=seed_i,
    )


def calibrate_generator(config: dict, delta0: float = 1.0, sample_count: int = 5,
                        max_iter: int = 10, band=DIFFICULTY_BAND):
    """Calibrated perturbation magnitudes for a generation config.

    Procedural methods calibrate the travel factor; simulation methods
    calibrate one delta per varied parameter.
    """
    method = config["method"]
    n = int(config.get("n", 10))
    res = int(config["resolution"])
    if method == "waves":
        gen = lambda delta, seed: gen_waves_sequence(
            seed, n, res, noise=config.get("noise", False), travel=delta
        )
        return {"travel": calibrate_delta(gen, delta0, band, sample_count, max_iter, config["seed"])}
    if method == "shapes":
        gen = lambda delta, seed: gen_shapes_sequence(
            seed, n, res, smooth=config.get("smooth", False),
            noise=config.get("noise", False), travel=delta,
        )
        return {"travel": calibrate_delta(gen, delta0, band, sample_count, max_iter, config["seed"])}
    if method in SIM_METHODS:
        deltas = {}
        for param in config.get("varied_params", ["f1"]):
            def gen(delta, seed, param=param):
                base = sample_sim_params(seed, method, float(config.get("noise_strength", 0.01)))
                return run_simulation_sequence(
                    base, param, delta, n, steps=int(config.get("steps", 120)),
                    resolution=res, noise_seed=seed,
                )
            deltas[param] = calibrate_delta(gen, delta0, band, sample_count, max_iter, config["seed"])
        return {"delta": deltas}
    raise ValueError(f"method {method!r} has no calibration knob")


def generate_dataset(config: dict, out_dir, threads: int = 1) -> dict:
    """Generate `count` sequences, write VSIM stacks, return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count = int(config["count"])
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            sequences = list(pool.map(generate_sequence, [config] * count, range(count)))
    else:
        sequences = [generate_sequence(config, i) for i in range(count)]
    entries = []
    for i, seq in enumerate(sequences):
        fname = f"seq_{i:04d}.vsim"
        write_sequence_stack(out / fname, seq.states)
        entries.append(sequence_entry(fname, seq))
    first = sequences[0]
    manifest = {
        "format_version": 1,
        "dataset_id": config.get("dataset_id", out.name),
        "method": config["method"],
        "seed": int(config["seed"]),
        "n": len(first.states) - 1,
        "resolution": list(first.states[0].dims),
        "field_kind": first.states[0].kind,
        "generator": config,
        "sequences": entries,
    }
    write_manifest(out, manifest)
    return manifest
