"""Sequence assembly, simulation-driven generation, and difficulty calibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CalibrationDiverged, ConstantInput, TooShort
from ..fields import VolumeField
from ..simmodel import (
    SimilarityFit,
    fit_c,
    normalize_unit,
    proxy_difficulty,
    sequence_proxy_distances,
)
from .solvers import SimParams, TransportSim, perturb_params

DIFFICULTY_BAND = (0.65, 0.85)


@dataclass
class Sequence:
    """Ordered states of decreasing similarity plus generation metadata."""

    states: list[VolumeField]
    provenance: dict
    difficulty: float
    fit: SimilarityFit

    @property
    def n(self) -> int:
        return len(self.states) - 1

    @property
    def degenerate(self) -> bool:
        return bool(self.provenance.get("degenerate", False))


def finalize_sequence(states: list[VolumeField], provenance: dict) -> Sequence:
    """Record difficulty and the fitted similarity curvature.

    A constant proxy trajectory means the states barely change; such
    sequences are flagged degenerate and scored as maximally easy so that
    calibration pushes the perturbation up instead of aborting.
    """
    degenerate = False
    if len(states) < 3:
        # no proxy trajectory to speak of; record as trivially easy
        difficulty = 1.0
        degenerate = True
    else:
        try:
            difficulty = proxy_difficulty(states)
        except ConstantInput:
            difficulty = 1.0
            degenerate = True
    if len(states) < 2:
        fit = SimilarityFit(gamma=-3.0, residual=0.0, degenerate=True)
    else:
        try:
            fit = fit_c(normalize_unit(sequence_proxy_distances(states)))
        except (ConstantInput, TooShort):
            fit = SimilarityFit(gamma=-3.0, residual=0.0, degenerate=True)
    provenance = dict(provenance)
    provenance["degenerate"] = bool(degenerate or fit.degenerate)
    return Sequence(states=states, provenance=provenance, difficulty=float(difficulty), fit=fit)


def run_simulation_sequence(
    base: SimParams,
    varied_param_id: str,
    delta: float,
    n: int,
    steps: int = 120,
    resolution: int = 32,
    noise_seed: int = 0,
) -> Sequence:
    """Method [A]: n+1 runs that differ only in one parameter by k * delta.

    Every variant replays the identical noise stream, so the varied
    parameter is the only difference between states.
    """
    states = []
    for k in range(n + 1):
        params_k = perturb_params(base, varied_param_id, k * delta)
        sim = TransportSim(params_k, resolution)
        noise_rng = np.random.default_rng(np.random.SeedSequence([int(noise_seed), 777]))
        sim.run(steps, noise_rng)
        out = sim.output_field()
        kind = "velocity" if base.solver == "burgers" else "scalar"
        states.append(VolumeField(out.astype(np.float32), kind=kind))
    provenance = {
        "method": base.solver,
        "seed": base.seed,
        "noise_seed": int(noise_seed),
        "varied_param": varied_param_id,
        "delta": float(delta),
        "steps": int(steps),
        "resolution": int(resolution),
        "noise_strength": base.noise_strength,
    }
    return finalize_sequence(states, provenance)


def calibrate_delta(
    generator,
    delta0: float,
    band: tuple = DIFFICULTY_BAND,
    sample_count: int = 5,
    max_iter: int = 10,
    seed: int = 0,
) -> float:
    """Tune the perturbation magnitude until mean difficulty lands in band.

    generator(delta, seed) must return a Sequence (or a difficulty float,
    for tests). Above the band the sequences are too easy and delta
    doubles; below it delta halves; once both sides are bracketed the
    search bisects geometrically.
    """
    if delta0 <= 0:
        raise ValueError("delta0 must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    lo_band, hi_band = band
    delta = float(delta0)
    easy = None  # delta known to be too easy (difficulty above band)
    hard = None  # delta known to be too difficult (below band)
    for it in range(max_iter):
        sample = []
        for i in range(sample_count):
            out = generator(delta, int(seed) * 100003 + it * 1009 + i)
            sample.append(out.difficulty if isinstance(out, Sequence) else float(out))
        mean_diff = float(np.mean(sample))
        if lo_band <= mean_diff <= hi_band:
            return delta
        if mean_diff > hi_band:
            easy = delta
        else:
            hard = delta
        if easy is not None and hard is not None:
            delta = float(np.sqrt(easy * hard))
        elif mean_diff > hi_band:
            delta = delta * 2.0
        else:
            delta = delta * 0.5
    raise CalibrationDiverged(
        f"no delta reached mean difficulty in [{lo_band}, {hi_band}] after {max_iter} iterations"
    )
