from .cutouts import VolumeRepository, extract_cutout_sequence
from .procedural import gen_shapes_sequence, gen_waves_sequence
from .sequences import DIFFICULTY_BAND, Sequence, calibrate_delta, finalize_sequence, run_simulation_sequence
from .solvers import (
    SimParams,
    TransportSim,
    VARIED_PARAMS,
    advect_semi_lagrangian,
    diffuse_exact,
    fourier_diffusion_factors,
    force_field,
    init_advdiff_state,
    perturb_params,
    sample_sim_params,
)

__all__ = [
    "DIFFICULTY_BAND",
    "Sequence",
    "SimParams",
    "TransportSim",
    "VARIED_PARAMS",
    "VolumeRepository",
    "advect_semi_lagrangian",
    "calibrate_delta",
    "diffuse_exact",
    "extract_cutout_sequence",
    "finalize_sequence",
    "force_field",
    "fourier_diffusion_factors",
    "gen_shapes_sequence",
    "gen_waves_sequence",
    "init_advdiff_state",
    "perturb_params",
    "run_simulation_sequence",
    "sample_sim_params",
]
