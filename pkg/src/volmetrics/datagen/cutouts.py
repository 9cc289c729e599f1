"""Method [B]: sequences from spatio-temporal cutouts of a volume repository."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import OutOfBounds
from ..fields import VolumeField, avg_pool, trilinear_resample
from .sequences import Sequence, finalize_sequence


@dataclass
class VolumeRepository:
    """A (time, channel, z, y, x) block of source data, usually memmapped."""

    data: np.ndarray
    path: str = ""

    def __post_init__(self):
        if self.data.ndim == 4:  # single-channel source without a channel axis
            self.data = self.data[:, None]
        if self.data.ndim != 5:
            raise ValueError(f"repository needs (t, c, z, y, x) data, got ndim={self.data.ndim}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def spatial(self) -> tuple:
        return self.data.shape[2:]


def _cutout_side(scale: float, out_dims: int) -> int:
    side = scale * out_dims
    if abs(side - round(side)) > 1e-9:
        raise ValueError(f"scale {scale} times out_dims {out_dims} must be an integer")
    return int(round(side))


def extract_cutout_sequence(
    repo: VolumeRepository,
    base_pos,
    delta_t: int,
    delta_xyz,
    jitter: int,
    scale: float,
    n: int,
    out_dims: int,
    seed: int = 0,
) -> Sequence:
    """Slide a cubical window through the repository by (delta_t, delta_xyz).

    scale 1 copies directly; integer scales > 1 box-filter and stride the
    window; scales < 1 cut a smaller block and upsample trilinearly. The
    optional jitter adds a uniform integer offset per axis per step.
    """
    if not (0.25 <= scale <= 4.0):
        raise ValueError(f"scale {scale} outside [0.25, 4]")
    side = _cutout_side(scale, out_dims)
    if scale > 1 and abs(scale - round(scale)) > 1e-9:
        raise ValueError("scales above 1 must be integers (box filter + stride)")
    t0, z0, y0, x0 = (int(v) for v in base_pos)
    dz, dy, dx = (int(v) for v in delta_xyz)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 404]))
    tdim = repo.frames
    sdims = repo.spatial

    states = []
    for k in range(n + 1):
        jit = rng.integers(-jitter, jitter + 1, 3) if jitter > 0 else np.zeros(3, dtype=int)
        t_k = t0 + k * delta_t
        origin = np.array([z0 + k * dz, y0 + k * dy, x0 + k * dx]) + jit
        if not (0 <= t_k < tdim):
            raise OutOfBounds(f"state {k}: time index {t_k} outside [0, {tdim})")
        for ax, (o, dim) in enumerate(zip(origin, sdims)):
            if o < 0 or o + side > dim:
                raise OutOfBounds(
                    f"state {k}: axis {ax} window [{o}, {o + side}) outside [0, {dim})"
                )
        block = np.ascontiguousarray(
            repo.data[t_k, :, origin[0]:origin[0] + side, origin[1]:origin[1] + side,
                      origin[2]:origin[2] + side]
        ).astype(np.float32)
        kind = "velocity" if repo.channels == 3 else "scalar"
        f = VolumeField(block, kind=kind)
        if scale > 1:
            f = avg_pool(f, int(round(scale)))
        elif scale < 1:
            f = trilinear_resample(f, (out_dims,) * 3)
        states.append(f)
    provenance = {
        "method": "cutout",
        "seed": int(seed),
        "base_pos": [t0, z0, y0, x0],
        "delta_t": int(delta_t),
        "delta_xyz": [dz, dy, dx],
        "jitter": int(jitter),
        "scale": float(scale),
        "varied_param": "position",
        "delta": float(delta_t if delta_t else max(abs(dz), abs(dy), abs(dx))),
        "repository": repo.path,
    }
    return finalize_sequence(states, provenance)
