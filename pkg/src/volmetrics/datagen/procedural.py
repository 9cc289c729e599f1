"""Procedural marker-field generators: moving shapes and damped waves.

Objects travel along random straight paths; state k places each object at
the k/n-interpolated position, so adjacent states differ by a controlled
displacement. The travel factor scales that displacement and is the knob
the difficulty calibration turns.
"""

from __future__ import annotations

import numpy as np

from ..fields import VolumeField
from .sequences import Sequence, finalize_sequence

NOISE_SIGMA = 0.1
EDGE_WIDTH = 1.5  # voxels, for smoothed shape borders


def _random_paths(rng, size: int, count: int):
    """Straight start->end paths away from the boundary with a length floor."""
    margin = 0.15 * size
    min_len = 0.4 * size
    paths = []
    while len(paths) < count:
        start = rng.uniform(margin, size - 1 - margin, 3)
        end = rng.uniform(margin, size - 1 - margin, 3)
        if np.linalg.norm(end - start) >= min_len:
            paths.append((start, end))
    return paths


def _coord_grids(size: int):
    idx = np.arange(size, dtype=np.float64)
    return np.meshgrid(idx, idx, idx, indexing="ij")


def wave_kernel(radius_grid: np.ndarray, waviness: float, radius: float) -> np.ndarray:
    """Damped cosine wave: cos(w * r) * exp(-3.7 * r / radius)."""
    return np.cos(waviness * radius_grid) * np.exp(-3.7 * radius_grid / radius)


def gen_waves_sequence(
    seed: int, n: int, out_dims: int, noise: bool = False, travel: float = 1.0
) -> Sequence:
    size = int(out_dims)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    count = int(rng.integers(1, 4))
    paths = _random_paths(rng, size, count)
    waves = []
    for start, end in paths:
        length = float(np.linalg.norm(end - start))
        radius = float(np.clip(rng.uniform(0.25, 0.45) * length, 2.5, 0.45 * size))
        waviness = float(rng.uniform(0.1, 0.3))
        waves.append((start, end, radius, waviness))
    zz, yy, xx = _coord_grids(size)
    states = []
    for k in range(n + 1):
        frac = 0.0 if n == 0 else k / n
        field = np.zeros((size, size, size))
        for start, end, radius, waviness in waves:
            c = start + frac * travel * (end - start)
            r = np.sqrt((zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2)
            field += wave_kernel(r, waviness, radius)
        if noise:
            field = field + NOISE_SIGMA * rng.standard_normal(field.shape)
        states.append(VolumeField(field[None].astype(np.float32), kind="marker"))
    provenance = {
        "method": "waves",
        "seed": int(seed),
        "travel": float(travel),
        "noise": bool(noise),
        "varied_param": "position",
        "delta": float(travel),
    }
    return finalize_sequence(states, provenance)


def _sphere_marker(zz, yy, xx, center, radius, smooth):
    r = np.sqrt((zz - center[0]) ** 2 + (yy - center[1]) ** 2 + (xx - center[2]) ** 2)
    if smooth:
        return np.clip((radius + EDGE_WIDTH / 2 - r) / EDGE_WIDTH, 0.0, 1.0)
    return (r <= radius).astype(np.float64)


def _box_marker(zz, yy, xx, center, half, smooth):
    parts = []
    for grid, c in ((zz, center[0]), (yy, center[1]), (xx, center[2])):
        d = np.abs(grid - c)
        if smooth:
            parts.append(np.clip((half + EDGE_WIDTH / 2 - d) / EDGE_WIDTH, 0.0, 1.0))
        else:
            parts.append((d <= half).astype(np.float64))
    return parts[0] * parts[1] * parts[2]


def gen_shapes_sequence(
    seed: int,
    n: int,
    out_dims: int,
    smooth: bool = False,
    noise: bool = False,
    travel: float = 1.0,
) -> Sequence:
    size = int(out_dims)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 202]))
    count = int(rng.integers(1, 4))
    paths = _random_paths(rng, size, count)
    shapes = []
    for start, end in paths:
        length = float(np.linalg.norm(end - start))
        half = float(np.clip(rng.uniform(0.2, 0.4) * length, 2.5, 0.45 * size))
        kind = "box" if rng.random() < 0.5 else "sphere"
        shapes.append((start, end, half, kind))
    zz, yy, xx = _coord_grids(size)
    states = []
    for k in range(n + 1):
        frac = 0.0 if n == 0 else k / n
        field = np.zeros((size, size, size))
        for start, end, half, kind in shapes:
            c = start + frac * travel * (end - start)
            if kind == "sphere":
                field += _sphere_marker(zz, yy, xx, c, half, smooth)
            else:
                field += _box_marker(zz, yy, xx, c, half, smooth)
        if noise:
            field = field + NOISE_SIGMA * rng.standard_normal(field.shape)
        states.append(VolumeField(field[None].astype(np.float32), kind="marker"))
    provenance = {
        "method": "shapes",
        "seed": int(seed),
        "travel": float(travel),
        "smooth": bool(smooth),
        "noise": bool(noise),
        "varied_param": "position",
        "delta": float(travel),
    }
    return finalize_sequence(states, provenance)
