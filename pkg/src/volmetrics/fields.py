"""Dense volumetric fields and the resampling / transform / statistics toolbox.

A field is a channel-major float32 block of shape (channels, depth, height,
width). All operations are pure: they return new fields and never mutate
their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange, IndivisibleDims, NonCubicField, ShapeMismatch

AXES = {"z": 0, "y": 1, "x": 2}


@dataclass(frozen=True)
class VolumeField:
    """A multi-channel 3D grid. kind is one of {scalar, velocity, marker}."""

    data: np.ndarray  # (C, D, H, W) float32
    kind: str = "scalar"

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeMismatch(f"expected (C, D, H, W) data, got ndim={self.data.ndim}")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains non-finite samples")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def with_data(self, data: np.ndarray) -> "VolumeField":
        return VolumeField(np.ascontiguousarray(data, dtype=np.float32), self.kind)


def field_from_array(data, kind="scalar") -> VolumeField:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3:
        data = data[None]
    return VolumeField(np.ascontiguousarray(data), kind)


def normalize_minmax(fields: list[VolumeField], lo: float, hi: float) -> list[VolumeField]:
    """Jointly map the min/max over all fields onto [lo, hi].

    The same affine map is applied to every field so relative magnitudes
    within the list are preserved.
    """
    if not fields:
        raise ValueError("need at least one field")
    vmin = min(float(f.data.min()) for f in fields)
    vmax = max(float(f.data.max()) for f in fields)
    if vmin == vmax:
        raise DegenerateRange(f"joint range is degenerate at {vmin}")
    scale = (hi - lo) / (vmax - vmin)
    return [f.with_data((f.data - vmin) * scale + lo) for f in fields]


def normalize_arrays_minmax(arrays: list[np.ndarray], lo: float, hi: float) -> list[np.ndarray]:
    """Array-level variant of normalize_minmax used on raw state stacks."""
    vmin = min(float(a.min()) for a in arrays)
    vmax = max(float(a.max()) for a in arrays)
    if vmin == vmax:
        raise DegenerateRange(f"joint range is degenerate at {vmin}")
    scale = (hi - lo) / (vmax - vmin)
    return [((a - vmin) * scale + lo).astype(a.dtype) for a in arrays]


def sample_trilinear(data: np.ndarray, zz, yy, xx, mode: str = "clamp", fill: float = 0.0) -> np.ndarray:
    """Trilinear sampling of (C, D, H, W) data at fractional voxel coordinates.

    mode: clamp  - clamp coordinates to the valid range
          wrap   - periodic wrap (for toroidal domains)
          fill   - out-of-range samples become `fill`
    Returns (C,) + coordinate shape.
    """
    C, D, H, W = data.shape
    zz = np.asarray(zz, dtype=np.float64)
    yy = np.asarray(yy, dtype=np.float64)
    xx = np.asarray(xx, dtype=np.float64)

    if mode == "fill":
        eps = 1e-6  # rotation matrices leave ~1e-16 residue at right angles
        inside = (
            (zz >= -eps) & (zz <= D - 1 + eps)
            & (yy >= -eps) & (yy <= H - 1 + eps)
            & (xx >= -eps) & (xx <= W - 1 + eps)
        )

    if mode == "wrap":
        zz = np.mod(zz, D)
        yy = np.mod(yy, H)
        xx = np.mod(xx, W)
        z0 = np.floor(zz).astype(np.int64)
        y0 = np.floor(yy).astype(np.int64)
        x0 = np.floor(xx).astype(np.int64)
        fz, fy, fx = zz - z0, yy - y0, xx - x0
        z1 = (z0 + 1) % D
        y1 = (y0 + 1) % H
        x1 = (x0 + 1) % W
        z0 %= D
        y0 %= H
        x0 %= W
    else:
        zz = np.clip(zz, 0, D - 1)
        yy = np.clip(yy, 0, H - 1)
        xx = np.clip(xx, 0, W - 1)
        z0 = np.floor(zz).astype(np.int64)
        y0 = np.floor(yy).astype(np.int64)
        x0 = np.floor(xx).astype(np.int64)
        # keep the upper corner in range so a coordinate of exactly D-1 works
        z0 = np.minimum(z0, D - 2) if D > 1 else np.zeros_like(z0)
        y0 = np.minimum(y0, H - 2) if H > 1 else np.zeros_like(y0)
        x0 = np.minimum(x0, W - 2) if W > 1 else np.zeros_like(x0)
        fz, fy, fx = zz - z0, yy - y0, xx - x0
        z1 = np.minimum(z0 + 1, D - 1)
        y1 = np.minimum(y0 + 1, H - 1)
        x1 = np.minimum(x0 + 1, W - 1)

    d = data.astype(np.float64, copy=False)
    c000 = d[:, z0, y0, x0]
    c001 = d[:, z0, y0, x1]
    c010 = d[:, z0, y1, x0]
    c011 = d[:, z0, y1, x1]
    c100 = d[:, z1, y0, x0]
    c101 = d[:, z1, y0, x1]
    c110 = d[:, z1, y1, x0]
    c111 = d[:, z1, y1, x1]

    wz, wy, wx = fz[None], fy[None], fx[None]
    out = (
        c000 * (1 - wz) * (1 - wy) * (1 - wx)
        + c001 * (1 - wz) * (1 - wy) * wx
        + c010 * (1 - wz) * wy * (1 - wx)
        + c011 * (1 - wz) * wy * wx
        + c100 * wz * (1 - wy) * (1 - wx)
        + c101 * wz * (1 - wy) * wx
        + c110 * wz * wy * (1 - wx)
        + c111 * wz * wy * wx
    )
    if mode == "fill":
        out = np.where(inside[None], out, fill)
    return out


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    # align-corners: output corners map onto input corners
    if n_out == 1:
        return np.full(1, (n_in - 1) / 2.0)
    return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))


def trilinear_resample(f: VolumeField, target_dims) -> VolumeField:
    """Resample onto target_dims with align-corners trilinear interpolation."""
    td, th, tw = (int(v) for v in target_dims)
    if min(td, th, tw) < 1:
        raise ValueError("target dims must be >= 1 per axis")
    D, H, W = f.dims
    if (td, th, tw) == (D, H, W):
        return f.with_data(f.data.copy())
    cz = _axis_coords(td, D)
    cy = _axis_coords(th, H)
    cx = _axis_coords(tw, W)
    zz, yy, xx = np.meshgrid(cz, cy, cx, indexing="ij")
    out = sample_trilinear(f.data, zz, yy, xx, mode="clamp")
    return f.with_data(out)


# np.rot90 data-axis pairs per rotation axis, ordered so the quarter-turn
# permutation agrees with the inverse-mapping matrices in rotate_arbitrary
_ROT_PLANES = {"z": (2, 3), "y": (3, 1), "x": (1, 2)}


def rotate90(f: VolumeField, axis: str, quarter_turns: int) -> VolumeField:
    """Rotate by quarter_turns * 90 degrees about a coordinate axis.

    Pure index permutation; the sample multiset is unchanged.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    q = int(quarter_turns) % 4
    if q == 0:
        return f.with_data(f.data.copy())
    out = np.rot90(f.data, k=q, axes=_ROT_PLANES[axis])
    return f.with_data(out)


def _rotation_matrix(axis: str, degrees: float) -> np.ndarray:
    """Rotation matrix acting on (z, y, x) index coordinates."""
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    if axis == "z":  # rotates the (y, x) plane
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":  # rotates the (x, z) plane
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == "x":  # rotates the (z, y) plane
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValueError(f"axis must be one of x, y, z, got {axis!r}")


def rotate_arbitrary(
    f: VolumeField, axis: str, degrees: float, fill: float = 0.0, snap_right_angles: bool = True
) -> VolumeField:
    """Rotate a cubic field about its center by an arbitrary angle.

    Inverse-mapping: every output voxel gathers a trilinear sample from the
    source, so there are no holes. Samples falling outside the original frame
    become `fill`; data rotating out of the frame is cut, never rescaled.
    Exact multiples of 90 degrees take the index-permutation path so that
    element-wise metrics stay bit-exactly invariant under them.
    """
    D, H, W = f.dims
    if not (D == H == W):
        raise NonCubicField(f"rotation requires a cubic field, got {f.dims}")
    deg = float(degrees) % 360.0
    if snap_right_angles and deg % 90.0 == 0.0:
        return rotate90(f, axis, int(deg // 90))
    rot = _rotation_matrix(axis, -deg)  # inverse map: output -> source
    c = (D - 1) / 2.0
    idx = np.arange(D, dtype=np.float64) - c
    zz, yy, xx = np.meshgrid(idx, idx, idx, indexing="ij")
    src = np.tensordot(rot, np.stack([zz, yy, xx]), axes=(1, 0)) + c
    out = sample_trilinear(f.data, src[0], src[1], src[2], mode="fill", fill=fill)
    return f.with_data(out)


def flip(f: VolumeField, axis: str) -> VolumeField:
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    return f.with_data(np.flip(f.data, axis=AXES[axis] + 1))


def avg_pool(f: VolumeField, k: int) -> VolumeField:
    """Non-overlapping k^3 box averaging."""
    D, H, W = f.dims
    k = int(k)
    if k < 1 or D % k or H % k or W % k:
        raise IndivisibleDims(f"dims {f.dims} not divisible by k={k}")
    C = f.channels
    blocks = f.data.reshape(C, D // k, k, H // k, k, W // k, k)
    out = blocks.astype(np.float64).mean(axis=(2, 4, 6))
    return f.with_data(out)


def circular_shift(f: VolumeField, offsets) -> VolumeField:
    """Periodic shift by integer (z, y, x) offsets."""
    oz, oy, ox = (int(v) for v in offsets)
    return f.with_data(np.roll(f.data, shift=(oz, oy, ox), axis=(1, 2, 3)))


def field_stats(f: VolumeField) -> tuple[float, float, float, float]:
    d = f.data.astype(np.float64)
    return float(d.mean()), float(d.std()), float(d.min()), float(d.max())


def downsample(f: VolumeField, target_dims) -> VolumeField:
    """Resolution reduction for dataset ingestion.

    Uses box averaging when every axis shrinks by the same integer factor
    (preserves means and kills aliasing), trilinear resampling otherwise.
    """
    td, th, tw = (int(v) for v in target_dims)
    D, H, W = f.dims
    if td <= D and D % td == 0 and (D // td == H // th == W // tw) and H % th == 0 and W % tw == 0:
        k = D // td
        if k == 1:
            return f.with_data(f.data.copy())
        return avg_pool(f, k)
    return trilinear_resample(f, target_dims)


def repeat_to_three_channels(data: np.ndarray) -> np.ndarray:
    """Scalar (1, D, H, W) data repeated onto three channels; 3-channel data passes through."""
    if data.shape[0] == 3:
        return data
    if data.shape[0] == 1:
        return np.repeat(data, 3, axis=0)
    raise ShapeMismatch(f"expected 1 or 3 channels, got {data.shape[0]}")
