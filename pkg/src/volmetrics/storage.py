"""Binary volume format, checkpoints, and dataset manifests.

VSIM volume layout (all integers little-endian u32 unless noted):

    magic   4 bytes  b"VSIM"
    version u32      1
    mask    u32      bit per present dim, order (t, c, z, y, x)
    ndim    u32      number of present dims
    dims    u32[ndim]
    dtype   u32      0 = 32-bit float
    payload little-endian float32, C order over the present dims

One format serves single fields (c,z,y,x), sequences and repositories
(t,c,z,y,x), and case-study frame stacks. Checkpoints use a JSON header
with a tensor directory followed by raw little-endian tensor bytes, so a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    ArchitectureMismatch,
    BadMagic,
    ShapeOverflow,
    TruncatedFile,
    VersionUnsupported,
)
from .fields import VolumeField
from .datagen.cutouts import VolumeRepository
from .datagen.sequences import Sequence
from .nn.model import ModelConfig, MultiscaleModel, build_model
from .simmodel import SimilarityFit

VSIM_MAGIC = b"VSIM"
VSIM_VERSION = 1
CKPT_MAGIC = b"VSCK"
CKPT_VERSION = 1
MAX_SAMPLES = 1 << 40  # sanity limit against corrupt headers

DIM_BITS = {"t": 1, "c": 2, "z": 4, "y": 8, "x": 16}
DIM_ORDER = "tczyx"


def _mask_for(axes: str) -> int:
    return sum(DIM_BITS[a] for a in axes)


def write_vsim(path, data: np.ndarray, axes: str):
    """Write an array whose dims follow `axes` (a subset of 'tczyx', in order)."""
    if data.ndim != len(axes):
        raise ValueError(f"array ndim {data.ndim} vs axes {axes!r}")
    if any(DIM_ORDER.index(a) >= DIM_ORDER.index(b) for a, b in zip(axes, axes[1:])):
        raise ValueError(f"axes {axes!r} must follow order {DIM_ORDER!r}")
    payload = np.ascontiguousarray(data, dtype="<f4")
    header = struct.pack(
        f"<4sIII{data.ndim}II",
        VSIM_MAGIC,
        VSIM_VERSION,
        _mask_for(axes),
        data.ndim,
        *data.shape,
        0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def _read_vsim_header(fh, path):
    head = fh.read(16)
    if len(head) < 16:
        raise TruncatedFile(f"{path}: header cut short")
    magic, version, mask, ndim = struct.unpack("<4sIII", head)
    if magic != VSIM_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}")
    if version != VSIM_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    axes = "".join(a for a in DIM_ORDER if mask & DIM_BITS[a])
    if ndim != len(axes) or ndim == 0 or ndim > 5:
        raise ShapeOverflow(f"{path}: ndim {ndim} inconsistent with mask {mask:#x}")
    raw = fh.read(4 * ndim + 4)
    if len(raw) < 4 * ndim + 4:
        raise TruncatedFile(f"{path}: dim table cut short")
    *dims, dtype_code = struct.unpack(f"<{ndim}II", raw)
    if dtype_code != 0:
        raise VersionUnsupported(f"{path}: dtype code {dtype_code}")
    count = 1
    for d in dims:
        if d < 1:
            raise ShapeOverflow(f"{path}: dim {d} invalid")
        count *= d
        if count > MAX_SAMPLES:
            raise ShapeOverflow(f"{path}: {count} samples exceeds limit")
    return axes, tuple(dims), 16 + 4 * ndim + 4


def read_vsim(path):
    """Read a VSIM file fully into memory; returns (array, axes)."""
    path = Path(path)
    with open(path, "rb") as fh:
        axes, dims, offset = _read_vsim_header(fh, path)
        count = int(np.prod(dims))
        payload = fh.read(4 * count)
        if len(payload) < 4 * count:
            raise TruncatedFile(f"{path}: payload {len(payload)} bytes, need {4 * count}")
        data = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return np.ascontiguousarray(data), axes


def write_volume(path, f: VolumeField):
    write_vsim(path, f.data, "czyx")


def read_volume(path, kind: str | None = None) -> VolumeField:
    data, axes = read_vsim(path)
    if axes != "czyx":
        raise ShapeOverflow(f"{path}: expected a (c,z,y,x) volume, got axes {axes!r}")
    if kind is None:
        kind = "velocity" if data.shape[0] == 3 else "scalar"
    return VolumeField(data, kind=kind)


def write_sequence_stack(path, states: list[VolumeField]):
    stack = np.stack([s.data for s in states])
    write_vsim(path, stack, "tczyx")


def read_sequence_stack(path, kind: str | None = None) -> list[VolumeField]:
    data, axes = read_vsim(path)
    if axes != "tczyx":
        raise ShapeOverflow(f"{path}: expected a (t,c,z,y,x) stack, got axes {axes!r}")
    if kind is None:
        kind = "velocity" if data.shape[1] == 3 else "scalar"
    return [VolumeField(np.ascontiguousarray(frame), kind=kind) for frame in data]


def open_repository(path) -> VolumeRepository:
    """Memory-map a (t,c,z,y,x) VSIM file as a cutout source."""
    path = Path(path)
    with open(path, "rb") as fh:
        axes, dims, offset = _read_vsim_header(fh, path)
    if "t" not in axes or "z" not in axes:
        raise ShapeOverflow(f"{path}: repository needs t and spatial dims, got {axes!r}")
    expected = offset + 4 * int(np.prod(dims))
    actual = path.stat().st_size
    if actual < expected:
        raise TruncatedFile(f"{path}: file {actual} bytes, header needs {expected}")
    if actual > expected:
        raise ShapeOverflow(f"{path}: {actual - expected} trailing bytes beyond declared dims")
    mm = np.memmap(path, dtype="<f4", mode="r", offset=offset, shape=dims)
    if "c" not in axes:
        mm = mm[:, None]
    return VolumeRepository(mm, path=str(path))


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: MultiscaleModel, train_config: dict | None = None):
    if model.norm_stats is None:
        raise ValueError("model has no feature-normalization stats; run the init pass first")
    arrays = model.named_arrays()
    directory = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        directory.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": CKPT_VERSION,
        "arch": model.config.to_dict(),
        "tensors": directory,
        "train_config": train_config,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> MultiscaleModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise BadMagic(f"{path}: magic {magic!r}")
        meta = fh.read(12)
        if len(meta) < 12:
            raise TruncatedFile(f"{path}: checkpoint header cut short")
        version, header_len = struct.unpack("<IQ", meta)
        if version != CKPT_VERSION:
            raise VersionUnsupported(f"{path}: checkpoint version {version}")
        raw = fh.read(header_len)
        if len(raw) < header_len:
            raise TruncatedFile(f"{path}: header json cut short")
        header = json.loads(raw.decode("utf-8"))
        payload_start = 16 + header_len
        size = path.stat().st_size
        config = ModelConfig.from_dict(header["arch"])
        model = build_model(config, seed=0)
        tensors = {}
        for entry in header["tensors"]:
            span_end = payload_start + entry["offset"] + entry["nbytes"]
            if span_end > size:
                raise TruncatedFile(f"{path}: tensor {entry['name']} spans past end of file")
            fh.seek(payload_start + entry["offset"])
            blob = fh.read(entry["nbytes"])
            arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            tensors[entry["name"]] = np.ascontiguousarray(arr)
    norm_means = {}
    norm_stds = {}
    for name, arr in tensors.items():
        if name.startswith("norm."):
            _, idx, stat = name.split(".")
            (norm_means if stat == "mean" else norm_stds)[int(idx)] = arr
            continue
        if name not in model.params:
            raise ArchitectureMismatch(f"{path}: unexpected tensor {name}")
        if tuple(model.params[name].data.shape) != tuple(arr.shape):
            raise ArchitectureMismatch(
                f"{path}: {name} shape {arr.shape} vs architecture {model.params[name].data.shape}"
            )
        model.params[name].data = arr.astype(model.np_dtype, copy=True)
    missing = [n for n in model.params if n not in tensors]
    if missing:
        raise ArchitectureMismatch(f"{path}: missing tensors {missing[:3]}")
    if norm_means:
        count = len(model.feature_map_channels())
        if sorted(norm_means) != list(range(count)) or sorted(norm_stds) != list(range(count)):
            raise ArchitectureMismatch(f"{path}: normalization stats incomplete")
        model.norm_stats = [
            (norm_means[i].astype(model.np_dtype), norm_stds[i].astype(model.np_dtype))
            for i in range(count)
        ]
    return model


# -- manifests -------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def sequence_entry(filename: str, seq: Sequence) -> dict:
    return {
        "file": filename,
        "seed": seq.provenance.get("seed"),
        "varied_param": seq.provenance.get("varied_param"),
        "delta": seq.provenance.get("delta"),
        "difficulty": seq.difficulty,
        "gamma": seq.fit.gamma,
        "degenerate": seq.degenerate,
    }


def write_manifest(directory, manifest: dict):
    path = Path(directory) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def load_manifest(directory_or_path) -> dict:
    p = Path(directory_or_path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


def validate_manifest(manifest: dict, base_dir) -> None:
    """Every referenced sequence file must exist with the declared shape."""
    base = Path(base_dir)
    res = tuple(manifest["resolution"])
    n = int(manifest["n"])
    for entry in manifest["sequences"]:
        fp = base / entry["file"]
        if not fp.exists():
            raise TruncatedFile(f"manifest references missing file {fp}")
        data, axes = read_vsim(fp)
        if axes != "tczyx" or data.shape[0] != n + 1 or data.shape[2:] != res:
            raise ShapeOverflow(
                f"{fp}: shape {data.shape} does not match manifest (n={n}, resolution={res})"
            )


def load_dataset(directory) -> list[Sequence]:
    """Rehydrate all sequences of a dataset directory."""
    base = Path(directory)
    manifest = load_manifest(base)
    kind = manifest.get("field_kind", "scalar")
    out = []
    for entry in manifest["sequences"]:
        states = read_sequence_stack(base / entry["file"], kind=kind)
        fit = SimilarityFit(gamma=float(entry["gamma"]), residual=0.0,
                            degenerate=bool(entry["degenerate"]))
        provenance = {
            "method": manifest["method"],
            "seed": entry["seed"],
            "varied_param": entry["varied_param"],
            "delta": entry["delta"],
            "degenerate": bool(entry["degenerate"]),
        }
        out.append(
            Sequence(states=states, provenance=provenance,
                     difficulty=float(entry["difficulty"]), fit=fit)
        )
    return out
