"""Siamese feature extractors and the distance head.

The multiscale backbone runs identical Conv+ReLU blocks at native, 1/2,
1/4, ... resolution; each block sees the box-pooled raw input concatenated
with the pooled previous block output, so features mix deep and
cross-scale information. A plain wide-strided CNN backbone is kept as an
ablation. Both share the head: per-channel standardized features, squared
differences, a learned non-negative weighted average per feature map,
spatial mean, sum over maps, square root.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import EmptyStream, FieldTooSmall, IndivisibleDims, ShapeMismatch
from ..fields import repeat_to_three_channels
from .tensor import (
    Tensor,
    _make,
    avg_pool3d,
    concat_channels,
    conv3d,
    max_pool3d,
    no_grad,
    relu,
    sqrt,
    stack_scalars,
    sum_,
)

PLAIN_CNN_KERNELS = (12, 5, 3, 3, 3)
PLAIN_CNN_STRIDES = (4, 1, 1, 1, 1)
PLAIN_CNN_CHANNELS = (32, 96, 192, 128, 128)
PLAIN_CNN_PADDINGS = (4, 2, 1, 1, 1)
PLAIN_CNN_POOL_AFTER = (0, 1)  # max pools follow these layer indices


def default_block_channels(scale_count: int) -> tuple:
    plan = (16, 32, 48, 64)
    if scale_count <= 4:
        return plan[:scale_count]
    return plan + (64,) * (scale_count - 4)


@dataclass
class ModelConfig:
    backbone: str = "multiscale"  # multiscale | plain_cnn
    scale_count: int = 4
    convs_per_block: int = 2
    block_channels: tuple = ()
    kernel_size: int = 3
    skip_connections: bool = True
    pooling: bool = True
    in_channels: int = 3
    agg_weight_init: float = 0.1
    dropout_rate: float = 0.2
    dtype: str = "float32"

    def __post_init__(self):
        if not self.block_channels:
            self.block_channels = default_block_channels(self.scale_count)
        self.block_channels = tuple(int(c) for c in self.block_channels)
        if self.backbone == "multiscale" and len(self.block_channels) != self.scale_count:
            raise ValueError("block_channels length must equal scale_count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["block_channels"] = tuple(d.get("block_channels", ()))
        return cls(**d)


class MultiscaleModel:
    """Parameter container for either backbone plus the aggregation head."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.np_dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self.norm_stats = None  # list of (mean, std) per feature map, frozen

    # -- construction ---------------------------------------------------------

    def _add_conv(self, name: str, cin: int, cout: int, k: int, rng):
        bound = 1.0 / np.sqrt(cin * k**3)
        w = rng.uniform(-bound, bound, size=(k, k, k, cin, cout)).astype(self.np_dtype)
        b = rng.uniform(-bound, bound, size=(cout,)).astype(self.np_dtype)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(b, requires_grad=True)

    def conv_plan(self) -> list[tuple[str, int, int, int]]:
        """(name, cin, cout, kernel) for every convolution, in forward order."""
        cfg = self.config
        plan = []
        if cfg.backbone == "plain_cnn":
            cin = cfg.in_channels
            for i, (k, cout) in enumerate(zip(PLAIN_CNN_KERNELS, PLAIN_CNN_CHANNELS)):
                plan.append((f"layers.{i}", cin, cout, k))
                cin = cout
            return plan
        for bi, cout in enumerate(cfg.block_channels):
            if bi == 0:
                cin = cfg.in_channels
            elif cfg.skip_connections:
                cin = cfg.in_channels + cfg.block_channels[bi - 1]
            else:
                cin = cfg.in_channels
            for ci in range(cfg.convs_per_block):
                plan.append((f"blocks.{bi}.convs.{ci}", cin, cout, cfg.kernel_size))
                cin = cout
        return plan

    def feature_map_channels(self) -> list[int]:
        cfg = self.config
        if cfg.backbone == "plain_cnn":
            return list(PLAIN_CNN_CHANNELS)
        return [c for c in cfg.block_channels for _ in range(cfg.convs_per_block)]

    def parameter_count(self) -> int:
        return sum(int(t.data.size) for t in self.params.values())

    def parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    # -- state ----------------------------------------------------------------

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        if self.norm_stats is not None:
            for li, (mu, sd) in enumerate(self.norm_stats):
                out[f"norm.{li}.mean"] = mu
                out[f"norm.{li}.std"] = sd
        return out


def build_model(config: ModelConfig, seed: int = 0) -> MultiscaleModel:
    model = MultiscaleModel(config)
    rng = np.random.default_rng(seed)
    for name, cin, cout, k in model.conv_plan():
        model._add_conv(name, cin, cout, k, rng)
    for li, c in enumerate(model.feature_map_channels()):
        model.params[f"agg.{li}.weight"] = Tensor(
            np.full(c, config.agg_weight_init, dtype=model.np_dtype), requires_grad=True
        )
    return model


# -- forward passes ------------------------------------------------------------


def _to_channels_last(x, dtype) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (C, D, H, W) input, got shape {x.shape}")
    x = repeat_to_three_channels(x)
    return np.ascontiguousarray(x.transpose(1, 2, 3, 0).astype(dtype, copy=False))


def forward_features(model: MultiscaleModel, x) -> list[Tensor]:
    """All ReLU outputs of the backbone for one channel-major input."""
    if model.config.backbone == "plain_cnn":
        return plain_cnn_features(model, x)
    cfg = model.config
    xt = x if isinstance(x, Tensor) else Tensor(_to_channels_last(x, model.np_dtype))
    dims = xt.shape[:3]
    if cfg.pooling:
        step = 2 ** (cfg.scale_count - 1)
        if any(d % step for d in dims):
            raise IndivisibleDims(f"dims {dims} must be divisible by {step}")

    feats = []
    pooled_raw = xt
    prev = None
    for bi in range(cfg.scale_count):
        if bi == 0:
            h = xt
        else:
            if cfg.pooling:
                pooled_raw = avg_pool3d(pooled_raw, 2)
                prev = avg_pool3d(prev, 2)
            h = concat_channels(pooled_raw, prev) if cfg.skip_connections else pooled_raw
        for ci in range(cfg.convs_per_block):
            w = model.params[f"blocks.{bi}.convs.{ci}.weight"]
            b = model.params[f"blocks.{bi}.convs.{ci}.bias"]
            h = relu(conv3d(h, w, b, stride=1))
            feats.append(h)
        prev = h
    return feats


def plain_cnn_features(model: MultiscaleModel, x) -> list[Tensor]:
    """Wide-strided 5-layer backbone with two overlapping max pools."""
    xt = x if isinstance(x, Tensor) else Tensor(_to_channels_last(x, model.np_dtype))
    d, h_, w_ = xt.shape[:3]
    # walk the stride/pool chain to validate the input size up front
    dims = np.array([d, h_, w_])
    for i, (k, s, p) in enumerate(zip(PLAIN_CNN_KERNELS, PLAIN_CNN_STRIDES, PLAIN_CNN_PADDINGS)):
        dims = (dims + 2 * p - k) // s + 1
        if np.any(dims < 1):
            raise FieldTooSmall(f"input {(d, h_, w_)} too small at conv {i}")
        if i in PLAIN_CNN_POOL_AFTER:
            if np.any(dims < 4):
                raise FieldTooSmall(f"input {(d, h_, w_)} too small at pool after conv {i}")
            dims = (dims - 4) // 2 + 1

    feats = []
    h = xt
    for i, (k, s, p) in enumerate(zip(PLAIN_CNN_KERNELS, PLAIN_CNN_STRIDES, PLAIN_CNN_PADDINGS)):
        w = model.params[f"layers.{i}.weight"]
        b = model.params[f"layers.{i}.bias"]
        h = relu(conv3d(h, w, b, stride=s, padding=p))
        feats.append(h)
        if i in PLAIN_CNN_POOL_AFTER:
            h = max_pool3d(h, 4, 2)
    return feats


# -- feature normalization ------------------------------------------------------


def init_feature_normalization(model: MultiscaleModel, samples) -> MultiscaleModel:
    """Per-feature-channel mean/std over a sample stream, then frozen.

    Uses streaming sum/sum-of-squares accumulation in 64-bit; standard
    deviations are clamped below by 1e-6 so constant channels normalize
    to zero instead of blowing up.
    """
    counts = None
    sums = None
    sqsums = None
    for sample in samples:
        with no_grad():
            feats = forward_features(model, sample)
        if counts is None:
            counts = [0] * len(feats)
            sums = [np.zeros(f.shape[-1], dtype=np.float64) for f in feats]
            sqsums = [np.zeros(f.shape[-1], dtype=np.float64) for f in feats]
        for li, f in enumerate(feats):
            flat = f.data.reshape(-1, f.shape[-1]).astype(np.float64)
            counts[li] += flat.shape[0]
            sums[li] += flat.sum(axis=0)
            sqsums[li] += (flat * flat).sum(axis=0)
    if counts is None:
        raise EmptyStream("feature-normalization stream yielded no samples")
    stats = []
    for c, s, q in zip(counts, sums, sqsums):
        mean = s / c
        var = np.maximum(q / c - mean * mean, 0.0)
        std = np.maximum(np.sqrt(var), 1e-6)
        stats.append((mean.astype(model.np_dtype), std.astype(model.np_dtype)))
    model.norm_stats = stats
    return model


def normalize_features(model: MultiscaleModel, feats: list[Tensor]) -> list[Tensor]:
    """Standardize each feature map with the frozen stats (test/reference path)."""
    if model.norm_stats is None:
        raise RuntimeError("feature normalization stats not initialized")
    out = []
    for (mu, sd), f in zip(model.norm_stats, feats):
        centered = _make(
            (f.data - mu) / sd,
            (f,),
            lambda g, f=f, sd=sd: f.accumulate_grad(g / sd),
        )
        out.append(centered)
    return out


# -- distance head ---------------------------------------------------------------


def weighted_sqdiff_mean(fa: Tensor, fb: Tensor, w: Tensor, inv_std: np.ndarray, mask=None) -> Tensor:
    """Weighted average over channels of the mean squared standardized
    feature difference: sum_c w_c k_c mean_sp(((fa_c - fb_c) / std_c)^2) / sum_c w_c.

    The standardization mean cancels inside the difference, so only 1/std
    enters. Fused so the backward pass recomputes the difference instead of
    keeping feature-sized intermediates alive.
    """
    if fa.shape != fb.shape:
        raise ShapeMismatch(f"feature shapes differ: {fa.shape} vs {fb.shape}")
    diff = (fa.data - fb.data) * inv_std
    voxels = diff[..., 0].size
    m = np.einsum("dhwc,dhwc->c", diff, diff, dtype=np.float64) / voxels
    keep = np.ones_like(m) if mask is None else mask.astype(np.float64)
    wsum = float(w.data.sum(dtype=np.float64))
    denom = wsum + 1e-12
    num = float(np.dot(w.data.astype(np.float64), keep * m))
    s = np.asarray(num / denom, dtype=fa.dtype)

    def bwd(g):
        gs = float(g)
        if w.requires_grad:
            gw = gs * (keep * m - num / denom) / denom
            w.accumulate_grad(gw.astype(w.dtype))
        if fa.requires_grad or fb.requires_grad:
            coef = (w.data.astype(np.float64) * keep) * (2.0 * gs / (denom * voxels))
            diff_local = (fa.data - fb.data) * inv_std  # one 1/std factor lives here
            gfa = (diff_local * (coef * inv_std.astype(np.float64))).astype(fa.dtype)
            if fa.requires_grad:
                fa.accumulate_grad(gfa)
            if fb.requires_grad:
                fb.accumulate_grad(-gfa)

    return _make(s, (fa, fb, w), bwd)


def metric_from_features(model: MultiscaleModel, feats_a, feats_b, training: bool = False, rng=None) -> Tensor:
    """Distance head over precomputed feature lists (shared within a sequence)."""
    if model.norm_stats is None:
        raise RuntimeError("run init_feature_normalization before evaluating the metric")
    rate = model.config.dropout_rate
    per_layer = []
    for li, (fa, fb) in enumerate(zip(feats_a, feats_b)):
        w = model.params[f"agg.{li}.weight"]
        inv_std = (1.0 / model.norm_stats[li][1]).astype(model.np_dtype)
        mask = None
        if training and rate > 0.0:
            if rng is None:
                raise ValueError("training-mode metric head needs an rng")
            mask = (rng.random(w.data.shape) >= rate) / (1.0 - rate)
        per_layer.append(weighted_sqdiff_mean(fa, fb, w, inv_std, mask))
    total = sum_(stack_scalars(per_layer))
    return sqrt(total)


def metric_forward(model: MultiscaleModel, a, b, training: bool = False, rng=None) -> Tensor:
    """Siamese distance between two channel-major fields.

    Zero for identical inputs, symmetric by construction, non-negative for
    non-negative aggregation weights. Dropout on the per-channel weights is
    active only in training mode.
    """
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ShapeMismatch(f"input shapes differ: {np.asarray(a).shape} vs {np.asarray(b).shape}")
    feats_a = forward_features(model, a)
    feats_b = forward_features(model, b)
    return metric_from_features(model, feats_a, feats_b, training=training, rng=rng)


def clamp_aggregation_weights(model: MultiscaleModel):
    """Project aggregation weights back onto >= 0 after an optimizer step."""
    for name, t in model.params.items():
        if name.startswith("agg."):
            np.maximum(t.data, 0, out=t.data)
