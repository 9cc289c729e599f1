"""Correlation-based losses, augmentation, and the optimization loop.

The loss couples an MSE term with an inverted Pearson term over the pair
distances of one sequence. For memory-bound setups the pair vector is cut
into slices that are backpropagated one at a time with summed gradients;
means can come from an exact no-grad pre-pass or from running estimates,
and partial correlations can be stabilized by averaging over the slices
seen so far.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstantGroundTruth,
    ConstantInput,
    IndivisibleSliceSize,
    NonFiniteLoss,
    TooShort,
)
from .fields import _ROT_PLANES, normalize_arrays_minmax, repeat_to_three_channels
from .metrics import pearson_corr, srcc
from .nn.model import (
    MultiscaleModel,
    clamp_aggregation_weights,
    forward_features,
    metric_from_features,
)
from .nn.tensor import Tensor, add, div, mean, mul, no_grad, sqrt, square, stack_scalars, sub, sum_
from .simmodel import SimilarityFit, fit_c, ground_truth_distances, normalize_unit

_VAR_EPS = 1e-12  # keeps the correlation term finite when d is constant


@dataclass
class TrainConfig:
    lam1: float = 1.0
    lam2: float = 0.7
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    patience: int = 5
    batch_size: int = 1
    slice_size: int = 55
    use_rm: bool = False
    use_ag: bool = False
    identity_ground_truth: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainLog:
    iterations: list = field(default_factory=list)  # (iteration, loss, epoch)
    epochs: list = field(default_factory=list)  # (epoch, val_loss, val_srcc)
    wall_time: float = 0.0

    def to_csv(self, path):
        rows = ["iteration,loss,epoch,val_loss,val_srcc"]
        merged = [(it, f"{it},{loss!r},{ep},,") for it, loss, ep in self.iterations]
        for ep, vl, vs in self.epochs:
            anchor = max((it for it, _, e in self.iterations if e <= ep), default=0)
            merged.append((anchor + 0.5, f",,{ep},{vl!r},{vs!r}"))
        rows += [line for _, line in sorted(merged, key=lambda t: t[0])]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(rows) + "\n")


# -- losses --------------------------------------------------------------------


def correlation_loss(d: Tensor, g, lam1: float = 1.0, lam2: float = 0.7) -> Tensor:
    """lam1 * mean((d-g)^2) + lam2 * (1 - pearson(d, g)); grads flow to d only."""
    g = np.asarray(g, dtype=np.float64)
    if g.size < 2:
        raise ConstantGroundTruth("need at least two pair distances")
    if float(g.max() - g.min()) == 0.0:
        raise ConstantGroundTruth("ground-truth distances are constant")
    g = g.astype(d.dtype)
    mse_term = mean(square(sub(d, Tensor(g))))
    dm = sub(d, mean(d))
    gm = g - g.mean(dtype=np.float64)
    num = sum_(mul(dm, Tensor(gm.astype(d.dtype))))
    den = mul(sqrt(add(sum_(square(dm)), _VAR_EPS)), float(np.sqrt(np.dot(gm, gm))))
    r = div(num, den)
    return add(mul(lam1, mse_term), mul(lam2, sub(1.0, r)))


@dataclass
class SlicedLossResult:
    slice_losses: list
    slice_correlations: list  # raw partial correlations r_k
    slice_r_terms: list  # values entering the loss (aggregated when AG is on)
    total: float


def sliced_correlation_loss(
    build_slice,
    g,
    v: int,
    lam1: float = 1.0,
    lam2: float = 0.7,
    use_rm: bool = False,
    use_ag: bool = False,
) -> SlicedLossResult:
    """Slice-wise correlation loss with per-slice backpropagation.

    build_slice(indices) must return the distance Tensor for those pair
    indices; it is invoked once per slice for the gradient pass (plus a
    no-grad pre-pass when exact means are requested). Gradients of all
    slices accumulate by summation; no cross-slice graph is kept.
    """
    g = np.asarray(g, dtype=np.float64)
    n = g.size
    if n < 2 or float(g.max() - g.min()) == 0.0:
        raise ConstantGroundTruth("ground-truth distances are constant")
    if v < 1 or n % v:
        raise IndivisibleSliceSize(f"slice size {v} does not divide {n}")
    n_slices = n // v

    if use_rm or n_slices == 1:
        # single slice: the running means already cover the full vector, so
        # the exact pre-pass would just duplicate work
        d_mean = g_mean = None
        seen = 0
        use_rm = True
    else:
        with no_grad():
            d_all = np.concatenate(
                [np.atleast_1d(build_slice(np.arange(k * v, (k + 1) * v)).data) for k in range(n_slices)]
            ).astype(np.float64)
        d_mean = float(d_all.mean())
        g_mean = float(g.mean())

    losses, corrs, r_terms = [], [], []
    for k in range(n_slices):
        idx = np.arange(k * v, (k + 1) * v)
        d_k = build_slice(idx)
        g_k = g[idx]
        if use_rm:
            seen += v
            if d_mean is None:
                d_sum = float(d_k.data.sum(dtype=np.float64))
                g_sum = float(g_k.sum())
            else:
                d_sum += float(d_k.data.sum(dtype=np.float64))
                g_sum += float(g_k.sum())
            d_mean = d_sum / seen
            g_mean = g_sum / seen

        dm = sub(d_k, d_mean)
        gm = (g_k - g_mean).astype(d_k.dtype)
        num = sum_(mul(dm, Tensor(gm)))
        den = mul(
            sqrt(add(sum_(square(dm)), _VAR_EPS)),
            float(np.sqrt(np.dot(g_k - g_mean, g_k - g_mean) + _VAR_EPS)),
        )
        r_k = div(num, den)
        if use_ag:
            prior = sum(corrs)
            r_term = mul(1.0 / (k + 1), add(r_k, prior))
        else:
            r_term = r_k
        mse_term = mean(square(sub(d_k, Tensor(g_k.astype(d_k.dtype)))))
        loss_k = add(mul(lam1, mse_term), mul(lam2, sub(1.0, r_term)))
        corrs.append(float(r_k.data))
        r_terms.append(float(r_term.data))
        loss_val = float(loss_k.data)
        if not np.isfinite(loss_val):
            raise NonFiniteLoss(f"slice {k} produced loss {loss_val}")
        loss_k.backward()
        losses.append(loss_val)
    return SlicedLossResult(losses, corrs, r_terms, float(np.sum(losses)))


# -- augmentation ----------------------------------------------------------------


def augment_sequence(states: list[np.ndarray], kind: str, rng, training: bool = True) -> list[np.ndarray]:
    """One shared transform per sequence.

    Joint [-1, 1] normalization, then (training only) random flips, one
    random 90-degree rotation about a random axis, and for velocity fields
    a random channel permutation. Every state gets the same transform.
    Scalar fields are repeated onto three channels either way.
    """
    states = normalize_arrays_minmax([np.asarray(s) for s in states], -1.0, 1.0)
    if training:
        flips = [int(a) + 1 for a in range(3) if rng.random() < 0.5]
        axis = ("x", "y", "z")[rng.integers(0, 3)]
        turns = int(rng.integers(0, 4))
        perm = rng.permutation(3) if kind == "velocity" else None
        out = []
        for s in states:
            for a in flips:
                s = np.flip(s, axis=a)
            if turns:
                s = np.rot90(s, k=turns, axes=_ROT_PLANES[axis])
            if perm is not None and s.shape[0] == 3:
                s = s[perm]
            out.append(np.ascontiguousarray(s))
        states = out
    return [repeat_to_three_channels(s) for s in states]


# -- optimizer --------------------------------------------------------------------


class Adam:
    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = sorted(named_params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            p.data -= (self.lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)


# -- training loop ------------------------------------------------------------------


def _sequence_arrays(seq):
    if hasattr(seq, "states"):
        kind = seq.states[0].kind
        return [s.data for s in seq.states], kind
    states, kind = seq
    return [np.asarray(s) for s in states], kind


def sequence_ground_truth(states3: list[np.ndarray], identity: bool = False):
    """Fitted (or identity) ground-truth distances for prepared states."""
    n = len(states3) - 1
    try:
        q = normalize_unit(
            np.array([1.0 - pearson_corr(states3[0], states3[i]) for i in range(1, n + 1)])
        )
        fit = fit_c(q)
    except (ConstantInput, TooShort):
        fit = SimilarityFit(gamma=-3.0, residual=0.0, degenerate=True)
    pd = ground_truth_distances(n, fit.c)
    pd.fit = fit
    if identity:
        pd.g = pd.w.copy()
    return pd


def make_pair_distance_builder(model, states3, pairs, training=False, rng=None):
    """build_slice closure: features computed once per state within a slice."""

    def build(idx):
        cache = {}

        def feats(i):
            if i not in cache:
                cache[i] = forward_features(model, states3[i])
            return cache[i]

        ds = [
            metric_from_features(model, feats(pairs[k][0]), feats(pairs[k][1]), training, rng)
            for k in np.atleast_1d(idx)
        ]
        return stack_scalars(ds)

    return build


def sequence_distances(model, states3: list[np.ndarray], pairs) -> np.ndarray:
    """Inference-mode pair distances with one feature pass per state."""
    with no_grad():
        feats = [forward_features(model, s) for s in states3]
        return np.array(
            [float(metric_from_features(model, feats[i], feats[j]).data) for i, j in pairs]
        )


def evaluate_sequences(model, sequences, config: TrainConfig):
    """Mean validation loss and SRCC over sequences (inference path)."""
    losses, sraw = [], []
    for seq in sequences:
        arrays, kind = _sequence_arrays(seq)
        states3 = augment_sequence(arrays, kind, rng=None, training=False)
        pd = sequence_ground_truth(states3, config.identity_ground_truth)
        d = sequence_distances(model, states3, pd.pairs)
        err = d - pd.g
        try:
            corr = pearson_corr(d, pd.g)
        except ConstantInput:
            corr = 0.0
        losses.append(config.lam1 * float(np.mean(err * err)) + config.lam2 * (1.0 - corr))
        try:
            sraw.append(srcc(d, pd.w))
        except ConstantInput:
            sraw.append(0.0)
    return float(np.mean(losses)), float(np.mean(sraw))


def train(model: MultiscaleModel, train_seqs, val_seqs, config: TrainConfig):
    """Optimize the metric on training sequences with early stopping.

    Deterministic for a fixed seed and thread count: one generator drives
    shuffling, augmentation, and dropout in program order. Returns the
    model (restored to its best validation state) and the TrainLog.
    """
    if model.norm_stats is None:
        raise RuntimeError("run init_feature_normalization before train()")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    log = TrainLog()
    t0 = time.perf_counter()
    best = {"val": np.inf, "state": None, "epoch": -1}
    iteration = 0
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_seqs))
        opt.zero_grad()
        pending = 0
        for si in order:
            arrays, kind = _sequence_arrays(train_seqs[si])
            states3 = augment_sequence(arrays, kind, rng, training=True)
            pd = sequence_ground_truth(states3, config.identity_ground_truth)
            if float(pd.g.max() - pd.g.min()) == 0.0:
                continue  # degenerate sequence: no usable ground truth
            build = make_pair_distance_builder(model, states3, pd.pairs, training=True, rng=rng)
            v = config.slice_size if config.slice_size > 0 else len(pd.pairs)
            result = sliced_correlation_loss(
                build, pd.g, v, config.lam1, config.lam2, config.use_rm, config.use_ag
            )
            iteration += 1
            log.iterations.append((iteration, result.total, epoch))
            pending += 1
            if pending >= config.batch_size:
                opt.step()
                clamp_aggregation_weights(model)
                opt.zero_grad()
                pending = 0
        if pending:
            opt.step()
            clamp_aggregation_weights(model)
            opt.zero_grad()
        val_loss, val_srcc = evaluate_sequences(model, val_seqs, config) if val_seqs else (0.0, 0.0)
        log.epochs.append((epoch, val_loss, val_srcc))
        if val_seqs:
            if val_loss < best["val"]:
                best = {
                    "val": val_loss,
                    "state": {n: p.data.copy() for n, p in model.parameters()},
                    "epoch": epoch,
                }
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    break
    if best["state"] is not None:
        for n, p in model.parameters():
            p.data[...] = best["state"][n]
    log.wall_time = time.perf_counter() - t0
    return model, log
