"""Command-line surface: generation, calibration, training, evaluation.

Every command reads one JSON configuration file plus flag overrides.
Relative data paths resolve against VOLMETRICS_DATA_ROOT when set. Usage
errors exit 2; data errors exit 1 with one machine-readable JSON line on
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import storage
from .datasets import calibrate_generator, generate_dataset
from .errors import VolmetricsError
from .harness import (
    case_study,
    classical_adapter,
    dataset_srcc,
    difficulty_histogram,
    model_adapter,
    pairs_from_picks,
    rotation_invariance,
    scale_invariance,
    select_invariance_pairs,
)
from .nn.model import ModelConfig, build_model, init_feature_normalization
from .training import TrainConfig, augment_sequence, train


def data_root() -> Path:
    return Path(os.environ.get("VOLMETRICS_DATA_ROOT", "."))


def resolve(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_root() / p


def _load_json(path) -> dict:
    with open(resolve(path), encoding="utf-8") as fh:
        return json.load(fh)


def _limit_threads(threads: int):
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=threads)
    except Exception:
        pass  # reproducibility then rests on a stable environment


def _adapter_for(metric: str, checkpoint):
    if metric == "model":
        if checkpoint is None:
            raise VolmetricsError("--metric model requires --checkpoint")
        return model_adapter(storage.load_checkpoint(resolve(checkpoint)))
    return classical_adapter(metric)


def cmd_generate(args) -> int:
    config = _load_json(args.config)
    if "generator" in config and "sequences" in config:
        config = config["generator"]  # replaying a manifest
    if args.seed is not None:
        config["seed"] = args.seed
    out = resolve(args.out or config.get("dataset_id", "dataset"))
    manifest = generate_dataset(config, out, threads=args.threads)
    print(f"generated {len(manifest['sequences'])} sequences in {out}")
    return 0


def cmd_calibrate(args) -> int:
    config = _load_json(args.config)
    result = calibrate_generator(
        config,
        delta0=args.delta0,
        sample_count=args.samples,
        max_iter=args.max_iter,
    )
    payload = json.dumps(result, sort_keys=True)
    if args.out:
        resolve(args.out).write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def _norm_sample_stream(sequences, limit=None):
    """States prepared exactly as inference sees them: per-sequence joint
    normalization plus scalar repetition."""
    count = 0
    for seq in sequences:
        states3 = augment_sequence(
            [s.data for s in seq.states], seq.states[0].kind, None, training=False
        )
        for arr in states3:
            if limit is not None and count >= int(limit):
                return
            yield arr
            count += 1


def cmd_train(args) -> int:
    config = _load_json(args.config)
    train_seqs = []
    for d in config["train_datasets"]:
        train_seqs.extend(storage.load_dataset(resolve(d)))
    val_seqs = []
    for d in config.get("val_datasets", []):
        val_seqs.extend(storage.load_dataset(resolve(d)))
    model_cfg = ModelConfig.from_dict(config.get("model", {}))
    model = build_model(model_cfg, seed=int(config.get("model_seed", 0)))
    init_feature_normalization(
        model, _norm_sample_stream(train_seqs, config.get("norm_sample_limit"))
    )
    tcfg = TrainConfig(**config.get("training", {}))
    model, log = train(model, train_seqs, val_seqs, tcfg)
    out = resolve(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    storage.save_checkpoint(out / "checkpoint.vsck", model, train_config=tcfg.to_dict())
    log.to_csv(out / "train_log.csv")
    print(f"checkpoint and log written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    adapter = _adapter_for(args.metric, args.checkpoint)
    sequences = storage.load_dataset(resolve(args.dataset))
    report = dataset_srcc(adapter, sequences, dataset_id=Path(args.dataset).name)
    out = resolve(args.out or f"srcc_{args.metric}.csv")
    report.to_csv(out)
    print(f"{args.metric} mean SRCC {report.mean:.4f} over {len(report.per_sequence)} sequences -> {out}")
    return 0


def cmd_invariance(args) -> int:
    adapter = _adapter_for(args.metric, args.checkpoint)
    sequences = storage.load_dataset(resolve(args.dataset))
    picks = select_invariance_pairs(sequences, count=args.pairs, seed=args.seed)
    pairs = pairs_from_picks(adapter, sequences, picks)
    if args.mode == "rotation":
        report = rotation_invariance(adapter, pairs, step=args.step, seed=args.seed)
    else:
        report = scale_invariance(adapter, pairs, factors=tuple(args.factors))
    out = resolve(args.out or f"invariance_{args.mode}_{args.metric}.csv")
    report.to_csv(out)
    print(f"{args.mode} sweep of {args.metric}: {report.distances.shape} -> {out}")
    return 0


def cmd_casestudy(args) -> int:
    adapter = _adapter_for(args.metric, args.checkpoint)
    frames = storage.read_sequence_stack(resolve(args.frames))
    report = case_study(adapter.distance, frames)
    out = resolve(args.out or "casestudy.csv")
    report.to_csv(out)
    summary = {"srcc_a": report.srcc_a, "srcc_b": report.srcc_b, "gamma": report.gamma}
    Path(str(out) + ".json").write_text(json.dumps(summary, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_histogram(args) -> int:
    sequences = storage.load_manifest(resolve(args.dataset))["sequences"]
    report = difficulty_histogram([e["difficulty"] for e in sequences], bin_size=args.bin)
    out = resolve(args.out or "difficulty_histogram.csv")
    report.to_csv(out)
    print(f"difficulty mean {report.mean:.4f} std {report.std:.4f} -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .nn.tensor import (
        Tensor,
        avg_pool3d,
        concat_channels,
        conv3d,
        dropout,
        finite_difference_check,
        max_pool3d,
        mean,
        mul,
        relu,
        sqrt,
        sum_,
    )
    from .nn.model import weighted_sqdiff_mean

    rng = np.random.default_rng(0)

    def t(shape, scale=1.0, shift=0.0):
        return Tensor(rng.random(shape) * scale + shift, requires_grad=True)

    checks = {}
    x, w, b = t((4, 4, 4, 2)), t((3, 3, 3, 2, 3), 0.5, -0.25), t((3,))
    tgt = Tensor(rng.random((4, 4, 4, 3)))
    checks["conv3d"] = finite_difference_check(lambda: sum_(mul(conv3d(x, w, b), tgt)), [x, w, b])
    raw = rng.random((4, 4, 4, 2)) * 2.0 - 1.0
    raw += np.where(raw >= 0, 0.1, -0.1)  # keep the fd sweep off the kink
    xr = Tensor(raw, requires_grad=True)
    tgt_r = Tensor(rng.random((4, 4, 4, 2)))
    checks["relu"] = finite_difference_check(lambda: sum_(mul(relu(xr), tgt_r)), [xr])
    xp = t((4, 4, 4, 2))
    tgt2 = Tensor(rng.random((2, 2, 2, 2)))
    checks["avg_pool3d"] = finite_difference_check(lambda: sum_(mul(avg_pool3d(xp, 2), tgt2)), [xp])
    xm = Tensor(rng.permutation(4**3 * 2).astype(np.float64).reshape(4, 4, 4, 2) * 0.1, requires_grad=True)
    checks["max_pool3d"] = finite_difference_check(lambda: sum_(max_pool3d(xm, 2, 2)), [xm])
    ca, cb = t((3, 3, 3, 2)), t((3, 3, 3, 1))
    tgt3 = Tensor(rng.random((3, 3, 3, 3)))
    checks["concat"] = finite_difference_check(lambda: sum_(mul(concat_channels(ca, cb), tgt3)), [ca, cb])
    xd = t((3, 3, 3, 2))
    checks["dropout_off"] = finite_difference_check(lambda: mean(dropout(xd, 0.5, False)), [xd])
    fa, fb, ww = t((3, 3, 3, 4)), t((3, 3, 3, 4)), t((4,), 1.0, 0.05)
    inv_std = rng.random(4) + 0.5
    checks["head"] = finite_difference_check(lambda: weighted_sqdiff_mean(fa, fb, ww, inv_std), [fa, fb, ww])
    xs = t((5,), 1.0, 0.5)
    checks["normalization"] = finite_difference_check(
        lambda: mean(sqrt(mul(xs, Tensor(np.full(5, 2.0))))), [xs]
    )
    ok = True
    for name, err in checks.items():
        status = "ok" if err < 1e-3 else "FAIL"
        ok = ok and err < 1e-3
        print(f"{name}: max relative error {err:.2e} [{status}]")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="volmetrics", description=__doc__)
    parser.add_argument("--threads", type=int, default=1, help="worker/BLAS thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a sequence dataset")
    p.add_argument("--config", required=True, help="generator config JSON (or a manifest to replay)")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("calibrate", help="calibrate perturbation magnitudes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="write the calibration result JSON here")
    p.add_argument("--delta0", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=10)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("train", help="train the metric")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output run directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="per-sequence SRCC for one metric")
    p.add_argument("--metric", required=True, choices=["mse", "psnr", "ssim", "pearson", "model"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("invariance", help="rotation/scale invariance sweeps")
    p.add_argument("--mode", required=True, choices=["rotation", "scale"])
    p.add_argument("--metric", required=True, choices=["mse", "psnr", "ssim", "pearson", "model"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=5.0)
    p.add_argument("--factors", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    p.add_argument("--out")
    p.set_defaults(fn=cmd_invariance)

    p = sub.add_parser("casestudy", help="long-horizon trajectory study")
    p.add_argument("--frames", required=True, help="VSIM (t,c,z,y,x) frame stack")
    p.add_argument("--metric", default="model", choices=["mse", "psnr", "ssim", "pearson", "model"])
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_casestudy)

    p = sub.add_parser("histogram", help="difficulty histogram of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bin", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_histogram)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _limit_threads(args.threads)
    try:
        return args.fn(args)
    except VolmetricsError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
