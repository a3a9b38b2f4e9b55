"""Command-line entry point: ``tasnn {gen,train,eval,sweep,gradcheck,info}``.

Every command echoes its resolved settings and results as ``key=value``
lines on stdout.  Exit codes: 0 success, 1 configuration error, 2 data or
runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attention import n_dropped
from .config import ExperimentConfig, dump_config, load_config, resolve
from .errors import ConfigurationError, DataError, TASNNError
from .io import load_checkpoint, read_dataset, save_checkpoint, write_dataset
from .metrics import SweepPoint, estimate_flops, pruning_sweep, write_sweep
from .network import STRATEGIES, build
from .seeding import rng_for
from .synth_data import generate_with_windows, split
from .training import evaluate, generic_frames, gradient_check, pruned_layers, train

log = logging.getLogger("tasnn")

GRADCHECK_TOL = 1e-4

# two convolutions and one linear layer with TA everywhere, T=4, 2x8x8 input
TINY_GRADCHECK = {
    "aggregation": {"T": 4},
    "network": {"structure": "Input-2C3-2C3-3", "input_shape": [2, 8, 8], "n_classes": 3, "strategy": "S4"},
    "neuron": {"mode": "liaf"},
    "attention": {"r": 2},
}


def emit(stream, /, **pairs) -> None:
    for k, v in pairs.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        print(f"{k}={v}", file=stream)


def echo_config(cfg: ExperimentConfig, out) -> None:
    for line in dump_config(cfg).splitlines():
        print(f"config: {line}", file=out)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _proportion(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"proportion must lie in [0, 1], got {p}")
    return p


def _proportions(text: str) -> list[float]:
    return [_proportion(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------


def cmd_gen(args, out) -> int:
    cfg = _load(args)
    echo_config(cfg, out)
    sc = cfg.synth_config()
    samples = generate_with_windows(sc)
    indexed = [(s, y, i) for i, (s, y, _) in enumerate(samples)]
    train_part, _ = split(indexed, cfg.data.train_fraction, derive_split_seed(cfg))
    train_ids = {i for _, _, i in train_part}
    splits = ["train" if i in train_ids else "test" for i in range(len(samples))]
    write_dataset(args.out, samples, splits)
    emit(out, samples=len(samples), train=len(train_ids), test=len(samples) - len(train_ids), out=args.out)
    return 0


def derive_split_seed(cfg: ExperimentConfig) -> int:
    from .seeding import derive_seed
    return derive_seed(cfg.seed, "split")


def _dataset_geometry(data):
    s0 = data[0][0]
    return (s0.n_polarities, s0.height, s0.width), max(y for _, y in data) + 1


def cmd_train(args, out) -> int:
    cfg = _load(args)
    if args.neuron is not None:
        cfg = replace(cfg, neuron=replace(cfg.neuron, mode=args.neuron))
    if args.strategy is not None:
        cfg = replace(cfg, network=replace(cfg.network, strategy=args.strategy))
    if args.rcs is not None:
        cfg = replace(cfg, train=replace(cfg.train, use_rcs=args.rcs))
    if args.deterministic:
        cfg = replace(cfg, train=replace(cfg.train, deterministic=True))
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    echo_config(cfg, out)
    data = read_dataset(args.data, "train")
    if not data:
        raise DataError(f"no training samples in {args.data}")
    shape, n_classes = _dataset_geometry(data)
    spec = cfg.network_spec(input_shape=cfg.network.input_shape or shape,
                            n_classes=cfg.network.n_classes or n_classes)
    net = build(spec)

    def progress(rec):
        emit(out, **{k: v for k, v in rec.items() if v is not None})

    from threadpoolctl import threadpool_limits

    # a fixed single-threaded reduction order keeps checkpoints byte-identical
    limit = 1 if cfg.train.deterministic else None
    with threadpool_limits(limits=limit):
        net, history = train(net, data, cfg.train_config(), progress=progress)
    save_checkpoint(net, args.out, history, {"config": cfg.to_dict()})
    hist_path = Path(str(args.out) + ".history.csv")
    with hist_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "train_accuracy", "eval_accuracy"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(history)
    emit(out, checkpoint=args.out, history=hist_path)
    return 0


def cmd_eval(args, out) -> int:
    net, _, _ = load_checkpoint(args.ckpt)
    data = read_dataset(args.data, args.split)
    if not data:
        raise DataError(f"no {args.split} samples in {args.data}")
    from .training import EvalConfig

    if args.iap is not None:
        method, p, seeds = "iap", args.iap, 1
    elif args.irp is not None:
        method, p, seeds = "irp", args.irp, args.seeds
    else:
        method, p, seeds = "none", 0.0, 1
    if seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")
    emit(out, ckpt=args.ckpt, data=args.data, split=args.split, crops=args.crops, pruning=method,
         proportion=p, seeds=seeds)
    accs = []
    for k in range(seeds):
        res = evaluate(net, data, EvalConfig(n_crops=args.crops, pruning=method, proportion=p, seed=k))
        accs.append(res.accuracy)
        emit(out, seed=k, accuracy=res.accuracy, n_evaluated=res.n_evaluated, n_skipped=res.n_skipped,
             mean_frames_retained=res.mean_frames_retained)
        for c, a in sorted(res.per_class.items()):
            emit(out, **{f"class_{c}_accuracy": a})
    red = estimate_flops(net, res.retained_by_layer).guarded_reduction_pct
    point = SweepPoint(p, float(np.mean(accs)), float(np.std(accs)), red, accs)
    write_sweep([point], args.report)
    emit(out, accuracy_mean=point.accuracy_mean, accuracy_std=point.accuracy_std,
         flops_reduction_pct=red, report=args.report)
    return 0


def cmd_sweep(args, out) -> int:
    net, _, _ = load_checkpoint(args.ckpt)
    data = read_dataset(args.data, args.split)
    if not data:
        raise DataError(f"no {args.split} samples in {args.data}")
    emit(out, ckpt=args.ckpt, method=args.method, seeds=args.seeds, crops=args.crops,
         proportions=",".join(f"{p:g}" for p in args.proportions))
    points = pruning_sweep(net, data, args.proportions, args.method, args.seeds, args.crops, args.out)
    for pt in points:
        emit(out, proportion=pt.proportion, accuracy_mean=pt.accuracy_mean, accuracy_std=pt.accuracy_std,
             flops_reduction_pct=pt.flops_reduction_pct)
    emit(out, out=args.out)
    return 0


def cmd_gradcheck(args, out) -> int:
    if args.config:
        cfg = _load(args)
    else:
        cfg = resolve(TINY_GRADCHECK)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    echo_config(cfg, out)
    spec = cfg.network_spec(dtype="float64")
    net = build(spec)
    rng = rng_for(cfg.seed, "gradcheck")
    frames, margin = generic_frames(net, rng)
    labels = np.array([int(rng.integers(spec.n_classes))])
    res = gradient_check(net, frames, labels, eps=args.eps, loss=cfg.train.loss)
    ok = res.max_rel_error < GRADCHECK_TOL
    where = f"{res.location[0]}{list(res.location[1])}" if res.location else "none"
    emit(out, n_checked=res.n_checked, kink_margin=margin, max_rel_error=res.max_rel_error, worst=where,
         tolerance=GRADCHECK_TOL, passed=str(ok).lower())
    return 0 if ok else 2


def cmd_info(args, out) -> int:
    net, history, extra = load_checkpoint(args.ckpt)
    spec = net.spec
    layers = pruned_layers(net)
    dropped = n_dropped(spec.T, args.proportion)
    report = estimate_flops(net, {i: spec.T - dropped for i in layers})
    emit(out, structure=spec.structure, strategy=spec.strategy, neuron=spec.neuron.mode, T=spec.T,
         dt_us=spec.dt_us, r=spec.r, hidden_width=spec.hidden_width,
         total_params=report.total_params, base_params=report.base_params, ta_params=report.ta_params,
         ta_overhead_pct=report.ta_overhead_pct, proportion=args.proportion, frames_dropped=dropped,
         pruned_layers=",".join(str(i) for i in layers) or "none")
    for name, full in report.layer_flops_full.items():
        emit(out, **{f"flops[{name}]": int(full), f"flops_pruned[{name}]": int(report.layer_flops[name])})
    emit(out, ta_flops=int(report.ta_flops), total_flops_full=int(report.total_flops_full),
         total_flops=int(report.total_flops), reduction_pct=report.reduction_pct,
         weighted_reduction_pct=report.weighted_reduction_pct,
         guarded_reduction_pct=report.guarded_reduction_pct, epochs_trained=len(history))
    if "config" in extra:
        print(f"config_json={json.dumps(extra['config'], sort_keys=True)}", file=out)
    return 0


# ---------------------------------------------------------------------------


def _bool_flag(p, name, help_text):
    g = p.add_mutually_exclusive_group()
    g.add_argument(f"--{name}", dest=name, action="store_const", const=True, default=None, help=help_text)
    g.add_argument(f"--no-{name}", dest=name, action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tasnn", description="Temporal-attention spiking networks on event streams.")
    ap.add_argument("--threads", type=int, default=None, help="BLAS threads (default: config value or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--neuron", choices=("lif", "liaf"))
    _bool_flag(p, "rcs", "random consecutive slice augmentation")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="crop-voting evaluation, optionally with input pruning")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--crops", type=int, default=10)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--iap", type=_proportion, metavar="P")
    g.add_argument("--irp", type=_proportion, metavar="P")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--report", default="eval_report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="accuracy and FLOPs over pruning proportions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--proportions", type=_proportions, required=True)
    p.add_argument("--method", choices=("iap", "irp"), required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--crops", type=int, default=10)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    p.add_argument("--config")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("info", help="parameter and FLOPs report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--proportion", type=_proportion, default=0.0)
    p.set_defaults(func=cmd_info)
    return ap


def run(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = args.threads
        if threads is None and getattr(args, "config", None):
            threads = load_config(args.config).threads
        threads = threads or 1
        if threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return args.func(args, out)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, TASNNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
