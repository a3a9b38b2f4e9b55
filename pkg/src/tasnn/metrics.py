"""Parameter counts, FLOPs under frame pruning and pruning-proportion sweeps.

FLOPs convention: one multiply-accumulate is 2 FLOPs.  Each weighted layer
costs ``macs_per_frame`` per executed frame; a TA module costs its two
excitation products plus one add per squeezed input element, for every frame,
since attention has to run before any frame can be skipped.  Pooling and
pointwise activations are not counted.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .network import Network, NetworkSpec, build
from .neurons import NeuronConfig
from .training import EvalConfig, evaluate, pruned_layers

SWEEP_HEADER = ["proportion", "accuracy_mean", "accuracy_std", "flops_reduction_pct"]

GESTURE_STRUCTURE = "Input-MP4-64C3-128C3-AP2-128C3-AP2-256FC-11"
GESTURE_INPUT = (2, 128, 128)


def gesture_spec(T: int, strategy: str = "S2", r: float = 16, hidden_width: str = "ceil",
                 dtype: str = "float32") -> NetworkSpec:
    """The DVS128 Gesture architecture, for cost accounting."""
    return NetworkSpec(GESTURE_INPUT, GESTURE_STRUCTURE, T=T, n_classes=11, neuron=NeuronConfig(),
                       strategy=strategy, r=r, hidden_width=hidden_width, dtype=dtype)


@dataclass
class CostReport:
    total_params: int
    base_params: int
    ta_params: int
    ta_overhead_pct: float
    layer_flops_full: dict[str, float] = field(default_factory=dict)
    layer_flops: dict[str, float] = field(default_factory=dict)
    ta_flops: float = 0.0
    total_flops_full: float = 0.0
    total_flops: float = 0.0
    reduction_pct: float = 0.0
    weighted_reduction_pct: float = 0.0
    guarded_reduction_pct: float = 0.0


def count_params(net: Network) -> CostReport:
    total = net.n_params(include_ta=True)
    base = net.n_params(include_ta=False)
    ta = total - base
    pct = 100.0 * ta / base if base else 0.0
    return CostReport(total, base, ta, pct)


def ta_overhead_pct(spec: NetworkSpec, convention: str | None = None) -> float:
    if convention is not None and convention != spec.hidden_width:
        from dataclasses import replace
        spec = replace(spec, hidden_width=convention)
    return count_params(build(spec)).ta_overhead_pct


def layer_flops(net: Network) -> dict[str, int]:
    """Per weighted layer FLOPs for a single frame."""
    return {m.name: 2 * m.macs_per_frame for m in net.weighted}


def ta_module_flops(net: Network) -> float:
    T = net.spec.T
    total = 0
    for m in net.weighted:
        if m.ta is not None:
            n_in = int(np.prod(m.in_shape))
            total += 2 * (m.ta.W1.size + m.ta.W2.size) + T * n_in
    return float(total)


def estimate_flops(net: Network, retained: Mapping[int, float] | None = None) -> CostReport:
    """FLOPs with ``retained[i]`` executed frames at weighted layer ``i`` (default: all T)."""
    T = net.spec.T
    retained = dict(retained or {})
    for i, r in retained.items():
        if not 0 <= r <= T:
            raise ValueError(f"retained frames at layer {i} must lie in [0, {T}], got {r}")
    per_frame = layer_flops(net)
    full, pruned = {}, {}
    for m in net.weighted:
        full[m.name] = float(per_frame[m.name] * T)
        pruned[m.name] = float(per_frame[m.name] * retained.get(m.index, T))
    ta_f = ta_module_flops(net)
    report = count_params(net)
    report.layer_flops_full, report.layer_flops, report.ta_flops = full, pruned, ta_f
    w_full, w_pruned = sum(full.values()), sum(pruned.values())
    report.total_flops_full = w_full + ta_f
    report.total_flops = w_pruned + ta_f
    report.reduction_pct = _pct(report.total_flops_full, report.total_flops)
    report.weighted_reduction_pct = _pct(w_full, w_pruned)
    names = [m.name for m in net.weighted if m.index in set(pruned_layers(net))]
    report.guarded_reduction_pct = _pct(sum(full[n] for n in names), sum(pruned[n] for n in names))
    return report


def _pct(full: float, now: float) -> float:
    return 100.0 * (full - now) / full if full else 0.0


@dataclass
class SweepPoint:
    proportion: float
    accuracy_mean: float
    accuracy_std: float
    flops_reduction_pct: float
    accuracies: list[float] = field(default_factory=list)


def pruning_sweep(net: Network, dataset, proportions: Sequence[float], method: str = "iap",
                  seeds: int = 5, n_crops: int = 10, out_path=None) -> list[SweepPoint]:
    """Accuracy and pruned-layer FLOPs reduction at each proportion.

    IAP is deterministic and evaluated once; IRP is averaged over ``seeds``
    mask seeds and reported as mean and population standard deviation.
    """
    if method not in ("iap", "irp"):
        raise ValueError(f"method must be iap or irp, got {method!r}")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    points = []
    for p in proportions:
        runs = range(seeds) if method == "irp" else range(1)
        accs, retained = [], None
        for k in runs:
            res = evaluate(net, dataset, EvalConfig(n_crops=n_crops, pruning=method, proportion=float(p), seed=k))
            accs.append(res.accuracy)
            retained = res.retained_by_layer
        red = estimate_flops(net, retained).guarded_reduction_pct
        points.append(SweepPoint(float(p), float(np.mean(accs)), float(np.std(accs)), red, accs))
    if out_path is not None:
        write_sweep(points, out_path)
    return points


def write_sweep(points: Sequence[SweepPoint], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for pt in points:
            w.writerow([f"{pt.proportion:.6g}", f"{pt.accuracy_mean:.6f}", f"{pt.accuracy_std:.6f}",
                        f"{pt.flops_reduction_pct:.4f}"])
    return path


def read_sweep(path) -> list[dict[str, float]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in row.items()} for row in rows]


def realized_proportion(T: int, p: float) -> float:
    """Fraction of frames actually dropped when pruning proportion ``p`` of ``T``."""
    from .attention import n_dropped
    return n_dropped(T, p) / T
