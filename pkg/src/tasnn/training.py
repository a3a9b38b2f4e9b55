"""Adam training, crop-voting evaluation with input pruning, gradient checks."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import attention as ta
from .errors import ConfigurationError, DataError
from .events import AggregationConfig, EventStream, aggregate, crop_starts, rcs_start
from .network import INFER, TRAIN, ForwardContext, Network, loss_and_backward, predict, rate_readout
from .seeding import rng_for

log = logging.getLogger(__name__)

Dataset = Sequence[tuple[EventStream, int]]

PRUNING_METHODS = ("none", "iap", "irp")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 36
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_rcs: bool = True
    seed: int = 0
    deterministic: bool = True
    loss: str = "mse"
    eval_every: int = 0

    def __post_init__(self) -> None:
        if not self.lr >= 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigurationError("Adam moments need 0 <= beta < 1 and eps > 0")
        if self.loss not in ("mse", "ce"):
            raise ConfigurationError(f"loss must be mse or ce, got {self.loss!r}")


@dataclass(frozen=True)
class EvalConfig:
    n_crops: int = 10
    pruning: str = "none"
    proportion: float = 0.0
    seed: int = 0
    batch_samples: int = 16

    def __post_init__(self) -> None:
        if self.pruning not in PRUNING_METHODS:
            raise ConfigurationError(f"pruning must be one of {PRUNING_METHODS}, got {self.pruning!r}")
        if not 0.0 <= self.proportion <= 1.0:
            raise ConfigurationError(f"pruning proportion must lie in [0, 1], got {self.proportion}")
        if self.n_crops < 1:
            raise ConfigurationError("n_crops must be >= 1")


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, net: Network) -> None:
        self.t += 1
        if self.lr == 0:
            return
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, value, grad in net.parameters():
            if name not in self.m:
                self.m[name] = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad * grad)
            value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _stack_frames(streams, dt_us, T, starts, dtype) -> np.ndarray:
    return np.stack([aggregate(s, AggregationConfig(dt_us, T, t0), dtype=dtype)
                     for s, t0 in zip(streams, starts)])


def _as_input(net: Network, frames: np.ndarray) -> np.ndarray:
    """Map ``[B, T, C, H, W]`` frames onto the network's declared input shape."""
    return frames.reshape(frames.shape[:2] + net.spec.input_shape)


def train(net: Network, dataset: Dataset, cfg: TrainConfig, eval_set: Dataset | None = None,
          eval_cfg: EvalConfig | None = None, progress: Callable[[dict], None] | None = None):
    """Minibatch Adam over ``dataset``; returns ``(net, history)``."""
    if len(dataset) == 0:
        raise DataError("training set is empty")
    spec = net.spec
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[dict] = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        rng = rng_for(cfg.seed, "train", "epoch", epoch)
        order = rng.permutation(n)
        losses, correct = [], 0
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            streams = [dataset[i][0] for i in idx]
            labels = np.array([dataset[i][1] for i in idx])
            if cfg.use_rcs:
                starts = [rcs_start(s.duration_us, spec.dt_us, spec.T, rng) for s in streams]
            else:
                starts = [0] * len(streams)
            frames = _input_frames(net, streams, starts)
            ctx = ForwardContext(rng=rng)
            value, rates = loss_and_backward(net, frames, labels, cfg.loss, ctx)
            opt.step(net)
            losses.append(value * len(idx))
            correct += int((predict(rates) == labels).sum())
        record = {"epoch": epoch + 1, "train_loss": float(sum(losses) / n),
                  "train_accuracy": correct / n, "eval_accuracy": None}
        if eval_set is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            record["eval_accuracy"] = evaluate(net, eval_set, eval_cfg or EvalConfig()).accuracy
        history.append(record)
        log.info("epoch=%d train_loss=%.6f train_accuracy=%.4f", epoch + 1,
                 record["train_loss"], record["train_accuracy"])
        if progress is not None:
            progress(record)
    return net, history


def _input_frames(net: Network, streams, starts) -> np.ndarray:
    frames = _stack_frames(streams, net.spec.dt_us, net.spec.T, starts, net.dtype)
    return _as_input(net, frames)


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, float]
    mean_frames_retained: float
    n_evaluated: int
    n_skipped: int
    predictions: list[int] = field(default_factory=list)
    retained_by_layer: dict[int, float] = field(default_factory=dict)


def pruned_layers(net: Network) -> list[int]:
    """Weighted-layer indices where pruning acts: TA-guarded layers, else the input layer."""
    guarded = [m.index for m in net.weighted if m.ta is not None]
    return guarded or ([0] if net.weighted else [])


def evaluate(net: Network, dataset: Dataset, cfg: EvalConfig = EvalConfig()) -> EvalResult:
    """Crop-voting classification; each crop's rates are summed before the argmax."""
    spec = net.spec
    t_lat = spec.dt_us * spec.T
    rng = rng_for(cfg.seed, "eval", "irp")
    layers = pruned_layers(net)
    usable = []
    skipped = 0
    for stream, label in dataset:
        try:
            starts = crop_starts(stream.duration_us, t_lat, cfg.n_crops)
        except DataError as exc:
            warnings.warn(f"skipping sample: {exc}")
            skipped += 1
            continue
        usable.append((stream, label, starts))

    preds, labels = [], []
    retained_sum = {i: 0.0 for i in layers}
    n_inputs = 0
    for b0 in range(0, len(usable), cfg.batch_samples):
        chunk = usable[b0:b0 + cfg.batch_samples]
        streams = [s for s, _, st in chunk for _ in st]
        starts = [t0 for _, _, st in chunk for t0 in st]
        frames = _input_frames(net, streams, starts)
        ctx = ForwardContext(mode=INFER)
        if cfg.pruning == "iap":
            ctx.iap_proportion = cfg.proportion
        elif cfg.pruning == "irp":
            for i in layers:
                ctx.scores_override[i] = np.stack(
                    [ta.irp_mask(spec.T, cfg.proportion, rng) for _ in range(len(streams))])
        out = net.forward(frames, INFER, ctx)
        rates = rate_readout(out)
        for i in layers:
            retained_sum[i] += float(ctx.executed_frames[i].sum())
        n_inputs += len(streams)
        pos = 0
        for _, label, st in chunk:
            votes = rates[pos:pos + len(st)].sum(axis=0)
            pos += len(st)
            preds.append(int(predict(votes)))
            labels.append(int(label))

    preds_a, labels_a = np.array(preds, dtype=int), np.array(labels, dtype=int)
    per_class = {int(c): float(np.mean(preds_a[labels_a == c] == c)) for c in np.unique(labels_a)}
    retained = {i: retained_sum[i] / max(n_inputs, 1) for i in layers}
    mean_retained = float(np.mean(list(retained.values()))) if retained else float(spec.T)
    accuracy = float(np.mean(preds_a == labels_a)) if len(preds_a) else 0.0
    return EvalResult(accuracy, per_class, mean_retained, len(preds_a), skipped, preds, retained)


def attention_scores(net: Network, frames: np.ndarray) -> dict[int, np.ndarray]:
    """Training-mode (soft) scores of every TA module for a batch of frames."""
    ctx = ForwardContext(mode=TRAIN)
    net.forward(_as_input(net, np.asarray(frames, dtype=net.dtype)), TRAIN, ctx)
    return dict(ctx.soft_scores)


@dataclass
class GradCheckResult:
    max_rel_error: float
    location: tuple[str, tuple[int, ...]] | None
    n_checked: int


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(net: Network, frames: np.ndarray, labels, eps: float = 1e-5,
                   loss: str = "mse") -> GradCheckResult:
    """Central differences for every parameter entry against the analytic gradient."""
    from .network import loss_and_grad_rates

    frames = np.asarray(frames)
    labels = np.atleast_1d(np.asarray(labels))

    def scalar_loss() -> float:
        out = net.forward(frames, TRAIN, ForwardContext())
        if out.ndim == 2:
            out = out[None]
        return loss_and_grad_rates(rate_readout(out), labels, loss)[0]

    loss_and_backward(net, frames, labels, loss, ForwardContext())
    analytic = {name: grad.copy() for name, _, grad in net.parameters()}
    worst, where, count = 0.0, None, 0
    for name, value, _ in net.parameters():
        g = analytic[name]
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + eps
            up = scalar_loss()
            value[idx] = orig - eps
            down = scalar_loss()
            value[idx] = orig
            numeric = (up - down) / (2 * eps)
            err = relative_error(float(g[idx]), numeric)
            count += 1
            if err > worst:
                worst, where = err, (name, idx)
    return GradCheckResult(worst, where, count)


def kink_margin(net: Network, frames: np.ndarray) -> float:
    """Smallest distance of any membrane potential to ``u_th`` (and to 0 for LIAF),
    or of any TA hidden pre-activation to 0, over a training-mode forward pass."""
    frames = np.asarray(frames, dtype=net.dtype)
    ctx = ForwardContext(mode=TRAIN)
    net.forward(frames, TRAIN, ctx)
    u_th = net.spec.neuron.u_th
    margin = np.inf
    for mod in net.weighted:
        _, _, ex_cache, _, (U, _), _, _ = mod._cache
        margin = min(margin, float(np.min(np.abs(U - u_th))))
        if net.spec.neuron.mode == "liaf":
            margin = min(margin, float(np.min(np.abs(U))))
        if ex_cache is not None:
            margin = min(margin, float(np.min(np.abs(ex_cache[1]))))
    return margin


def generic_frames(net: Network, rng: np.random.Generator, batch: int = 1, min_margin: float = 1e-3,
                   tries: int = 200, scale: float = 10.0) -> tuple[np.ndarray, float]:
    """Draw frames uniform on ``[0, scale)`` until every kink is at least ``min_margin`` away.

    Returns the best draw and its margin, which may fall short after ``tries``."""
    shape = (batch, net.spec.T) + net.spec.input_shape
    best, best_m = None, -1.0
    for _ in range(tries):
        frames = rng.uniform(0.0, scale, size=shape).astype(net.dtype)
        m = kink_margin(net, frames)
        if m > best_m:
            best, best_m = frames, m
        if m >= min_margin:
            break
    return best, best_m
