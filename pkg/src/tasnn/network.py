"""Layer-major spiking networks with optional temporal attention.

Activations are laid out ``[B, T, ...]``.  Each layer consumes the full
T-step sequence of its input (the attention statistic needs every frame),
applies its weighted op to all frames at once, then unrolls the neuron over
time.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import attention as ta
from .errors import ConfigurationError
from .neurons import NeuronConfig, backward_sequence, run_sequence
from .tensor_core import (
    LayerParams,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    linear_backward,
    linear_forward,
    pool2d_backward,
    pool2d_forward,
    resolve_dtype,
)

STRATEGIES = ("S1", "S2", "S3", "S4")
TRAIN = "train"
INFER = "infer"


@dataclass(frozen=True)
class LayerDesc:
    kind: str  # maxpool | avgpool | conv | linear | bn | dropout
    size: float  # pool window, output channels / features, or dropout rate
    kernel: int = 3

    @property
    def weighted(self) -> bool:
        return self.kind in ("conv", "linear")

    def token(self) -> str:
        if self.kind == "maxpool":
            return f"MP{int(self.size)}"
        if self.kind == "avgpool":
            return f"AP{int(self.size)}"
        if self.kind == "conv":
            return f"{int(self.size)}C{self.kernel}"
        if self.kind == "linear":
            return f"{int(self.size)}FC"
        if self.kind == "bn":
            return "BN"
        return f"DO{self.size:g}"


_TOKENS = [
    (re.compile(r"^MP(\d+)$"), lambda m: LayerDesc("maxpool", int(m[1]))),
    (re.compile(r"^AP(\d+)$"), lambda m: LayerDesc("avgpool", int(m[1]))),
    (re.compile(r"^(\d+)C(\d+)$"), lambda m: LayerDesc("conv", int(m[1]), int(m[2]))),
    (re.compile(r"^(\d+)FC$"), lambda m: LayerDesc("linear", int(m[1]))),
    (re.compile(r"^(\d+)$"), lambda m: LayerDesc("linear", int(m[1]))),
    (re.compile(r"^BN$"), lambda m: LayerDesc("bn", 0)),
    (re.compile(r"^DO(0?\.\d+|0)$"), lambda m: LayerDesc("dropout", float(m[1]))),
]


def parse_layers(text: str) -> tuple[LayerDesc, ...]:
    """Parse a structure string such as ``Input-MP4-64C3-128C3-AP2-256FC-11``."""
    out = []
    for tok in (t.strip() for t in text.split("-")):
        if not tok or tok.lower() == "input":
            continue
        for pattern, make in _TOKENS:
            m = pattern.match(tok)
            if m:
                out.append(make(m))
                break
        else:
            raise ConfigurationError(f"unrecognised layer token {tok!r} in {text!r}")
    return tuple(out)


def format_layers(layers) -> str:
    return "-".join(["Input"] + [d.token() for d in layers])


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]  # (C, H, W) or (features,)
    layers: tuple[LayerDesc, ...]
    T: int
    n_classes: int
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    strategy: str = "S1"
    r: float = 16
    hidden_width: str = "ceil"
    d_th: float = 0.0
    dt_us: int = 1000
    bias: bool = True
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.layers, str):
            object.__setattr__(self, "layers", parse_layers(self.layers))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.T < 1 or self.n_classes < 1:
            raise ConfigurationError(f"need T >= 1 and n_classes >= 1, got {self.T}, {self.n_classes}")
        resolve_dtype(self.dtype)

    @property
    def structure(self) -> str:
        return format_layers(self.layers)

    def guarded(self, weighted_index: int) -> bool:
        if self.strategy == "S1":
            return False
        if self.strategy == "S2":
            return weighted_index == 0
        if self.strategy == "S3":
            return weighted_index > 0
        return True


# ---------------------------------------------------------------------------
# modules


class Pool:
    def __init__(self, kind: str, k: int, in_shape: tuple[int, ...], name: str):
        if len(in_shape) != 3:
            raise ConfigurationError(f"layer {name}: pooling needs a [C, H, W] input, got {in_shape}")
        c, h, w = in_shape
        if h % k or w % k:
            raise ConfigurationError(f"layer {name}: window {k} does not divide {h}x{w}")
        self.kind, self.k, self.name = kind, k, name
        self.in_shape = in_shape
        self.out_shape = (c, h // k, w // k)
        self._cache = None

    def forward(self, x, ctx):
        y, self._cache = pool2d_forward(x, self.kind, self.k)
        return y

    def backward(self, g, need_input_grad=True):
        return pool2d_backward(g, self._cache)


class Dropout:
    """Inverted dropout whose mask is shared across timesteps."""

    def __init__(self, rate: float, in_shape, name: str):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"layer {name}: dropout rate must lie in [0, 1)")
        self.rate, self.name = rate, name
        self.in_shape = self.out_shape = in_shape
        self._mask = None

    def forward(self, x, ctx):
        if ctx.mode != TRAIN or self.rate == 0.0 or ctx.rng is None:
            self._mask = None
            return x
        keep = ctx.rng.random((x.shape[0], 1) + x.shape[2:]) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, g, need_input_grad=True):
        return g if self._mask is None else g * self._mask


class BatchNorm:
    """Per-channel normalisation with statistics shared over batch, time and space."""

    def __init__(self, channels: int, dtype, momentum: float = 0.1, eps: float = 1e-5):
        self.params = LayerParams(np.ones(channels, dtype=dtype), np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum, self.eps = momentum, eps
        self._cache = None

    @staticmethod
    def _view(x):
        # channel axis is 2 in [B, T, C, ...]
        axes = (0, 1) + tuple(range(3, x.ndim))
        shape = (1, 1, -1) + (1,) * (x.ndim - 3)
        return axes, shape

    def forward(self, x, mode):
        axes, shape = self._view(x)
        if mode == TRAIN:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
        self._cache = (xhat, inv, axes, shape)
        return xhat * self.params.weight.reshape(shape) + self.params.bias.reshape(shape)

    def backward(self, g):
        xhat, inv, axes, shape = self._cache
        n = g.size // g.shape[2]
        self.params.accumulate((g * xhat).sum(axis=axes), g.sum(axis=axes))
        gx = g * self.params.weight.reshape(shape)
        return (inv.reshape(shape) / n) * (
            n * gx - gx.sum(axis=axes).reshape(shape) - xhat * (gx * xhat).sum(axis=axes).reshape(shape)
        )


class Weighted:
    """Conv or linear synapses, optional TA on the input, optional BN, then neurons."""

    def __init__(self, desc: LayerDesc, in_shape, out_features: int | None, spec: NetworkSpec,
                 index: int, rng: np.random.Generator, dtype, name: str):
        self.desc, self.index, self.name = desc, index, name
        self.in_shape = tuple(in_shape)
        self.neuron = spec.neuron
        if desc.kind == "conv":
            if len(in_shape) != 3:
                raise ConfigurationError(f"layer {name}: convolution needs a [C, H, W] input, got {in_shape}")
            c, h, w = in_shape
            k = desc.kernel
            pad = k // 2
            conv_output_size(h, k, 1, pad)
            conv_output_size(w, k, 1, pad)
            self.pad = pad
            c_out = int(desc.size)
            fan_in = c * k * k
            shape = (c_out, c, k, k)
            self.out_shape = (c_out, h + 2 * pad - k + 1, w + 2 * pad - k + 1)
        else:
            n_in = int(np.prod(in_shape))
            n_out = int(desc.size)
            fan_in = n_in
            shape = (n_out, n_in)
            self.out_shape = (n_out,)
        bound = math.sqrt(6.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=shape).astype(dtype)
        bias = np.zeros(shape[0], dtype=dtype) if spec.bias else None
        self.params = LayerParams(weight, bias)
        self.bn: BatchNorm | None = None
        self.ta: ta.TAParams | None = None
        if spec.guarded(index):
            self.ta = ta.TAParams.init(spec.T, spec.r, rng, spec.hidden_width, spec.d_th, dtype)
        self._cache = None

    # per-frame synaptic op on [N, ...]
    def _synapse(self, x):
        if self.desc.kind == "conv":
            return conv2d_forward(x, self.params.weight, self.params.bias, 1, self.pad)
        return linear_forward(x.reshape(x.shape[0], -1), self.params.weight, self.params.bias)

    def _synapse_backward(self, g, cache, need_input_grad):
        if self.desc.kind == "conv":
            return conv2d_backward(g, cache, self.params.weight, need_input_grad)
        return linear_backward(g, cache, self.params.weight, need_input_grad)

    @property
    def macs_per_frame(self) -> int:
        w = self.params.weight
        if self.desc.kind == "conv":
            return int(w.size * self.out_shape[1] * self.out_shape[2])
        return int(w.size)

    def _scores(self, x, ctx):
        """Return ``(scores, soft, excitation_cache)``; scores is None when unguarded."""
        override = ctx.scores_override.get(self.index)
        soft = cache = None
        if self.ta is not None:
            s = ta.squeeze(x, time_axis=1)
            soft, cache = ta.excitation(s, self.ta)
            ctx.soft_scores[self.index] = soft
        if override is not None:
            d = np.broadcast_to(np.asarray(override, dtype=x.dtype), x.shape[:2])
            return d, soft, None
        if self.ta is None:
            return None, None, None
        if ctx.mode == TRAIN:
            return soft, soft, cache
        if ctx.iap_proportion is not None:
            return ta.prune_mask(soft, ctx.iap_proportion).astype(x.dtype), soft, None
        th = self.ta.d_th if ctx.d_th is None else ctx.d_th
        return (soft - th >= 0).astype(x.dtype), soft, None

    def forward(self, x, ctx):
        B, T = x.shape[:2]
        d, soft, ex_cache = self._scores(x, ctx)
        flat_in = x.reshape((B * T,) + x.shape[2:])
        xs = None
        kept = None
        if d is None:
            xt = x
        elif ctx.mode == INFER:
            kept = d != 0
            xt = x  # binary scores: kept frames pass unchanged
        else:
            xt = ta.apply_scores(x, d, time_axis=1)
            xs = xt
        if kept is not None and not kept.all():
            current = np.zeros((B, T) + self.out_shape, dtype=x.dtype)
            syn_cache = None
            if kept.any():
                cur_sel, syn_cache = self._synapse(xt[kept])
                current[kept] = cur_sel.reshape((-1,) + self.out_shape)
            executed = kept.sum(axis=1)
        else:
            cur, syn_cache = self._synapse(xt.reshape((B * T,) + x.shape[2:]) if xt is not x else flat_in)
            current = cur.reshape((B, T) + self.out_shape)
            executed = np.full(B, T)
        ctx.executed_frames[self.index] = executed
        if self.bn is not None:
            current = self.bn.forward(current, ctx.mode)
        out, n_cache = run_sequence(current, self.neuron)
        self._cache = (x, d, ex_cache, syn_cache, n_cache, kept, xs)
        return out

    def backward(self, g, need_input_grad=True):
        x, d, ex_cache, syn_cache, n_cache, kept, _ = self._cache
        if kept is not None and not kept.all():
            raise ConfigurationError("backward through a pruned inference pass is not supported")
        B, T = x.shape[:2]
        g_cur = backward_sequence(g, n_cache, self.neuron)
        if self.bn is not None:
            g_cur = self.bn.backward(g_cur)
        need_x = need_input_grad or ex_cache is not None
        g_flat = g_cur.reshape((B * T,) + self.out_shape)
        gx, gw, gb = self._synapse_backward(g_flat, syn_cache, need_x)
        self.params.accumulate(gw, gb)
        if not need_x:
            return None
        gx = gx.reshape(x.shape)
        if d is None:
            return gx
        grad_xt = gx
        if ex_cache is None:
            # scores held fixed (override or binary): only the scaling acts
            return ta.apply_scores(grad_xt, d, time_axis=1) if need_input_grad else None
        grad_d = (grad_xt * x).reshape(B, T, -1).sum(axis=-1)
        grad_s = ta.excitation_backward(grad_d, ex_cache, self.ta)
        if not need_input_grad:
            return None
        return ta.apply_scores(grad_xt, d, time_axis=1) + ta.squeeze_backward(grad_s, x.shape[2:])


@dataclass
class ForwardContext:
    mode: str = TRAIN
    scores_override: dict = field(default_factory=dict)
    iap_proportion: float | None = None
    d_th: float | None = None
    rng: np.random.Generator | None = None
    soft_scores: dict = field(default_factory=dict)
    executed_frames: dict = field(default_factory=dict)


class Network:
    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.dtype = resolve_dtype(spec.dtype)
        rng = np.random.default_rng(spec.seed)
        self.modules: list = []
        self.weighted: list[Weighted] = []
        shape = spec.input_shape
        descs = list(spec.layers)
        for i, desc in enumerate(descs):
            name = f"{i}:{desc.token()}"
            if desc.kind in ("maxpool", "avgpool"):
                mod = Pool("max" if desc.kind == "maxpool" else "avg", int(desc.size), shape, name)
            elif desc.kind == "dropout":
                mod = Dropout(float(desc.size), shape, name)
            elif desc.kind == "bn":
                prev = self.modules[-1] if self.modules else None
                if not isinstance(prev, Weighted) or prev.bn is not None:
                    raise ConfigurationError(f"layer {name}: BN must directly follow a weighted layer")
                prev.bn = BatchNorm(prev.out_shape[0], self.dtype)
                continue
            else:
                mod = Weighted(desc, shape, None, spec, len(self.weighted), rng, self.dtype, name)
                self.weighted.append(mod)
            self.modules.append(mod)
            shape = mod.out_shape
        if int(np.prod(shape)) != spec.n_classes:
            raise ConfigurationError(
                f"structure {spec.structure} ends with {int(np.prod(shape))} outputs, "
                f"expected {spec.n_classes} classes"
            )
        self.output_shape = shape
        self.last_context: ForwardContext | None = None

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for mod in self.weighted:
            for pname, value, grad in mod.params.arrays():
                yield f"{mod.name}.{pname}", value, grad
            if mod.bn is not None:
                for pname, value, grad in mod.bn.params.arrays():
                    yield f"{mod.name}.bn.{pname}", value, grad
            if mod.ta is not None:
                for pname, value, grad in mod.ta.arrays():
                    yield f"{mod.name}.ta.{pname}", value, grad

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for mod in self.weighted:
            if mod.bn is not None:
                yield f"{mod.name}.bn.running_mean", mod.bn.running_mean
                yield f"{mod.name}.bn.running_var", mod.bn.running_var

    def zero_grad(self) -> None:
        for _, _, grad in self.parameters():
            grad[...] = 0.0

    @property
    def ta_modules(self) -> list[ta.TAParams]:
        return [m.ta for m in self.weighted if m.ta is not None]

    def n_params(self, include_ta: bool = True) -> int:
        total = 0
        for mod in self.weighted:
            total += mod.params.size
            if mod.bn is not None:
                total += mod.bn.params.size
            if include_ta and mod.ta is not None:
                total += mod.ta.size
        return total

    # -- forward / backward --------------------------------------------------

    def forward(self, frames: np.ndarray, mode: str = TRAIN, ctx: ForwardContext | None = None) -> np.ndarray:
        """Run ``[B, T, *input_shape]`` (or unbatched ``[T, *input_shape]``) frames."""
        frames = np.asarray(frames, dtype=self.dtype)
        unbatched = frames.ndim == len(self.spec.input_shape) + 1
        if unbatched:
            frames = frames[None]
        if frames.shape[1] != self.spec.T or tuple(frames.shape[2:]) != self.spec.input_shape:
            raise ConfigurationError(
                f"frames of shape {frames.shape[1:]} do not match network "
                f"(T={self.spec.T}, input {self.spec.input_shape})"
            )
        if ctx is None:
            ctx = ForwardContext(mode=mode)
        else:
            ctx.mode = mode
        x = frames
        for mod in self.modules:
            x = mod.forward(x, ctx)
        self.last_context = ctx
        out = x.reshape(x.shape[:2] + (-1,))
        return out[0] if unbatched else out

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients for ``grad_out`` of shape ``[B, T, classes]``."""
        g = grad_out.reshape(grad_out.shape[:2] + tuple(self.output_shape))
        first = self.modules.index(self.weighted[0]) if self.weighted else len(self.modules)
        for i in range(len(self.modules) - 1, -1, -1):
            need = i > first
            mod = self.modules[i]
            if isinstance(mod, Weighted):
                g = mod.backward(g, need_input_grad=need)
            else:
                g = mod.backward(g)
            if g is None:
                break


def build(spec: NetworkSpec) -> Network:
    return Network(spec)


def with_strategy(spec: NetworkSpec, strategy: str) -> NetworkSpec:
    return replace(spec, strategy=strategy)


# ---------------------------------------------------------------------------
# readout and loss


def rate_readout(outputs: np.ndarray) -> np.ndarray:
    """Time-averaged output; axis -2 is time."""
    outputs = np.asarray(outputs)
    if outputs.shape[-2] < 1:
        raise ConfigurationError("rate readout needs T >= 1")
    return outputs.mean(axis=-2)


def predict(scores: np.ndarray) -> np.ndarray:
    return np.argmax(scores, axis=-1)


def one_hot(labels, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ConfigurationError(f"labels must lie in [0, {n_classes})")
    out = np.zeros(labels.shape + (n_classes,), dtype=dtype)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def loss_and_grad_rates(rates: np.ndarray, labels, loss: str = "mse"):
    """Loss averaged over the batch and its gradient w.r.t. the rates."""
    B, K = rates.shape
    target = one_hot(labels, K, rates.dtype)
    if loss == "mse":
        diff = rates - target
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    if loss == "ce":
        z = rates - rates.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        value = float(-np.mean(np.log(np.clip((p * target).sum(axis=1), 1e-300, None))))
        return value, (p - target) / B
    raise ConfigurationError(f"unknown loss {loss!r}; choose mse or ce")


def loss_and_backward(net: Network, frames: np.ndarray, labels, loss: str = "mse",
                      ctx: ForwardContext | None = None) -> tuple[float, np.ndarray]:
    """Zero grads, run forward in train mode, backpropagate; returns ``(loss, rates)``."""
    frames = np.asarray(frames)
    labels = np.atleast_1d(np.asarray(labels))
    if frames.ndim == len(net.spec.input_shape) + 1:
        frames = frames[None]
    net.zero_grad()
    out = net.forward(frames, TRAIN, ctx)
    rates = rate_readout(out)
    value, g_rates = loss_and_grad_rates(rates, labels, loss)
    T = out.shape[1]
    g_out = np.broadcast_to(g_rates[:, None, :] / T, out.shape).astype(out.dtype)
    net.backward(g_out)
    return value, rates
