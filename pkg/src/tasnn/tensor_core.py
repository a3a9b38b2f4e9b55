"""Dense array ops with hand-written forward and backward passes.

Arrays are plain ``numpy.ndarray`` (row-major).  Every forward function
returns ``(output, cache)``; the matching backward consumes the upstream
gradient and the cache.  Batched inputs carry a leading ``N`` axis; a
single ``[C, H, W]`` image or ``[features]`` vector is accepted too.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

DEFAULT_DTYPE = np.float64
SUPPORTED_DTYPES = {"float64": np.float64, "float32": np.float32}


def resolve_dtype(name: str | np.dtype | type) -> np.dtype:
    if isinstance(name, str):
        if name not in SUPPORTED_DTYPES:
            raise ConfigurationError(f"unsupported dtype {name!r}; choose float64 or float32")
        return np.dtype(SUPPORTED_DTYPES[name])
    dt = np.dtype(name)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ConfigurationError(f"unsupported dtype {dt}")
    return dt


@dataclass
class LayerParams:
    """Weights, optional bias, and gradient accumulators of identical shape."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray | None = field(init=False)

    def __post_init__(self) -> None:
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    def zero_grad(self) -> None:
        self.grad_weight[...] = 0.0
        if self.grad_bias is not None:
            self.grad_bias[...] = 0.0

    def accumulate(self, grad_weight: np.ndarray, grad_bias: np.ndarray | None) -> None:
        self.grad_weight += grad_weight
        if self.grad_bias is not None and grad_bias is not None:
            self.grad_bias += grad_bias

    def arrays(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        """Yield ``(name, value, grad)`` triples."""
        yield "weight", self.weight, self.grad_weight
        if self.bias is not None:
            yield "bias", self.bias, self.grad_bias

    @property
    def size(self) -> int:
        return int(self.weight.size + (0 if self.bias is None else self.bias.size))


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"kernel={kernel}, stride={stride}, pad={pad} do not tile input size {size}"
        )
    return span // stride + 1


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
                   stride: int = 1, pad: int = 1):
    """Zero-padded 2-D cross-correlation.

    ``x`` is ``[N, C_in, H, W]`` (or ``[C_in, H, W]``), ``weight`` is
    ``[C_out, C_in, k, k]``.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1] \
            or weight.shape[2] != weight.shape[3]:
        raise ConfigurationError(
            f"conv2d shape mismatch: input {tuple(x.shape)} vs weight {tuple(weight.shape)}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ConfigurationError(
            f"conv2d bias shape {tuple(bias.shape)} does not match weight {tuple(weight.shape)}"
        )
    n, c, h, w = x.shape
    c_out, _, k, _ = weight.shape
    h_out = conv_output_size(h, k, stride, pad)
    w_out = conv_output_size(w, k, stride, pad)

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # [N, Ho, Wo, C, k, k] -> rows of length C*k*k
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h_out * w_out, c * k * k)
    out = cols @ weight.reshape(c_out, -1).T
    if bias is not None:
        out += bias
    y = out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    cache = (cols, x.shape, stride, pad, squeeze)
    return (y[0] if squeeze else y), cache


def conv2d_backward(grad_y: np.ndarray, cache, weight: np.ndarray, need_input_grad: bool = True):
    """Return ``(grad_x, grad_weight, grad_bias)``; ``grad_x`` is None when not requested."""
    cols, x_shape, stride, pad, squeeze = cache
    if squeeze:
        grad_y = grad_y[None]
    n, c, h, w = x_shape
    c_out, _, k, _ = weight.shape
    _, _, h_out, w_out = grad_y.shape

    g = grad_y.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    if not need_input_grad:
        return None, grad_w, grad_b

    dcols = (g @ weight.reshape(c_out, -1)).reshape(n, h_out, w_out, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad_y.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if squeeze else grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# pooling (window == stride)


def _blocks(x: np.ndarray, k: int) -> np.ndarray:
    *lead, h, w = x.shape
    if h % k or w % k:
        raise ConfigurationError(f"pool window {k} does not divide spatial dims {h}x{w}")
    b = x.reshape(*lead, h // k, k, w // k, k)
    nd = b.ndim
    order = list(range(nd - 4)) + [nd - 4, nd - 2, nd - 3, nd - 1]
    return b.transpose(order).reshape(*lead, h // k, w // k, k * k)


def _unblocks(b: np.ndarray, k: int) -> np.ndarray:
    *lead, ho, wo, _ = b.shape
    b = b.reshape(*lead, ho, wo, k, k)
    nd = b.ndim
    order = list(range(nd - 4)) + [nd - 4, nd - 2, nd - 3, nd - 1]
    return b.transpose(order).reshape(*lead, ho * k, wo * k)


def pool2d_forward(x: np.ndarray, kind: str, k: int):
    """Non-overlapping ``k x k`` pooling over the last two axes."""
    if k < 1:
        raise ConfigurationError(f"pool window must be >= 1, got {k}")
    blocks = _blocks(x, k)
    if kind == "avg":
        return blocks.mean(axis=-1), (kind, k, x.shape, None)
    if kind == "max":
        idx = blocks.argmax(axis=-1)  # first maximal index wins ties
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (kind, k, x.shape, idx)
    raise ConfigurationError(f"unknown pool kind {kind!r}")


def pool2d_backward(grad_y: np.ndarray, cache) -> np.ndarray:
    kind, k, x_shape, idx = cache
    if kind == "avg":
        g = np.broadcast_to(grad_y[..., None] / (k * k), grad_y.shape + (k * k,))
    else:
        g = np.zeros(grad_y.shape + (k * k,), dtype=grad_y.dtype)
        np.put_along_axis(g, idx[..., None], grad_y[..., None], axis=-1)
    return np.ascontiguousarray(_unblocks(g, k)).reshape(x_shape)


# ---------------------------------------------------------------------------
# fully connected


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None):
    """``y = x W^T + b`` for ``x`` of shape ``[N, in]`` or ``[in]``."""
    if x.shape[-1] != weight.shape[1]:
        raise ConfigurationError(
            f"linear shape mismatch: input {tuple(x.shape)} vs weight {tuple(weight.shape)}"
        )
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y, x


def linear_backward(grad_y: np.ndarray, cache, weight: np.ndarray, need_input_grad: bool = True):
    x = cache
    if x.ndim == 1:
        grad_w = np.outer(grad_y, x)
        grad_b = grad_y.copy()
    else:
        grad_w = grad_y.T @ x
        grad_b = grad_y.sum(axis=0)
    grad_x = grad_y @ weight if need_input_grad else None
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# pointwise


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    # derivative taken as 0 at exactly 0
    return (x > 0).astype(x.dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad_from_output(s: np.ndarray) -> np.ndarray:
    return s * (1.0 - s)


def heaviside(x: np.ndarray) -> np.ndarray:
    """Step function with f(0) = 1."""
    x = np.asarray(x)
    return (x >= 0).astype(np.result_type(x, np.float32))


def rectangular_surrogate(x: np.ndarray, width: float) -> np.ndarray:
    """Stand-in derivative of the step: ``(1/a) * [|x| < a/2]``."""
    if not width > 0:
        raise ConfigurationError(f"surrogate width must be > 0, got {width}")
    x = np.asarray(x)
    return (np.abs(x) < width / 2).astype(np.result_type(x, np.float32)) / width


def pointwise_forward(x: np.ndarray, fn: str, surrogate_width: float | None = None):
    if fn == "relu":
        return relu(x), (fn, x, None)
    if fn == "sigmoid":
        s = sigmoid(x)
        return s, (fn, s, None)
    if fn == "heaviside":
        if surrogate_width is None or not surrogate_width > 0:
            raise ConfigurationError("heaviside requires surrogate_width > 0")
        return heaviside(x), (fn, x, surrogate_width)
    raise ConfigurationError(f"unknown pointwise function {fn!r}")


def pointwise_backward(grad_y: np.ndarray, cache) -> np.ndarray:
    fn, saved, width = cache
    if fn == "relu":
        return grad_y * relu_grad(saved)
    if fn == "sigmoid":
        return grad_y * sigmoid_grad_from_output(saved)
    return grad_y * rectangular_surrogate(saved, width)
