"""Temporal-wise attention: squeeze frames to a per-timestep statistic, excite
through a bias-free two-layer bottleneck, and rescale each frame by its score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .tensor_core import relu, relu_grad, sigmoid

TRAINING = "training"
INFERENCE = "inference"
HIDDEN_WIDTH_CONVENTIONS = ("ceil", "floor")


def hidden_width(T: int, r: float, convention: str = "ceil") -> int:
    if convention not in HIDDEN_WIDTH_CONVENTIONS:
        raise ConfigurationError(f"hidden width convention must be ceil or floor, got {convention!r}")
    if T < 1 or not r > 0:
        raise ConfigurationError(f"need T >= 1 and r > 0, got T={T}, r={r}")
    q = T / r
    m = math.ceil(q - 1e-12) if convention == "ceil" else math.floor(q + 1e-12)
    return max(1, int(m))


def n_dropped(T: int, p: float) -> int:
    """Number of frames removed for proportion ``p``: floor(p*T), robust to float noise."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"pruning proportion must lie in [0, 1], got {p}")
    return min(T, int(math.floor(p * T + 1e-9)))


@dataclass
class TAParams:
    W1: np.ndarray  # [m, T]
    W2: np.ndarray  # [T, m]
    r: float = 16
    d_th: float = 0.0
    mode: str = TRAINING
    grad_W1: np.ndarray = field(init=False, repr=False)
    grad_W2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        m, T = self.W1.shape
        if self.W2.shape != (T, m):
            raise ConfigurationError(
                f"excitation shapes disagree: W1 {self.W1.shape}, W2 {self.W2.shape}"
            )
        if not self.d_th >= 0.0:
            raise ConfigurationError(f"d_th must be >= 0, got {self.d_th}")
        if self.mode not in (TRAINING, INFERENCE):
            raise ConfigurationError(f"unknown TA mode {self.mode!r}")
        self.grad_W1 = np.zeros_like(self.W1)
        self.grad_W2 = np.zeros_like(self.W2)

    @classmethod
    def init(cls, T: int, r: float, rng: np.random.Generator, convention: str = "ceil",
             d_th: float = 0.0, dtype=np.float64) -> "TAParams":
        m = hidden_width(T, r, convention)
        b1 = 1.0 / math.sqrt(T)
        b2 = 1.0 / math.sqrt(m)
        W1 = rng.uniform(-b1, b1, size=(m, T)).astype(dtype)
        W2 = rng.uniform(-b2, b2, size=(T, m)).astype(dtype)
        return cls(W1, W2, r=r, d_th=d_th)

    @property
    def T(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def size(self) -> int:
        return int(self.W1.size + self.W2.size)

    def zero_grad(self) -> None:
        self.grad_W1[...] = 0.0
        self.grad_W2[...] = 0.0

    def arrays(self):
        yield "W1", self.W1, self.grad_W1
        yield "W2", self.W2, self.grad_W2


def squeeze(frames: np.ndarray, time_axis: int = 0) -> np.ndarray:
    """Mean of every frame: reduces all axes after ``time_axis``."""
    frames = np.asarray(frames)
    if frames.size == 0:
        raise ConfigurationError("squeeze needs a nonempty tensor")
    lead = frames.shape[: time_axis + 1]
    return frames.reshape(*lead, -1).mean(axis=-1)


def squeeze_backward(grad_s: np.ndarray, frame_shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(frame_shape))
    g = grad_s / n
    return np.broadcast_to(g.reshape(g.shape + (1,) * len(frame_shape)), g.shape + tuple(frame_shape))


def _check_dims(s: np.ndarray, params: TAParams) -> None:
    if s.shape[-1] != params.T:
        raise ConfigurationError(f"score statistic has length {s.shape[-1]}, TA expects T={params.T}")


def excitation(s: np.ndarray, params: TAParams):
    """Soft scores ``sigmoid(W2 relu(W1 s))`` for ``s`` of shape ``[..., T]``."""
    _check_dims(s, params)
    z = s @ params.W1.T
    a = relu(z)
    d = sigmoid(a @ params.W2.T)
    return d, (s, z, a, d)


def excitation_backward(grad_d: np.ndarray, cache, params: TAParams) -> np.ndarray:
    """Accumulate into ``params.grad_W*`` and return the gradient w.r.t. ``s``."""
    s, z, a, d = cache
    gy = grad_d * d * (1.0 - d)
    gy2 = gy.reshape(-1, gy.shape[-1])
    params.grad_W2 += gy2.T @ a.reshape(-1, a.shape[-1])
    ga = gy @ params.W2
    gz = ga * relu_grad(z)
    params.grad_W1 += gz.reshape(-1, gz.shape[-1]).T @ s.reshape(-1, s.shape[-1])
    return gz @ params.W1


def excite_train(s: np.ndarray, params: TAParams) -> np.ndarray:
    if params.mode != TRAINING:
        raise ConfigurationError("excite_train requires TA mode 'training'")
    return excitation(s, params)[0]


def excite_infer(s: np.ndarray, params: TAParams, d_th: float | None = None) -> np.ndarray:
    """Binary scores: 1 where the soft score reaches ``d_th`` (inclusive)."""
    if params.mode != INFERENCE:
        raise ConfigurationError("excite_infer requires TA mode 'inference'")
    d, _ = excitation(s, params)
    th = params.d_th if d_th is None else d_th
    return (d - th >= 0).astype(d.dtype)


def apply_scores(frames: np.ndarray, d: np.ndarray, time_axis: int = 0) -> np.ndarray:
    frames = np.asarray(frames)
    d = np.asarray(d)
    if d.shape != frames.shape[: time_axis + 1]:
        raise ConfigurationError(
            f"score shape {d.shape} does not match frames {frames.shape[: time_axis + 1]}"
        )
    return frames * d.reshape(d.shape + (1,) * (frames.ndim - time_axis - 1))


def _drop_order(scores: np.ndarray) -> np.ndarray:
    # ascending score; among equal scores the later frame goes first
    idx = np.arange(scores.shape[-1])
    return np.lexsort((-idx, scores))


def threshold_for_proportion(scores: np.ndarray, p: float) -> float:
    """Threshold such that floor(p*T) frames lie strictly below it (absent ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    T = scores.shape[-1]
    k = n_dropped(T, p)
    ordered = np.sort(scores)
    if k == 0:
        return float(ordered[0])
    if k == T:
        return float(np.nextafter(ordered[-1], np.inf))
    return float(ordered[k])


def prune_mask(scores: np.ndarray, p: float) -> np.ndarray:
    """Binary keep-mask over the last axis dropping exactly floor(p*T) lowest scores."""
    scores = np.asarray(scores)
    T = scores.shape[-1]
    k = n_dropped(T, p)
    flat = scores.reshape(-1, T)
    mask = np.ones_like(flat, dtype=np.float64)
    if k:
        for row, sc in zip(mask, flat):
            row[_drop_order(sc)[:k]] = 0.0
    return mask.reshape(scores.shape)


def irp_mask(T: int, p: float, rng: np.random.Generator) -> np.ndarray:
    k = n_dropped(T, p)
    mask = np.ones(T)
    mask[rng.choice(T, size=k, replace=False)] = 0.0
    return mask
