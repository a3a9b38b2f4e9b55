"""Iterative LIF / LIAF dynamics with hard reset and surrogate gradients.

Per timestep::

    U = H_prev + I
    Z = step(U - u_th)          # step(0) = 1
    H = leak * U * (1 - Z)
    X = Z (LIF)  or  relu(U) (LIAF)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor_core import heaviside, rectangular_surrogate, relu, relu_grad

LIF = "lif"
LIAF = "liaf"


@dataclass(frozen=True)
class NeuronConfig:
    mode: str = LIF
    u_th: float = 0.3
    leak: float = 0.3
    surrogate_width: float = 1.0
    # None picks the per-mode default: LIF lets the surrogate flow through the
    # reset gate, LIAF treats the gate as piecewise constant (exact derivative).
    detach_reset: bool | None = None
    u_rest: float = 0.0

    def __post_init__(self) -> None:
        mode = str(self.mode).lower()
        object.__setattr__(self, "mode", mode)
        if mode not in (LIF, LIAF):
            raise ConfigurationError(f"neuron mode must be 'lif' or 'liaf', got {self.mode!r}")
        if not 0.0 < self.leak < 1.0:
            raise ConfigurationError(f"leak must lie in (0, 1), got {self.leak}")
        if not self.u_th > 0:
            raise ConfigurationError(f"u_th must be > 0, got {self.u_th}")
        if not self.surrogate_width > 0:
            raise ConfigurationError(f"surrogate_width must be > 0, got {self.surrogate_width}")
        if self.u_rest != 0.0:
            raise ConfigurationError("multiplicative hard reset fixes u_rest at 0")

    @property
    def reset_detached(self) -> bool:
        if self.detach_reset is None:
            return self.mode == LIAF
        return bool(self.detach_reset)


@dataclass
class NeuronState:
    H: np.ndarray

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "NeuronState":
        return cls(np.zeros(shape, dtype=dtype))


def surrogate_factor(u_minus_th: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    return rectangular_surrogate(u_minus_th, cfg.surrogate_width)


def _step(state: NeuronState, current: np.ndarray, cfg: NeuronConfig):
    current = np.asarray(current)
    if current.shape != state.H.shape:
        raise ConfigurationError(
            f"current shape {current.shape} does not match state shape {state.H.shape}"
        )
    u = state.H + current
    z = heaviside(u - cfg.u_th).astype(u.dtype, copy=False)
    h = cfg.leak * u * (1.0 - z)
    return u, z, NeuronState(h)


def lif_step(state: NeuronState, current: np.ndarray, cfg: NeuronConfig):
    if cfg.mode != LIF:
        raise ConfigurationError("lif_step requires mode='lif'")
    _, z, new_state = _step(state, current, cfg)
    return z, new_state


def liaf_step(state: NeuronState, current: np.ndarray, cfg: NeuronConfig):
    if cfg.mode != LIAF:
        raise ConfigurationError("liaf_step requires mode='liaf'")
    u, _, new_state = _step(state, current, cfg)
    return relu(u), new_state


def run_sequence(currents: np.ndarray, cfg: NeuronConfig):
    """Unroll the neuron over axis 1 of ``currents`` (``[B, T, ...]``).

    Hidden state starts at zero.  Returns ``(outputs, cache)``.
    """
    T = currents.shape[1]
    state = NeuronState.zeros(currents[:, 0].shape, dtype=currents.dtype)
    U = np.empty_like(currents)
    Z = np.empty_like(currents)
    for t in range(T):
        u, z, state = _step(state, currents[:, t], cfg)
        U[:, t] = u
        Z[:, t] = z
    out = Z.copy() if cfg.mode == LIF else relu(U)
    return out, (U, Z)


def backward_sequence(grad_out: np.ndarray, cache, cfg: NeuronConfig) -> np.ndarray:
    """Backpropagate through time; returns the gradient w.r.t. the input currents."""
    U, Z = cache
    T = U.shape[1]
    grad_in = np.empty_like(U)
    grad_h = np.zeros_like(U[:, 0])
    lam = cfg.leak
    for t in range(T - 1, -1, -1):
        u, z = U[:, t], Z[:, t]
        sg = surrogate_factor(u - cfg.u_th, cfg)
        if cfg.mode == LIF:
            g_u = grad_out[:, t] * sg
        else:
            g_u = grad_out[:, t] * relu_grad(u)
        # H = lam * U * (1 - Z)
        g_u = g_u + grad_h * lam * (1.0 - z)
        if not cfg.reset_detached:
            g_u = g_u - grad_h * lam * u * sg
        grad_in[:, t] = g_u
        grad_h = g_u
    return grad_in
