"""Synthetic labelled event streams with periodic signal bursts in noise.

During each signal window a bar sweeps across the sensor along a
class-specific direction, emitting ON events at its leading edge and OFF
events at its trailing edge.  Uniform Poisson noise covers the whole
recording, so frames outside the signal windows carry noise only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError
from .events import EventStream
from .seeding import rng_for


@dataclass(frozen=True)
class SynthConfig:
    width: int = 32
    height: int = 32
    n_classes: int = 3
    n_samples: int = 450
    duration_us: int = 200_000
    # periodic signal placement; ignored when signal_windows is given
    period_us: int = 40_000
    signal_us: int = 20_000
    random_phase: bool = True
    signal_windows: tuple[tuple[int, int], ...] | None = None
    noise_rate: float = 5e-6  # events / us / pixel
    bar_width: float = 3.0
    sweeps_per_window: int = 1
    speed_jitter: float = 0.2
    time_jitter_us: float = 200.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1 or self.n_classes < 1 or self.n_samples < 0:
            raise ConfigurationError("width, height and n_classes must be >= 1")
        if self.duration_us < 1:
            raise ConfigurationError("duration_us must be >= 1")
        if self.noise_rate < 0:
            raise ConfigurationError("noise_rate must be >= 0")
        if self.signal_windows is not None:
            wins = tuple((int(a), int(b)) for a, b in self.signal_windows)
            for start, length in wins:
                if start < 0 or length < 0 or start + length > self.duration_us:
                    raise ConfigurationError(f"signal window ({start}, {length}) exceeds duration")
            object.__setattr__(self, "signal_windows", wins)
        elif not (0 <= self.signal_us <= self.period_us) or self.period_us < 1:
            raise ConfigurationError("need 0 <= signal_us <= period_us and period_us >= 1")

    def class_angle(self, label: int) -> float:
        return math.pi * label / self.n_classes


def sample_windows(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    if cfg.signal_windows is not None:
        return list(cfg.signal_windows)
    if cfg.signal_us == 0:
        return []
    phase = int(rng.integers(0, cfg.period_us)) if cfg.random_phase else 0
    out = []
    start = phase - cfg.period_us
    while start < cfg.duration_us:
        a, b = max(start, 0), min(start + cfg.signal_us, cfg.duration_us)
        if b > a:
            out.append((a, b - a))
        start += cfg.period_us
    return out


def _sweep_events(cfg: SynthConfig, angle: float, start: int, length: int, rng):
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width]
    xs, ys = xs.ravel(), ys.ravel()
    u = (xs - (cfg.width - 1) / 2) * math.cos(angle) + (ys - (cfg.height - 1) / 2) * math.sin(angle)
    u_min, u_max = u.min(), u.max()
    per = length / cfg.sweeps_per_window
    speed = (u_max - u_min + cfg.bar_width) / per
    speed *= 1.0 + cfg.speed_jitter * rng.uniform(-1, 1)
    ts, xo, yo, po = [], [], [], []
    for k in range(cfg.sweeps_per_window):
        t_on = start + k * per + (u - u_min) / speed
        t_off = t_on + cfg.bar_width / speed
        for times, pol in ((t_on, 1), (t_off, -1)):
            times = times + rng.normal(0.0, cfg.time_jitter_us, size=times.shape)
            ok = (times >= start) & (times < start + length)
            ts.append(np.floor(times[ok]).astype(np.int64))
            xo.append(xs[ok])
            yo.append(ys[ok])
            po.append(np.full(int(ok.sum()), pol))
    return ts, xo, yo, po


def make_sample(cfg: SynthConfig, index: int):
    """Return ``(stream, label, signal_windows)`` for sample ``index``."""
    rng = rng_for(cfg.seed, "synth", index)
    label = index % cfg.n_classes
    windows = sample_windows(cfg, rng)
    angle = cfg.class_angle(label)
    ts, xs, ys, ps = [], [], [], []
    for start, length in windows:
        a, b, c, d = _sweep_events(cfg, angle, start, length, rng)
        ts += a
        xs += b
        ys += c
        ps += d
    n_pix = cfg.width * cfg.height
    n_noise = int(rng.poisson(cfg.noise_rate * n_pix * cfg.duration_us))
    ts.append(rng.integers(0, cfg.duration_us, size=n_noise))
    xs.append(rng.integers(0, cfg.width, size=n_noise))
    ys.append(rng.integers(0, cfg.height, size=n_noise))
    ps.append(rng.choice(np.array([1, -1]), size=n_noise))
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    stream = EventStream(cfg.width, cfg.height, 2, cfg.duration_us, t[order],
                         np.concatenate(xs)[order], np.concatenate(ys)[order],
                         np.concatenate(ps)[order])
    return stream, label, windows


def generate_with_windows(cfg: SynthConfig):
    return [make_sample(cfg, i) for i in range(cfg.n_samples)]


def generate(cfg: SynthConfig) -> list[tuple[EventStream, int]]:
    return [(s, y) for s, y, _ in generate_with_windows(cfg)]


def frame_signal_mask(windows, t0_us: int, dt_us: int, T: int) -> np.ndarray:
    """True for frames whose window overlaps any signal interval."""
    lo = t0_us + dt_us * np.arange(T)
    hi = lo + dt_us
    mask = np.zeros(T, dtype=bool)
    for start, length in windows:
        mask |= (lo < start + length) & (hi > start)
    return mask


def split(samples, train_fraction: float, seed: int):
    """Class-stratified, seed-deterministic split into ``(train, test)``."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labels = np.array([s[1] for s in samples])
    classes = np.unique(labels)
    if len(samples) < len(classes) or len(samples) == 0:
        raise DataError("fewer samples than classes")
    rng = rng_for(seed, "split")
    train_idx, test_idx = [], []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_fraction * len(idx)))
        train_idx += idx[:k].tolist()
        test_idx += idx[k:].tolist()
    train_idx.sort()
    test_idx.sort()
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]
