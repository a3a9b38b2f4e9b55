"""Synthetic event generator and stratified splits."""
import numpy as np
import pytest

from tasnn.attention import squeeze
from tasnn.errors import ConfigurationError, DataError
from tasnn.events import AggregationConfig, aggregate
from tasnn.synth_data import (SynthConfig, frame_signal_mask, generate, generate_with_windows, make_sample,
                              sample_windows, split)


def test_deterministic_per_seed():
    cfg = SynthConfig(n_samples=4)
    a, b = generate(cfg), generate(cfg)
    for (sa, ya), (sb, yb) in zip(a, b):
        assert ya == yb
        for f in ("t", "x", "y", "p"):
            assert np.array_equal(getattr(sa, f), getattr(sb, f))
    c = generate(SynthConfig(n_samples=4, seed=1))
    assert not np.array_equal(a[0][0].t, c[0][0].t)


def test_streams_are_valid_and_labels_cycle():
    cfg = SynthConfig(n_samples=9)
    for i, (s, y) in enumerate(generate(cfg)):
        s.validate()
        assert y == i % 3
        assert np.all(np.diff(s.t) >= 0)
        assert s.duration_us == cfg.duration_us


def test_no_noise_no_windows_is_empty():
    cfg = SynthConfig(n_samples=3, noise_rate=0.0, signal_windows=())
    for s, _ in generate(cfg):
        assert len(s) == 0


def test_noise_count_within_three_sigma():
    cfg = SynthConfig(n_samples=1, signal_windows=(), noise_rate=1e-5, duration_us=100_000)
    lam = cfg.noise_rate * cfg.width * cfg.height * cfg.duration_us
    n = np.array([len(make_sample(cfg, i)[0]) for i in range(40)])
    assert abs(n.mean() - lam) < 3 * np.sqrt(lam / len(n))


def test_noise_only_frames_carry_noise_only():
    cfg = SynthConfig(n_samples=3, signal_windows=((60_000, 20_000),))
    for s, _, wins in generate_with_windows(cfg):
        inside = (s.t >= 60_000) & (s.t < 80_000)
        density_in = inside.sum() / 20_000
        density_out = (~inside).sum() / 180_000
        assert density_in > 10 * density_out


def test_explicit_windows_validated():
    with pytest.raises(ConfigurationError):
        SynthConfig(signal_windows=((190_000, 20_000),))
    with pytest.raises(ConfigurationError):
        SynthConfig(signal_us=50_000, period_us=40_000)
    with pytest.raises(ConfigurationError):
        SynthConfig(noise_rate=-1.0)


def test_periodic_windows_cover_signal_fraction():
    cfg = SynthConfig()
    wins = sample_windows(cfg, np.random.default_rng(3))
    covered = sum(length for _, length in wins)
    assert abs(covered - cfg.duration_us * cfg.signal_us / cfg.period_us) <= cfg.signal_us


def test_frame_signal_mask():
    m = frame_signal_mask([(2_500, 1_000)], 0, 1_000, 5)
    assert m.tolist() == [False, False, True, True, False]
    assert not frame_signal_mask([], 0, 1_000, 3).any()


def test_classes_separable_by_independent_classifier():
    # the bar reaches pixel u at time proportional to u along the class direction, so the
    # correlation of ON-event time (from window start) with each projection names the class
    cfg = SynthConfig(n_samples=60, n_classes=2)
    correct = 0
    for s, y, wins in generate_with_windows(cfg):
        us, ts = {0: [], 1: []}, []
        for start, length in wins:
            sel = (s.t >= start) & (s.t < start + length) & (s.p > 0)
            ts.append(s.t[sel] - start)
            for c in range(2):
                a = cfg.class_angle(c)
                us[c].append(s.x[sel] * np.cos(a) + s.y[sel] * np.sin(a))
        t = np.concatenate(ts).astype(float)
        scores = [np.corrcoef(np.concatenate(us[c]), t)[0, 1] for c in range(2)]
        correct += int(np.argmax(scores) == y)
    assert correct / cfg.n_samples > 0.95


def test_signal_frames_have_higher_squeeze():
    cfg = SynthConfig(n_samples=6)
    sig, noi = [], []
    for s, _, wins in generate_with_windows(cfg):
        frames = aggregate(s, AggregationConfig(2_000, 100, 0))
        sq = squeeze(frames)
        m = frame_signal_mask(wins, 0, 2_000, 100)
        sig += list(sq[m])
        noi += list(sq[~m])
    assert np.mean(sig) > 5 * np.mean(noi)


def test_split_stratified_disjoint_deterministic():
    data = [(None, i % 3, i) for i in range(75)]
    tr, te = split(data, 2 / 3, 0)
    assert {c: sum(1 for d in tr if d[1] == c) for c in range(3)} == {0: 17, 1: 17, 2: 17}
    assert {c: sum(1 for d in te if d[1] == c) for c in range(3)} == {0: 8, 1: 8, 2: 8}
    assert not {d[2] for d in tr} & {d[2] for d in te}
    assert len(tr) + len(te) == 75
    assert split(data, 2 / 3, 0) == (tr, te)
    assert split(data, 2 / 3, 1) != (tr, te)


def test_default_split_is_300_150():
    data = [(None, i % 3) for i in range(450)]
    tr, te = split(data, 2 / 3, 0)
    assert len(tr) == 300 and len(te) == 150
    assert sum(1 for d in te if d[1] == 0) == 50


def test_split_rejects_bad_fraction_and_tiny_sets():
    with pytest.raises(ConfigurationError):
        split([(None, 0)], 1.0, 0)
    with pytest.raises(DataError):
        split([], 0.5, 0)
