"""Parameter and FLOPs accounting against closed forms."""
import math

import numpy as np
import pytest

from tasnn.metrics import (SWEEP_HEADER, count_params, estimate_flops, gesture_spec, layer_flops,
                           pruning_sweep, read_sweep, realized_proportion, ta_module_flops,
                           ta_overhead_pct, write_sweep, SweepPoint)
from tasnn.network import NetworkSpec, build
from tasnn.neurons import NeuronConfig
from tasnn.synth_data import SynthConfig, generate

from oracles import conv_macs, ta_params_closed_form

# published TA overheads for the gesture network at T = 30, 60, 120 (r = 16)
PUBLISHED_OVERHEAD = {30: 0.004, 60: 0.018, 120: 0.078}


def net_for(structure, shape, strategy="S1", T=10, n_classes=10, r=4):
    return build(NetworkSpec(shape, structure, T=T, n_classes=n_classes, neuron=NeuronConfig(),
                             strategy=strategy, r=r))


def test_conv_flops_match_closed_form():
    net = net_for("Input-64C3-10", (2, 32, 32))
    f = layer_flops(net)
    assert f["0:64C3"] == 2 * conv_macs(2, 64, 3, 32, 32)
    assert f["1:10FC"] == 2 * 64 * 32 * 32 * 10


def test_pooling_changes_downstream_macs():
    net = net_for("Input-MP4-16C3-AP2-32C3-AP2-3", (2, 32, 32), n_classes=3)
    f = layer_flops(net)
    assert f["1:16C3"] == 2 * conv_macs(2, 16, 3, 8, 8)
    assert f["3:32C3"] == 2 * conv_macs(16, 32, 3, 4, 4)
    assert f["5:3FC"] == 2 * 32 * 2 * 2 * 3


def test_param_counts_closed_form():
    net = net_for("Input-4C3-5FC-3", (2, 6, 6), strategy="S4", T=12, n_classes=3, r=4)
    rep = count_params(net)
    base = (4 * 2 * 9 + 4) + (4 * 36 * 5 + 5) + (5 * 3 + 3)
    assert rep.base_params == base
    assert rep.ta_params == 3 * ta_params_closed_form(12, 4)
    assert rep.total_params == base + rep.ta_params
    assert rep.ta_overhead_pct == pytest.approx(100 * rep.ta_params / base, rel=1e-12)


def test_gesture_param_totals():
    rep = count_params(build(gesture_spec(30)))
    assert rep.base_params == 2_322_891
    assert rep.ta_params == ta_params_closed_form(30, 16) == 120
    assert rep.total_params == 2_323_011


@pytest.mark.parametrize("T", [30, 60, 120])
def test_gesture_overhead_within_band_ceil(T):
    got = ta_overhead_pct(gesture_spec(T), "ceil")
    assert abs(got - PUBLISHED_OVERHEAD[T]) <= 0.3 * PUBLISHED_OVERHEAD[T]


def test_floor_convention_misses_band_at_short_window():
    got = ta_overhead_pct(gesture_spec(30), "floor")
    assert abs(got - PUBLISHED_OVERHEAD[30]) > 0.3 * PUBLISHED_OVERHEAD[30]


@pytest.mark.parametrize("k", [0, 1, 7, 24, 36, 60])
def test_s2_reduction_is_fraction_of_frames(k):
    net = build(gesture_spec(60))
    rep = estimate_flops(net, {0: 60 - k})
    assert rep.guarded_reduction_pct == pytest.approx(100 * k / 60, abs=1e-12)
    assert rep.weighted_reduction_pct < rep.guarded_reduction_pct or k == 0


def test_s4_guarded_reduction_is_flops_weighted_mean():
    net = net_for("Input-4C3-5FC-3", (2, 6, 6), strategy="S4", T=10, n_classes=3)
    kept = {0: 6, 1: 3, 2: 10}
    rep = estimate_flops(net, kept)
    per = layer_flops(net)
    names = [m.name for m in net.weighted]
    expect = sum(per[n] * (10 - kept[i]) for i, n in enumerate(names)) / sum(per[n] * 10 for n in names)
    assert rep.guarded_reduction_pct == pytest.approx(100 * expect, abs=1e-12)


def test_flops_are_linear_in_retained_frames():
    net = build(gesture_spec(30))
    totals = [estimate_flops(net, {0: r}).total_flops for r in range(31)]
    assert np.allclose(np.diff(totals), totals[1] - totals[0])
    assert totals[-1] == estimate_flops(net).total_flops_full


def test_ta_flops_are_always_spent():
    net = build(gesture_spec(30))
    m = net.weighted[0]
    expect = 2 * (m.ta.W1.size + m.ta.W2.size) + 30 * int(np.prod(m.in_shape))
    assert ta_module_flops(net) == expect
    assert estimate_flops(net, {0: 0}).total_flops >= expect


def test_retained_bounds_checked():
    net = build(gesture_spec(30))
    with pytest.raises(ValueError):
        estimate_flops(net, {0: 31})


@pytest.mark.parametrize("T,p,expect", [(30, 0.17, 5 / 30), (60, 0.4, 0.4), (50, 0.5, 0.5), (10, 1.0, 1.0)])
def test_realized_proportion(T, p, expect):
    assert realized_proportion(T, p) == pytest.approx(expect, abs=1e-15)


def test_sweep_csv_round_trip(tmp_path):
    pts = [SweepPoint(0.0, 1.0, 0.0, 0.0), SweepPoint(0.5, 0.8123456, 0.01, 50.0)]
    path = write_sweep(pts, tmp_path / "s.csv")
    assert path.read_text().splitlines()[0] == ",".join(SWEEP_HEADER)
    rows = read_sweep(path)
    assert rows[1]["accuracy_mean"] == pytest.approx(0.812346)
    assert rows[1]["flops_reduction_pct"] == 50.0


def test_pruning_sweep_reports_realized_reduction(tmp_path):
    data = generate(SynthConfig(width=8, height=8, n_classes=2, n_samples=6, duration_us=20_000,
                                period_us=10_000, signal_us=5_000))
    net = build(NetworkSpec((2, 8, 8), "Input-4C3-2", T=10, n_classes=2, neuron=NeuronConfig(),
                            strategy="S2", r=4, dt_us=1000))
    pts = pruning_sweep(net, data, [0.0, 0.3, 0.5], "iap", n_crops=2, out_path=tmp_path / "sw.csv")
    assert [p.flops_reduction_pct for p in pts] == pytest.approx([0.0, 30.0, 50.0], abs=1e-12)
    irp = pruning_sweep(net, data, [0.5], "irp", seeds=3, n_crops=2)
    assert len(irp[0].accuracies) == 3
    assert irp[0].accuracy_std == pytest.approx(float(np.std(irp[0].accuracies)))
    assert len(read_sweep(tmp_path / "sw.csv")) == 3
    with pytest.raises(ValueError):
        pruning_sweep(net, data, [0.5], "random")


def test_hidden_width_gap_reported():
    # ceil and floor agree once T/r is an integer
    assert ta_overhead_pct(gesture_spec(64), "ceil") == ta_overhead_pct(gesture_spec(64), "floor")
    assert math.ceil(30 / 16) != math.floor(30 / 16)


# published (T, best proportion, FLOPs reduction) rows for the gesture network
PUBLISHED_IAP_ROWS = {
    "S2": [(30, 0.17, 16.67), (60, 0.40, 40.00), (90, 0.30, 30.00), (120, 0.35, 35.00),
           (150, 0.40, 40.00), (180, 0.40, 40.00)],
    "S4": [(30, 0.34, 33.33), (60, 0.24, 23.33), (90, 0.32, 31.11), (120, 0.50, 50.00),
           (150, 0.35, 34.67), (180, 0.35, 35.00)],
}


@pytest.mark.parametrize("strategy,T,p,published",
                         [(s, *row) for s, rows in PUBLISHED_IAP_ROWS.items() for row in rows])
def test_published_reductions_follow_floor_quantization(strategy, T, p, published):
    net = build(gesture_spec(T, strategy))
    k = int(np.floor(p * T + 1e-9))
    rep = estimate_flops(net, {m.index: T - k for m in net.weighted if m.ta is not None})
    assert round(rep.guarded_reduction_pct, 2) == published
