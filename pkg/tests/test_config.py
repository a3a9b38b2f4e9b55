"""YAML experiment configuration: defaults, validation, derived objects."""
import pytest
import yaml

from tasnn.config import dump_config, load_config, resolve, spec_from_dict, spec_to_dict
from tasnn.errors import ConfigurationError
from tasnn.seeding import derive_seed


def test_defaults_follow_gesture_setting():
    cfg = resolve({})
    assert (cfg.neuron.u_th, cfg.neuron.leak) == (0.3, 0.3)
    assert cfg.attention.r == 16
    assert (cfg.train.lr, cfg.train.batch_size, cfg.train.epochs) == (1e-4, 36, 100)
    assert (cfg.aggregation.dt_us, cfg.aggregation.T) == (2000, 50)
    assert cfg.eval.n_crops == 10 and cfg.network.strategy == "S3"


def test_leak_out_of_range_names_key():
    with pytest.raises(ConfigurationError, match=r"neuron\.leak"):
        resolve({"neuron": {"leak": 1.5}})


@pytest.mark.parametrize("raw,where", [
    ({"train": {"momentum": 0.9}}, "train.momentum"),
    ({"optimizer": {}}, "optimizer"),
    ({"data": {"synth": {"colour": 1}}}, "data.synth.colour"),
    ({"train": {"seed": 3}}, "train.seed"),
])
def test_unknown_keys_rejected(raw, where):
    with pytest.raises(ConfigurationError, match=where.replace(".", r"\.") + ": unknown key"):
        resolve(raw)


@pytest.mark.parametrize("raw", [
    {"seed": -1}, {"threads": 0}, {"seed": True}, {"attention": {"r": 0}},
    {"attention": {"hidden_width": "round"}}, {"eval": {"pruning": "magic"}},
    {"network": {"structure": "Input-XYZ-3"}}, {"data": {"source": "web"}},
    {"data": {"source": "directory"}}, {"aggregation": {"T": 0}}, {"train": "fast"},
])
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigurationError):
        resolve(raw)


def test_resolve_is_idempotent():
    cfg = resolve({"seed": 4, "train": {"epochs": 3}, "data": {"synth": {"n_samples": 12}},
                   "network": {"input_shape": [2, 32, 32], "n_classes": 3}})
    again = resolve(cfg.to_dict())
    assert again == cfg
    assert resolve(yaml.safe_load(dump_config(cfg))) == cfg


def test_derived_seeds_are_independent_streams():
    cfg = resolve({"seed": 7})
    assert cfg.synth_config().seed == derive_seed(7, "data")
    assert cfg.train_config().seed == derive_seed(7, "train")
    spec = cfg.network_spec()
    assert spec.seed == derive_seed(7, "init")
    assert len({cfg.synth_config().seed, cfg.train_config().seed, spec.seed}) == 3


def test_network_spec_geometry_from_synthetic_data():
    cfg = resolve({"data": {"synth": {"width": 16, "height": 8, "n_classes": 4}}})
    spec = cfg.network_spec()
    assert spec.input_shape == (2, 8, 16) and spec.n_classes == 4 and spec.T == 50


def test_directory_data_needs_geometry():
    cfg = resolve({"data": {"source": "directory", "path": "x"}})
    with pytest.raises(ConfigurationError, match="input_shape"):
        cfg.network_spec()
    assert cfg.network_spec((2, 4, 4), 3).n_classes == 3


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigurationError, match="YAML"):
        load_config(bad)
    lst = tmp_path / "list.yaml"
    lst.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_config(lst)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == resolve({})


def test_spec_dict_round_trip():
    spec = resolve({"neuron": {"mode": "liaf"}, "network": {"strategy": "S4"}}).network_spec()
    assert spec_from_dict(spec_to_dict(spec)) == spec
