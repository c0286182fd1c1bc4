import json

import numpy as np
import pytest

from dropoutlab.checkpoint import Checkpoint, dumps_canonical, load_checkpoint, save_checkpoint
from dropoutlab.config import ExperimentConfig
from dropoutlab.errors import ConfigError

CONFIG = {
    "seed": 11,
    "steps": 3,
    "batch_size": 4,
    "weight_decay": 0.01,
    "model": {"type": "mlp", "hidden_sizes": [5]},
    "dropout": {"rate": 0.3},
    "data": {"kind": "two_moons", "n": 64, "noise": 0.1, "seed": 2,
             "split_fractions": [0.75, 0.25]},
}


def make_checkpoint():
    config = ExperimentConfig.from_dict(dict(CONFIG))
    rng = np.random.default_rng(0)
    params = {"W0": rng.standard_normal((2, 5)), "b0": rng.standard_normal(5),
              "W1": rng.standard_normal((5, 2)), "b1": np.zeros(2)}
    return Checkpoint(config=config, step=3, params=params, base_seed=11)


class TestCanonicalJson:
    def test_seventeen_significant_digits(self):
        third = 1.0 / 3.0
        text = dumps_canonical({"x": third})
        assert text == '{"x":0.33333333333333331}'
        assert json.loads(text)["x"] == third

    def test_round_trip_lossless_for_awkward_floats(self):
        values = [0.1, 1e-300, 123456789.123456789, 2.0**-52, np.pi]
        text = dumps_canonical(values)
        for original, parsed in zip(values, json.loads(text)):
            assert float(parsed) == original

    def test_sorted_keys(self):
        assert dumps_canonical({"b": 1, "a": 2}) == '{"a":2,"b":1}'

    def test_nonfinite_rejected(self):
        with pytest.raises(ConfigError):
            dumps_canonical({"x": float("nan")})


class TestCheckpointRoundTrip:
    def test_save_load_save_byte_identical(self, tmp_path):
        ckpt = make_checkpoint()
        p1 = tmp_path / "a.ckpt.json"
        p2 = tmp_path / "b.ckpt.json"
        save_checkpoint(ckpt, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_parameters_bit_exact(self, tmp_path):
        ckpt = make_checkpoint()
        p = tmp_path / "c.ckpt.json"
        save_checkpoint(ckpt, p)
        loaded = load_checkpoint(p)
        for name, arr in ckpt.params.items():
            np.testing.assert_array_equal(loaded.params[name], arr)
        assert loaded.step == ckpt.step
        assert loaded.base_seed == ckpt.base_seed
        assert loaded.config == ckpt.config

    def test_wrong_kind_rejected(self):
        with pytest.raises(ConfigError):
            Checkpoint.from_json('{"kind": "something-else"}')

    def test_wrong_version_rejected(self):
        ckpt = make_checkpoint()
        doc = json.loads(ckpt.to_json())
        doc["format_version"] = 99
        with pytest.raises(ConfigError):
            Checkpoint.from_json(json.dumps(doc))

    def test_shape_mismatch_rejected(self):
        ckpt = make_checkpoint()
        doc = json.loads(ckpt.to_json())
        doc["params"]["W0"]["shape"] = [3, 5]
        with pytest.raises(ConfigError):
            Checkpoint.from_json(json.dumps(doc))


class TestConfigStrictness:
    def test_unknown_top_level_key_rejected(self):
        bad = dict(CONFIG)
        bad["optimizer_typo"] = {}
        with pytest.raises(ConfigError, match="unknown keys"):
            ExperimentConfig.from_dict(bad)

    def test_unknown_nested_key_rejected(self):
        bad = json.loads(json.dumps(CONFIG))
        bad["model"]["layers"] = 3
        with pytest.raises(ConfigError, match="unknown keys"):
            ExperimentConfig.from_dict(bad)

    def test_config_round_trip(self):
        config = ExperimentConfig.from_dict(dict(CONFIG))
        again = ExperimentConfig.from_dict(config.to_dict())
        assert config == again

    def test_arch_data_mismatch_rejected(self):
        bad = json.loads(json.dumps(CONFIG))
        bad["model"] = {"type": "lstm"}
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_optimizer_defaults_by_architecture(self):
        config = ExperimentConfig.from_dict(dict(CONFIG))
        assert config.optimizer.type == "sgd"
        assert config.optimizer.lr == 0.1
        lstm_cfg = {
            "seed": 1, "steps": 1, "batch_size": 2,
            "model": {"type": "lstm", "embedding_dim": 4, "hidden_size": 4, "bptt": 4},
            "dropout": {"rate": 0.2},
            "data": {"kind": "text", "path": "builtin:corpus", "tokenizer": "word",
                     "split_fractions": [0.8, 0.1, 0.1]},
        }
        config = ExperimentConfig.from_dict(lstm_cfg)
        assert config.optimizer.type == "adam"
        assert config.optimizer.lr == 2e-3
        assert config.clip_norm == 5.0
