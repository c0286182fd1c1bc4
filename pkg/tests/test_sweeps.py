import numpy as np
import pytest

from dropoutlab.config import EvalDefaults, ExperimentConfig
from dropoutlab.data import generate_zipf_corpus
from dropoutlab.errors import ConfigError
from dropoutlab.family import FamilyParams, evaluate_dataset
from dropoutlab.numeric import SplitSeed
from dropoutlab.sweeps import (
    BUCKET_HEADER,
    SWEEP_HEADER,
    buckets_csv,
    grid_search_temperature,
    parse_sweep_grid,
    sweep_csv,
    temperature_linear_search,
)
from dropoutlab.training import build_dataset, build_model, train


@pytest.fixture(scope="module")
def moons_setup():
    config = ExperimentConfig.from_dict({
        "seed": 3, "steps": 120, "batch_size": 16, "weight_decay": 1e-4,
        "log_every": 60,
        "model": {"type": "mlp", "hidden_sizes": [10]},
        "dropout": {"rate": 0.25},
        "optimizer": {"type": "sgd", "lr": 0.1},
        "data": {"kind": "two_moons", "n": 300, "noise": 0.15, "seed": 5,
                 "split_fractions": [0.7, 0.15, 0.15]},
    })
    result = train(config)
    bundle = build_dataset(config)
    model = build_model(config, bundle, params=result.checkpoint.params)
    return config, model, bundle


@pytest.fixture(scope="module")
def lm_setup(tmp_path_factory):
    corpus = tmp_path_factory.mktemp("corpus") / "mini.txt"
    corpus.write_text(generate_zipf_corpus(seed=5, n_tokens=2500, vocab_size=60))
    config = ExperimentConfig.from_dict({
        "seed": 9, "steps": 80, "batch_size": 8, "weight_decay": 1e-6,
        "log_every": 40,
        "model": {"type": "lstm", "embedding_dim": 10, "hidden_size": 16, "bptt": 12},
        "dropout": {"rate": 0.25, "sharing": "shared_across_time"},
        "data": {"kind": "text", "path": str(corpus), "tokenizer": "word",
                 "split_fractions": [0.8, 0.2]},
    })
    result = train(config)
    bundle = build_dataset(config)
    model = build_model(config, bundle, params=result.checkpoint.params)
    return config, model, bundle


def synthetic_overconfident(seed=2024, n=4000, c=10, factor=2.0):
    rng = SplitSeed(seed).generator()
    z = rng.standard_normal((n, c)) * 1.5
    probs = np.exp(z - z.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    targets = np.array([rng.choice(c, p=probs[i]) for i in range(n)])
    return factor * z, targets


class TestTemperatureSearch:
    def test_singleton_grid_returns_its_xe(self, moons_setup):
        _, model, bundle = moons_setup
        res = temperature_linear_search(model, bundle.split("valid"), (1.0, 1.0, 1),
                                        seed=SplitSeed(0))
        assert res.t_opt == 1.0
        assert res.xe_opt == res.xes[0]

    def test_overconfident_predictor_recovers_factor_two(self):
        logits, targets = synthetic_overconfident()
        grid = np.arange(0.5, 4.0001, 0.05)
        res = grid_search_temperature(logits, targets, grid)
        assert 1.8 <= res.t_opt <= 2.2

    def test_never_worse_than_any_grid_point(self, moons_setup):
        _, model, bundle = moons_setup
        res = temperature_linear_search(model, bundle.split("valid"), (0.5, 3.0, 26),
                                        seed=SplitSeed(0))
        assert all(res.xe_opt <= xe for xe in res.xes)
        one = res.grid.index(1.0)
        assert res.xe_opt <= res.xes[one]

    def test_mc_mode_uses_aggregation(self, moons_setup):
        _, model, bundle = moons_setup
        res = temperature_linear_search(model, bundle.split("valid"), (0.8, 1.2, 5),
                                        deterministic=False, alpha=1.0, lam=1.0,
                                        samples=8, seed=SplitSeed(1), max_targets=20)
        assert len(res.xes) == 5 and all(np.isfinite(res.xes))

    def test_lowest_temperature_tie_break(self):
        logits = np.zeros((4, 3))  # xe is ln 3 at every temperature
        targets = np.array([0, 1, 2, 0])
        res = grid_search_temperature(logits, targets, [0.5, 1.0, 2.0])
        assert res.t_opt == 0.5

    def test_bad_grid_spec_rejected(self, moons_setup):
        _, model, bundle = moons_setup
        for spec in ((0.0, 2.0, 5), (2.0, 1.0, 5), (1.0, 2.0, 0)):
            with pytest.raises(ConfigError):
                temperature_linear_search(model, bundle.split("valid"), spec,
                                          seed=SplitSeed(0))


class TestSweepGrid:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            parse_sweep_grid({"alphas": [1.0], "typo": 3}, EvalDefaults())

    def test_det_and_float_alphas(self):
        grid = parse_sweep_grid({"alphas": ["det", 0.0, 1.0], "splits": ["train"]},
                                EvalDefaults())
        assert grid.alphas == ("det", 0.0, 1.0)

    def test_bad_alpha_rejected(self):
        from dropoutlab.errors import DomainError
        with pytest.raises(DomainError):
            parse_sweep_grid({"alphas": [1.5]}, EvalDefaults())


class TestSweepCsv:
    def test_header_and_shape(self, moons_setup):
        config, model, bundle = moons_setup
        grid = parse_sweep_grid(
            {"splits": ["train"], "alphas": ["det", 1.0], "lambdas": [0.0, 1.0],
             "temperatures": [1.0], "samples": 4, "seed": 0}, config.eval)
        csv = sweep_csv(model, bundle, grid)
        lines = csv.strip().split("\n")
        assert lines[0] == SWEEP_HEADER
        assert len(lines) == 1 + 4
        det_row = lines[1].split(",")
        assert det_row[1] == "det" and det_row[4] == "0"

    def test_det_row_matches_evaluate_dataset(self, moons_setup):
        config, model, bundle = moons_setup
        grid = parse_sweep_grid(
            {"splits": ["train"], "alphas": ["det"], "lambdas": [0.0],
             "temperatures": [1.0], "samples": 4, "seed": 0}, config.eval)
        csv = sweep_csv(model, bundle, grid)
        xe = float(csv.strip().split("\n")[1].split(",")[5])
        direct = evaluate_dataset(model, bundle.split("train"),
                                  FamilyParams.det(lam=0.0), SplitSeed(0),
                                  config.eval.max_targets)
        assert xe == direct.xe

    def test_duplicate_grid_points_identical_rows(self, moons_setup):
        config, model, bundle = moons_setup
        grid = parse_sweep_grid(
            {"splits": ["train"], "alphas": [0.5, 0.5], "lambdas": [1.0],
             "temperatures": [1.0], "samples": 6, "seed": 0}, config.eval)
        lines = sweep_csv(model, bundle, grid).strip().split("\n")
        assert lines[1] == lines[2]

    def test_byte_identical_reruns_and_worker_counts(self, moons_setup):
        config, model, bundle = moons_setup
        grid = parse_sweep_grid(
            {"splits": ["train", "valid"], "alphas": ["det", 0.0, 1.0],
             "lambdas": [0.0, 0.5, 1.0], "temperatures": [1.0, 2.0], "samples": 5,
             "seed": 3}, config.eval)
        a = sweep_csv(model, bundle, grid, n_workers=1)
        b = sweep_csv(model, bundle, grid, n_workers=1)
        c = sweep_csv(model, bundle, grid, n_workers=4)
        assert a == b == c


class TestBucketsCsv:
    def test_header_and_counts(self, lm_setup):
        config, model, bundle = lm_setup
        fps = [FamilyParams.det(), FamilyParams(alpha=1.0, lam=1.0, samples=4)]
        csv = buckets_csv(model, bundle, ["9<", "<10"], fps, SplitSeed(2),
                          max_targets=200, splits=("train", "valid"))
        lines = csv.strip().split("\n")
        assert lines[0] == BUCKET_HEADER
        # 2 splits x 2 fps x 2 buckets
        assert len(lines) == 1 + 8

    def test_rejected_for_classification(self, moons_setup):
        config, model, bundle = moons_setup
        with pytest.raises(ConfigError):
            buckets_csv(model, bundle, ["9<"], [FamilyParams.det()], SplitSeed(0), None)
