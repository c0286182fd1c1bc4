"""Deterministic training loop and the builders shared by every entry
point (dataset, model, optimiser, checkpoint reconstruction).

All randomness flows from the config seed through fixed stream tags, so a
config trains to a bitwise-identical checkpoint on every run.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .data import CorpusData, ingest_classification_csv, ingest_text_corpus, two_moons
from .dropout import DropoutSpec, sample_mask_batch, sample_masks
from .errors import ConfigError, DomainError, TrainingDivergedError
from .lstm import LstmLm
from .mlp import Mlp
from .models import backward, map_loss
from .numeric import SplitSeed

__all__ = [
    "STREAM_INIT",
    "STREAM_BATCH",
    "STREAM_MASKS",
    "STREAM_EVAL",
    "DataBundle",
    "build_dataset",
    "build_model",
    "model_from_checkpoint",
    "Sgd",
    "Adam",
    "TrainResult",
    "train",
    "blas_single_thread",
]

log = logging.getLogger("dropoutlab")

# seed stream tags: root.child(tag, ...) keeps every consumer independent
STREAM_INIT = 0
STREAM_BATCH = 1
STREAM_MASKS = 2
STREAM_EVAL = 3


@contextmanager
def blas_single_thread():
    """Pin BLAS pools to one thread: GEMM reductions must not depend on the
    host's thread count or results stop being byte-reproducible."""
    with threadpool_limits(limits=1, user_api="blas"):
        yield


@dataclass
class DataBundle:
    """Unified view over LM and classification data sources."""

    kind: str  # "lm" | "cls"
    corpus: CorpusData | None = None
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    n_classes: int = 0
    split_bounds: dict[str, tuple[int, int]] | None = None

    def split_names(self) -> list[str]:
        if self.kind == "lm":
            return list(self.corpus.splits)
        return list(self.split_bounds)

    def split(self, name: str):
        """LM: token id stream; classification: (features, labels)."""
        if self.kind == "lm":
            if name not in self.corpus.splits:
                raise ConfigError(f"unknown split {name!r}; have {self.split_names()}")
            return self.corpus.splits[name]
        if name not in self.split_bounds:
            raise ConfigError(f"unknown split {name!r}; have {self.split_names()}")
        lo, hi = self.split_bounds[name]
        return self.features[lo:hi], self.labels[lo:hi]


def _cls_bounds(n: int, fractions: tuple[float, ...]) -> dict[str, tuple[int, int]]:
    names = ("train", "valid", "test")[: len(fractions)]
    bounds = {}
    acc = 0.0
    start = 0
    for name, f in zip(names, fractions):
        acc += f
        end = min(n, int(np.floor(n * acc + 1e-9)))
        bounds[name] = (start, end)
        start = end
    if bounds["train"][1] == 0:
        raise ConfigError("train split is empty")
    return bounds


def build_dataset(config: ExperimentConfig) -> DataBundle:
    data = config.data
    if data.kind == "text":
        corpus = ingest_text_corpus(data.path, data.split_fractions, data.tokenizer)
        return DataBundle(kind="lm", corpus=corpus)
    if data.kind == "csv":
        x, y = ingest_classification_csv(data.path)
    else:
        x, y = two_moons(data.n, data.noise, SplitSeed(data.seed))
    return DataBundle(kind="cls", features=x, labels=y, n_classes=int(y.max()) + 1,
                      split_bounds=_cls_bounds(y.size, data.split_fractions))


def _dropout_spec(config: ExperimentConfig, site_sizes: dict[str, int]) -> DropoutSpec:
    rates = config.dropout.resolve_rates(site_sizes)
    return DropoutSpec(sites=rates, sharing=config.dropout.sharing)


def build_model(config: ExperimentConfig, bundle: DataBundle,
                params: dict[str, np.ndarray] | None = None):
    init_seed = SplitSeed(config.seed).child(STREAM_INIT)
    if config.model.type == "lstm":
        if bundle.kind != "lm":
            raise ConfigError("lstm model requires a text corpus")
        sizes = {"x": config.model.embedding_dim, "h": config.model.hidden_size}
        model = LstmLm(
            vocab_size=bundle.corpus.vocab.size,
            embedding_dim=config.model.embedding_dim,
            hidden_size=config.model.hidden_size,
            dropout=_dropout_spec(config, sizes),
            params=params,
            init_seed=init_seed,
            tied_embedding=config.model.tied_embedding,
        )
        model.eval_window = config.model.bptt
        return model
    if bundle.kind != "cls":
        raise ConfigError("mlp model requires classification data")
    layer_sizes = [bundle.features.shape[1], *config.model.hidden_sizes, bundle.n_classes]
    sizes = {"in": layer_sizes[0]}
    for k, n in enumerate(layer_sizes[1:-1], start=1):
        sizes[f"h{k}"] = n
    return Mlp(layer_sizes, _dropout_spec(config, sizes), params=params,
               init_seed=init_seed)


def model_from_checkpoint(ckpt: Checkpoint):
    bundle = build_dataset(ckpt.config)
    model = build_model(ckpt.config, bundle, params=ckpt.params)
    return model, bundle


class Sgd:
    def __init__(self, lr: float):
        self.lr = float(lr)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name in sorted(params):
            params[name] -= self.lr * grads[name]


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = float(lr)
        self.b1, self.b2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        for name in sorted(params):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            m_hat = self.m[name] / (1.0 - self.b1**self.t)
            v_hat = self.v[name] / (1.0 - self.b2**self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _build_optimizer(config: ExperimentConfig):
    oc = config.optimizer
    return Sgd(oc.lr) if oc.type == "sgd" else Adam(oc.lr, oc.betas, oc.eps)


def _clip_grads(grads: dict[str, np.ndarray], clip_norm: float | None) -> None:
    if clip_norm is None or clip_norm <= 0.0:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))
    if total > clip_norm:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale


def _draw_batch(config: ExperimentConfig, bundle: DataBundle, seed: SplitSeed):
    rng = seed.generator()
    if bundle.kind == "lm":
        stream = bundle.split("train")
        bptt = config.model.bptt
        if stream.size < bptt + 1:
            raise ConfigError(f"training split has {stream.size} tokens; "
                              f"need > bptt ({bptt})")
        starts = rng.integers(0, stream.size - bptt, size=config.batch_size)
        inputs = np.stack([stream[s : s + bptt] for s in starts])
        targets = np.stack([stream[s + 1 : s + bptt + 1] for s in starts])
        return (inputs, targets), config.batch_size * bptt, bptt
    x, y = bundle.split("train")
    idx = rng.integers(0, y.size, size=config.batch_size)
    return (x[idx], y[idx]), config.batch_size, 1


@dataclass(frozen=True)
class TrainResult:
    checkpoint: Checkpoint
    history: tuple[tuple[int, float], ...]  # (step, train XE of the step's batch)


def train(config: ExperimentConfig) -> TrainResult:
    """Minimise the masked training objective for the configured number of
    steps; fully deterministic given the config seed."""
    with blas_single_thread():
        return _train_inner(config)


def _train_inner(config: ExperimentConfig) -> TrainResult:
    bundle = build_dataset(config)
    model = build_model(config, bundle)
    optimizer = _build_optimizer(config)
    root = SplitSeed(config.seed)
    sizes = model.site_sizes()
    history: list[tuple[int, float]] = []

    for t in range(config.steps):
        batch, n_targets, t_steps = _draw_batch(config, bundle, root.child(STREAM_BATCH, t))
        if config.masks_per == "element":
            masks = sample_mask_batch(model.dropout, sizes, root.child(STREAM_MASKS, t),
                                      batch=config.batch_size, t_steps=t_steps)
        else:
            masks = sample_masks(model.dropout, sizes, root.child(STREAM_MASKS, t),
                                 t_steps=t_steps)
        try:
            # overflow to inf is the divergence signal here, not an error
            with np.errstate(over="ignore", invalid="ignore"):
                breakdown = map_loss(model, batch, masks, config.weight_decay)
                if not np.isfinite(breakdown.total):
                    raise TrainingDivergedError(
                        f"non-finite loss at step {t}: nll={breakdown.nll}, "
                        f"prior={breakdown.prior_term}")
                grads = backward(model, batch, masks, config.weight_decay)
        except DomainError as e:
            raise TrainingDivergedError(f"non-finite loss at step {t}: {e}") from e
        _clip_grads(grads, config.clip_norm)
        optimizer.step(model.params, grads)
        if (t + 1) % config.log_every == 0 or t + 1 == config.steps:
            xe = breakdown.nll / n_targets
            history.append((t + 1, xe))
            log.info("step %d/%d train_xe=%.4f", t + 1, config.steps, xe)

    ckpt = Checkpoint(config=config, step=config.steps,
                      params={k: v.copy() for k, v in model.params.items()},
                      base_seed=config.seed)
    return TrainResult(checkpoint=ckpt, history=tuple(history))
