"""Experiment configuration: a strict JSON schema (unknown keys rejected)
covering architecture, dropout, optimiser, data source and the default
evaluation grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dropout import PER_STEP, SHARED_ACROSS_TIME
from .errors import ConfigError

__all__ = [
    "ModelConfig",
    "DropoutConfig",
    "OptimizerConfig",
    "DataConfig",
    "EvalDefaults",
    "ExperimentConfig",
]

_REQUIRED = object()


def _pop(d: dict, key: str, ctx: str, default=_REQUIRED):
    if key in d:
        return d.pop(key)
    if default is _REQUIRED:
        raise ConfigError(f"missing key {key!r} in {ctx}")
    return default


def _done(d: dict, ctx: str):
    if d:
        raise ConfigError(f"unknown keys in {ctx}: {sorted(d)}")


def _positive_int(v, name: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    return v


def _nonneg_number(v, name: str) -> float:
    if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
        raise ConfigError(f"{name} must be a non-negative number, got {v!r}")
    return float(v)


@dataclass(frozen=True)
class ModelConfig:
    type: str
    hidden_sizes: tuple[int, ...] = ()
    embedding_dim: int = 32
    hidden_size: int = 64
    bptt: int = 32
    tied_embedding: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        kind = _pop(d, "type", "model")
        if kind == "mlp":
            hidden = _pop(d, "hidden_sizes", "model", [16])
            if not isinstance(hidden, list) or not all(
                isinstance(h, int) and h > 0 for h in hidden
            ):
                raise ConfigError(f"model.hidden_sizes must be positive ints, got {hidden!r}")
            _done(d, "model")
            return cls(type="mlp", hidden_sizes=tuple(hidden))
        if kind == "lstm":
            cfg = cls(
                type="lstm",
                embedding_dim=_positive_int(_pop(d, "embedding_dim", "model", 32),
                                            "model.embedding_dim"),
                hidden_size=_positive_int(_pop(d, "hidden_size", "model", 64),
                                          "model.hidden_size"),
                bptt=_positive_int(_pop(d, "bptt", "model", 32), "model.bptt"),
                tied_embedding=bool(_pop(d, "tied_embedding", "model", False)),
            )
            _done(d, "model")
            return cfg
        raise ConfigError(f"model.type must be 'mlp' or 'lstm', got {kind!r}")

    def to_dict(self) -> dict:
        if self.type == "mlp":
            return {"type": "mlp", "hidden_sizes": list(self.hidden_sizes)}
        return {
            "type": "lstm",
            "embedding_dim": self.embedding_dim,
            "hidden_size": self.hidden_size,
            "bptt": self.bptt,
            "tied_embedding": self.tied_embedding,
        }


@dataclass(frozen=True)
class DropoutConfig:
    rate: float | None = None
    site_rates: tuple[tuple[str, float], ...] | None = None
    sharing: str = SHARED_ACROSS_TIME

    @classmethod
    def from_dict(cls, d: dict) -> "DropoutConfig":
        d = dict(d)
        rate = _pop(d, "rate", "dropout", None)
        site_rates = _pop(d, "site_rates", "dropout", None)
        sharing = _pop(d, "sharing", "dropout", SHARED_ACROSS_TIME)
        _done(d, "dropout")
        if (rate is None) == (site_rates is None):
            raise ConfigError("dropout needs exactly one of 'rate' or 'site_rates'")
        if sharing not in (SHARED_ACROSS_TIME, PER_STEP):
            raise ConfigError(f"dropout.sharing must be '{SHARED_ACROSS_TIME}' or "
                              f"'{PER_STEP}', got {sharing!r}")
        if rate is not None:
            rate = float(rate)
            if not (0.0 <= rate <= 1.0):
                raise ConfigError(f"dropout.rate must lie in [0, 1], got {rate}")
            return cls(rate=rate, sharing=sharing)
        if not isinstance(site_rates, dict):
            raise ConfigError("dropout.site_rates must be an object of site -> rate")
        pairs = []
        for site, p in sorted(site_rates.items()):
            p = float(p)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"dropout rate for {site!r} must lie in [0, 1], got {p}")
            pairs.append((str(site), p))
        return cls(site_rates=tuple(pairs), sharing=sharing)

    def resolve_rates(self, site_sizes: dict[str, int]) -> tuple[tuple[str, float], ...]:
        if self.rate is not None:
            return tuple((site, self.rate) for site in site_sizes)
        given = dict(self.site_rates or ())
        unknown = set(given) - set(site_sizes)
        if unknown:
            raise ConfigError(f"dropout.site_rates names unknown sites: {sorted(unknown)}")
        return tuple((site, given.get(site, 0.0)) for site in site_sizes)

    def to_dict(self) -> dict:
        out: dict = {"sharing": self.sharing}
        if self.rate is not None:
            out["rate"] = self.rate
        else:
            out["site_rates"] = {s: p for s, p in (self.site_rates or ())}
        return out


@dataclass(frozen=True)
class OptimizerConfig:
    type: str
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict | None, model_type: str) -> "OptimizerConfig":
        if d is None:
            # spec'd desk-scale defaults per architecture
            return (cls(type="adam", lr=2e-3) if model_type == "lstm"
                    else cls(type="sgd", lr=0.1))
        d = dict(d)
        kind = _pop(d, "type", "optimizer")
        if kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer.type must be 'sgd' or 'adam', got {kind!r}")
        lr = _nonneg_number(_pop(d, "lr", "optimizer"), "optimizer.lr")
        if kind == "adam":
            betas = _pop(d, "betas", "optimizer", [0.9, 0.999])
            eps = _nonneg_number(_pop(d, "eps", "optimizer", 1e-8), "optimizer.eps")
            _done(d, "optimizer")
            if (not isinstance(betas, list) or len(betas) != 2
                    or not all(0.0 <= float(b) < 1.0 for b in betas)):
                raise ConfigError(f"optimizer.betas must be two numbers in [0, 1), got {betas!r}")
            return cls(type="adam", lr=lr, betas=(float(betas[0]), float(betas[1])), eps=eps)
        _done(d, "optimizer")
        return cls(type="sgd", lr=lr)

    def to_dict(self) -> dict:
        if self.type == "sgd":
            return {"type": "sgd", "lr": self.lr}
        return {"type": "adam", "lr": self.lr, "betas": list(self.betas), "eps": self.eps}


@dataclass(frozen=True)
class DataConfig:
    kind: str
    path: str | None = None
    tokenizer: str = "word"
    split_fractions: tuple[float, ...] = (0.8, 0.1, 0.1)
    n: int = 1200
    noise: float = 0.15
    seed: int = 7

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        kind = _pop(d, "kind", "data")
        fractions = _pop(d, "split_fractions", "data", [0.8, 0.1, 0.1])
        if not isinstance(fractions, list) or not fractions:
            raise ConfigError(f"data.split_fractions must be a non-empty list, got {fractions!r}")
        fractions = tuple(float(f) for f in fractions)
        if kind == "text":
            path = _pop(d, "path", "data")
            tokenizer = _pop(d, "tokenizer", "data", "word")
            _done(d, "data")
            if tokenizer not in ("word", "char"):
                raise ConfigError(f"data.tokenizer must be 'word' or 'char', got {tokenizer!r}")
            return cls(kind="text", path=str(path), tokenizer=tokenizer,
                       split_fractions=fractions)
        if kind == "csv":
            path = _pop(d, "path", "data")
            _done(d, "data")
            return cls(kind="csv", path=str(path), split_fractions=fractions)
        if kind == "two_moons":
            cfg = cls(
                kind="two_moons",
                n=_positive_int(_pop(d, "n", "data", 1200), "data.n"),
                noise=_nonneg_number(_pop(d, "noise", "data", 0.15), "data.noise"),
                seed=int(_pop(d, "seed", "data", 7)),
                split_fractions=fractions,
            )
            _done(d, "data")
            return cfg
        raise ConfigError(f"data.kind must be 'text', 'csv' or 'two_moons', got {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "text":
            return {"kind": "text", "path": self.path, "tokenizer": self.tokenizer,
                    "split_fractions": list(self.split_fractions)}
        if self.kind == "csv":
            return {"kind": "csv", "path": self.path,
                    "split_fractions": list(self.split_fractions)}
        return {"kind": "two_moons", "n": self.n, "noise": self.noise, "seed": self.seed,
                "split_fractions": list(self.split_fractions)}


@dataclass(frozen=True)
class EvalDefaults:
    alphas: tuple[float, ...] = (0.0, 0.5, 1.0)
    lambdas: tuple[float, ...] = (0.0, 0.5, 1.0)
    temperatures: tuple[float, ...] = (1.0,)
    samples: int = 200
    max_targets: int | None = 3000
    bucket_thresholds: tuple[str, ...] = ("25000<", "5000<", "500<", "<500",
                                          "<100", "<20")

    @classmethod
    def from_dict(cls, d: dict | None) -> "EvalDefaults":
        if d is None:
            return cls()
        d = dict(d)
        base = cls()
        alphas = tuple(float(a) for a in _pop(d, "alphas", "eval", list(base.alphas)))
        lambdas = tuple(float(v) for v in _pop(d, "lambdas", "eval", list(base.lambdas)))
        temps = tuple(float(t) for t in _pop(d, "temperatures", "eval",
                                             list(base.temperatures)))
        samples = _positive_int(_pop(d, "samples", "eval", base.samples), "eval.samples")
        max_targets = _pop(d, "max_targets", "eval", base.max_targets)
        if max_targets is not None:
            max_targets = _positive_int(max_targets, "eval.max_targets")
        thresholds = tuple(str(t) for t in _pop(d, "bucket_thresholds", "eval",
                                                list(base.bucket_thresholds)))
        _done(d, "eval")
        return cls(alphas=alphas, lambdas=lambdas, temperatures=temps, samples=samples,
                   max_targets=max_targets, bucket_thresholds=thresholds)

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "lambdas": list(self.lambdas),
            "temperatures": list(self.temperatures),
            "samples": self.samples,
            "max_targets": self.max_targets,
            "bucket_thresholds": list(self.bucket_thresholds),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    dropout: DropoutConfig
    optimizer: OptimizerConfig
    data: DataConfig
    eval: EvalDefaults = field(default_factory=EvalDefaults)
    weight_decay: float = 0.0
    batch_size: int = 16
    steps: int = 100
    seed: int = 0
    log_every: int = 100
    masks_per: str = "element"
    clip_norm: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        model = ModelConfig.from_dict(_pop(d, "model", "config"))
        dropout = DropoutConfig.from_dict(_pop(d, "dropout", "config"))
        optimizer = OptimizerConfig.from_dict(_pop(d, "optimizer", "config", None),
                                              model.type)
        data = DataConfig.from_dict(_pop(d, "data", "config"))
        eval_defaults = EvalDefaults.from_dict(_pop(d, "eval", "config", None))
        masks_per = _pop(d, "masks_per", "config", "element")
        if masks_per not in ("element", "batch"):
            raise ConfigError(f"masks_per must be 'element' or 'batch', got {masks_per!r}")
        clip = _pop(d, "clip_norm", "config",
                    5.0 if model.type == "lstm" else None)
        if clip is not None:
            clip = _nonneg_number(clip, "clip_norm")
        steps = _pop(d, "steps", "config", 100)
        if not isinstance(steps, int) or isinstance(steps, bool) or steps < 0:
            raise ConfigError(f"steps must be a non-negative integer, got {steps!r}")
        cfg = cls(
            model=model,
            dropout=dropout,
            optimizer=optimizer,
            data=data,
            eval=eval_defaults,
            weight_decay=_nonneg_number(_pop(d, "weight_decay", "config", 0.0),
                                        "weight_decay"),
            batch_size=_positive_int(_pop(d, "batch_size", "config", 16), "batch_size"),
            steps=steps,
            seed=int(_pop(d, "seed", "config", 0)),
            log_every=_positive_int(_pop(d, "log_every", "config", 100), "log_every"),
            masks_per=masks_per,
            clip_norm=clip,
        )
        _done(d, "config")
        if model.type == "lstm" and data.kind != "text":
            raise ConfigError("lstm models require data.kind == 'text'")
        if model.type == "mlp" and data.kind == "text":
            raise ConfigError("mlp models require csv or two_moons data")
        return cfg

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {p}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "dropout": self.dropout.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "data": self.data.to_dict(),
            "eval": self.eval.to_dict(),
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "seed": self.seed,
            "log_every": self.log_every,
            "masks_per": self.masks_per,
            "clip_norm": self.clip_norm,
        }
