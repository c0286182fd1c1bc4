"""Request/response models for the HTTP API.

Checkpoints travel as their canonical JSON text so the server stays
stateless and the bytes written by clients are exactly the bytes the
training run produced.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class HealthResponse(_Strict):
    status: str
    version: str


class TrainRequest(_Strict):
    config: dict


class TrainResponse(_Strict):
    checkpoint_json: str
    steps: int
    history: list[tuple[int, float]]
    final_train_xe: float | None


class EvalRequest(_Strict):
    checkpoint_json: str
    split: str = "valid"
    alpha: float | Literal["det"] = "det"
    lam: float = Field(default=1.0, alias="lambda")
    temperature: float = 1.0
    samples: int | None = None  # None: the checkpoint config's eval default
    seed: int = 0
    max_targets: int | None = None  # None: the checkpoint config's eval default


class EvalResponse(_Strict):
    xe: float
    perplexity: float
    n_targets: int


class SweepRequest(_Strict):
    checkpoint_json: str
    grid: dict
    workers: int = 1


class SweepResponse(_Strict):
    csv: str
    n_rows: int


class BoundsRequest(_Strict):
    checkpoint_json: str
    split: str = "train"
    alpha: float = 0.0
    lam: float = Field(default=1.0, alias="lambda")
    samples: int = 200
    seed: int = 0
    weight_decay: float | None = None  # None: the training config's value
    max_targets: int | None = None


class BoundsResponse(_Strict):
    data_term_mc: float
    power_mean_term: float
    log_z_term: float
    jensen_gap: float
    prior_term: float
    n_samples: int
    n_targets: int
    alpha: float
    lam: float = Field(alias="lambda")
    split: str


class TuneTempRequest(_Strict):
    checkpoint_json: str
    split: str = "valid"
    t_min: float = 0.5
    t_max: float = 4.0
    steps: int = 71
    mode: Literal["det", "mc"] = "det"
    alpha: float = 1.0
    lam: float = Field(default=1.0, alias="lambda")
    samples: int = 32
    seed: int = 0
    max_targets: int | None = 256


class TuneTempResponse(_Strict):
    t_opt: float
    xe: float
    grid: list[float]
    xes: list[float]


class BucketMethod(_Strict):
    alpha: float | Literal["det"] = "det"
    lam: float = Field(default=1.0, alias="lambda")
    temperature: float = 1.0
    samples: int = 32


class BucketsRequest(_Strict):
    checkpoint_json: str
    thresholds: list[str] | None = None  # None: the config's bucket thresholds
    methods: list[BucketMethod] | None = None  # None: DET, x0.8 AMC, AMC
    splits: list[str] = ["train", "valid"]
    seed: int = 0
    max_targets: int | None = None


class BucketsResponse(_Strict):
    csv: str


class SelfTestCheckResult(_Strict):
    name: str
    passed: bool
    detail: str


class SelfTestResponse(_Strict):
    passed: bool
    checks: list[SelfTestCheckResult]
