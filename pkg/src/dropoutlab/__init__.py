"""dropoutlab: post-training model selection over the extended dropout
family (power-mean exponent, evaluation-time rate multiplier, softmax
temperature) with lower-bound tightness instrumentation."""

__version__ = "0.1.0"

from .bounds import (
    BoundReport,
    GapBounds,
    KlFactorizationResult,
    bound_report,
    enumerate_masks_exact,
    exact_jensen_gap,
    h_function,
    jensen_gap_approx,
    kl_factorization_check,
    liao_gap_bounds,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .dropout import DropoutSpec, sample_masks
from .errors import (
    ConfigError,
    ContractViolationError,
    DomainError,
    DropoutLabError,
    InputError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
)
from .family import (
    AggregateResult,
    EvalResult,
    FamilyParams,
    deterministic_predict,
    evaluate_dataset,
    frequency_bucket_report,
    mc_predict,
    per_target_nll,
    power_mean_aggregate,
)
from .lstm import LstmLm
from .mlp import Mlp
from .models import LossBreakdown, backward, map_loss
from .numeric import (
    SplitSeed,
    finite_difference_check,
    log_mean_exp,
    log_softmax_with_temperature,
    log_sum_exp,
    softmax_with_temperature,
)
from .sweeps import temperature_linear_search
from .training import TrainResult, build_dataset, build_model, model_from_checkpoint, train

__all__ = [
    "__version__",
    "AggregateResult",
    "BoundReport",
    "Checkpoint",
    "ConfigError",
    "ContractViolationError",
    "DomainError",
    "DropoutLabError",
    "DropoutSpec",
    "EvalResult",
    "ExperimentConfig",
    "FamilyParams",
    "GapBounds",
    "InputError",
    "KlFactorizationResult",
    "LossBreakdown",
    "LstmLm",
    "Mlp",
    "ParseError",
    "ShapeError",
    "SplitSeed",
    "TrainResult",
    "TrainingDivergedError",
    "backward",
    "bound_report",
    "build_dataset",
    "build_model",
    "deterministic_predict",
    "enumerate_masks_exact",
    "evaluate_dataset",
    "exact_jensen_gap",
    "finite_difference_check",
    "frequency_bucket_report",
    "h_function",
    "jensen_gap_approx",
    "kl_factorization_check",
    "liao_gap_bounds",
    "load_checkpoint",
    "log_mean_exp",
    "log_softmax_with_temperature",
    "log_sum_exp",
    "map_loss",
    "mc_predict",
    "model_from_checkpoint",
    "per_target_nll",
    "power_mean_aggregate",
    "sample_masks",
    "save_checkpoint",
    "softmax_with_temperature",
    "temperature_linear_search",
    "train",
]
