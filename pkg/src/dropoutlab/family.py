"""The extended dropout model family at evaluation time.

A family member is (alpha, lambda, temperature): predictions average
per-mask class probabilities with the power mean of exponent alpha
(alpha=1 arithmetic, alpha->0 renormalised geometric), masks are drawn at
the scaled rate lambda * p, and logits are divided by the temperature
inside every forward pass before its softmax. lambda=0 collapses to the
single deterministic pass over unscaled weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dropout import det_multipliers, sample_masks
from .errors import DomainError
from .numeric import SplitSeed, log_mean_exp, log_softmax_with_temperature, log_sum_exp

__all__ = [
    "ALPHA_SWITCH",
    "FamilyParams",
    "AggregateResult",
    "power_mean_aggregate",
    "deterministic_predict",
    "mc_predict",
    "per_target_nll",
    "evaluate_dataset",
    "EvalResult",
    "frequency_bucket_report",
    "BucketRow",
    "parse_threshold",
]

# Below this exponent the closed-form geometric path replaces
# (1/alpha) * logmeanexp(alpha * lp), which loses precision as alpha -> 0.
ALPHA_SWITCH = 1e-4


@dataclass(frozen=True)
class FamilyParams:
    """A point in the extended family plus the MC sample budget."""

    alpha: float
    lam: float
    temperature: float = 1.0
    samples: int = 200
    deterministic: bool = False

    def __post_init__(self):
        if not self.deterministic:
            if not (0.0 <= self.alpha <= 1.0):
                raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
            if self.samples < 1:
                raise DomainError(f"samples must be >= 1, got {self.samples}")
        if not (0.0 <= self.lam <= 1.0):
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")
        if not (self.temperature > 0.0):
            raise DomainError(f"temperature must be > 0, got {self.temperature}")

    @classmethod
    def det(cls, lam: float = 1.0, temperature: float = 1.0) -> "FamilyParams":
        """The deterministic member: one pass, rows scaled by 1 - lam * p."""
        return cls(alpha=1.0, lam=lam, temperature=temperature, samples=1, deterministic=True)


@dataclass(frozen=True)
class AggregateResult:
    """Per-class log power means, their log normaliser, and the normalised
    log distribution."""

    unnormalized_log: np.ndarray
    log_z: float
    normalized_log: np.ndarray


def check_prediction_matrix(log_probs: np.ndarray) -> np.ndarray:
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 1:
        raise DomainError(f"prediction matrix must be (S>=1, C>=1), got {lp.shape}")
    if np.isnan(lp).any() or (lp > 0.0).any():
        raise DomainError("prediction matrix entries must be log probabilities <= 0")
    return lp


def _aggregate_stack(log_probs: np.ndarray, alpha: float):
    """Power-mean aggregation over axis -2 of (..., S, C) log probabilities.

    Returns (unnormalized_log, log_z, normalized_log) with the sample axis
    reduced; reductions run in fixed index order.
    """
    if alpha < ALPHA_SWITCH:
        unnorm = np.mean(log_probs, axis=-2)
    else:
        unnorm = log_mean_exp(alpha * log_probs, axis=-2) / alpha
    log_z = log_sum_exp(unnorm, axis=-1) if unnorm.ndim > 1 else log_sum_exp(unnorm)
    normalized = unnorm - np.expand_dims(log_z, -1) if unnorm.ndim > 1 else unnorm - log_z
    return unnorm, log_z, normalized


def power_mean_aggregate(log_probs: np.ndarray, alpha: float) -> AggregateResult:
    """Aggregate an S x C matrix of per-sample log class probabilities.

    ln M_alpha(c) = (1/alpha) (ln sum_s exp(alpha lp[s,c]) - ln S) for
    alpha >= ALPHA_SWITCH, the mean of lp[:,c] below it. log_z is the
    log-sum over classes (<= 0 for alpha <= 1, 0 at alpha = 1 up to
    rounding); normalising subtracts it.

    Identical rows short-circuit: the power mean of S copies of one
    distribution is that distribution with Z = 1 for every alpha, and
    returning it verbatim keeps the lambda=0 collapse onto the
    deterministic pass bitwise exact.
    """
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha} (the shared lower "
                          f"bound fails outside it)")
    lp = check_prediction_matrix(log_probs)
    if lp.shape[0] == 1 or (lp == lp[0]).all():
        row = lp[0].copy()
        return AggregateResult(unnormalized_log=row, log_z=0.0, normalized_log=row.copy())
    unnorm, log_z, normalized = _aggregate_stack(lp, float(alpha))
    return AggregateResult(
        unnormalized_log=unnorm, log_z=float(log_z), normalized_log=normalized
    )


def stochastic_logits(model, inputs, lam: float, samples: int, seed: SplitSeed) -> np.ndarray:
    """Raw logits of S forward passes at rate lambda * p, rows in
    sample-index order.

    MLP: inputs (D,) -> (S, C). LSTM: inputs (T,) tokens -> (S, T, V).
    Sample s uses the mask draw of seed.child(s), so the matrix does not
    depend on batching or scheduling.
    """
    sizes = model.site_sizes()
    t_steps = len(np.atleast_1d(np.asarray(inputs))) if model.kind == "lstm" else 1
    drawn = [
        sample_masks(model.dropout, sizes, seed.child(s), t_steps=t_steps,
                     rate_scale=lam)
        for s in range(samples)
    ]
    stacked = {site: np.stack([d[site] for d in drawn]) for site, _ in model.dropout.sites}
    if model.kind == "lstm":
        tokens = np.tile(np.asarray(inputs, dtype=np.int64), (samples, 1))
        return model.forward(tokens, stacked)  # (S, T, V)
    x = np.tile(np.asarray(inputs, dtype=np.float64)[None, :], (samples, 1))
    return model.forward(x, stacked)  # (S, C)


def _stochastic_log_probs(model, inputs, fp: FamilyParams, seed: SplitSeed) -> np.ndarray:
    logits = stochastic_logits(model, inputs, fp.lam, fp.samples, seed)
    return log_softmax_with_temperature(logits, fp.temperature)


def deterministic_predict(model, inputs, temperature: float = 1.0,
                          rate_scale: float | None = None) -> np.ndarray:
    """Single-pass prediction with droppable rows scaled by 1 - lambda * p.

    rate_scale defaults to the model DropoutSpec's eval_multiplier;
    rate_scale 0 evaluates the raw weights. Returns the log distribution
    over classes (for token sequences: over the next token after the last
    step).
    """
    mults = det_multipliers(model.dropout, model.site_sizes(), rate_scale)
    if model.kind == "lstm":
        tokens = np.asarray(inputs, dtype=np.int64)[None, :]
        logits = model.forward(tokens, mults)[0, -1]
    else:
        logits = model.forward(np.asarray(inputs, dtype=np.float64)[None, :], mults)[0]
    return log_softmax_with_temperature(logits, temperature)


def mc_predict(model, inputs, fp: FamilyParams, seed: SplitSeed):
    """Monte Carlo prediction: S mask draws at rate lambda * p, temperature
    inside each pass, power-mean aggregation over the sample axis.

    Returns (AggregateResult, prediction matrix). For token sequences the
    prediction is for the next token after the last step.
    """
    if fp.deterministic:
        row = deterministic_predict(model, inputs, fp.temperature, fp.lam)[None, :]
        return power_mean_aggregate(row, 1.0), row
    if all(r == 0.0 for r in model.dropout.scaled(fp.lam).values()):
        # Every mask is all-ones, so each sample IS the unscaled single pass;
        # short-circuiting keeps the collapse bitwise instead of trusting
        # BLAS to round identically across batch shapes.
        row = deterministic_predict(model, inputs, fp.temperature, 0.0)
        matrix = np.tile(row, (fp.samples, 1))
        return power_mean_aggregate(matrix, fp.alpha), matrix
    matrix = _stochastic_log_probs(model, inputs, fp, seed)
    if model.kind == "lstm":
        matrix = matrix[:, -1, :]
    return power_mean_aggregate(matrix, fp.alpha), matrix


def _classification_nll(model, x, y, fp, seed):
    if fp.deterministic:
        mults = det_multipliers(model.dropout, model.site_sizes(), fp.lam)
        lp = log_softmax_with_temperature(model.forward(x, mults), fp.temperature)
        return -lp[np.arange(y.size), y]
    nll = np.empty(y.size)
    for i in range(y.size):
        agg, _ = mc_predict(model, x[i], fp, seed.child(i))
        nll[i] = -agg.normalized_log[y[i]]
    return nll


def _lm_windows(tokens: np.ndarray, window: int):
    """Contiguous (inputs, targets) windows covering every position once."""
    tokens = np.asarray(tokens, dtype=np.int64)
    out = []
    start = 0
    while start + 1 < tokens.size:
        end = min(start + window, tokens.size - 1)
        out.append((tokens[start:end], tokens[start + 1 : end + 1]))
        start = end
    return out

def _lm_nll(model, tokens, fp, seed, window: int, max_targets: int | None):
    windows = _lm_windows(tokens, window)
    if fp.deterministic:
        mults = det_multipliers(model.dropout, model.site_sizes(), fp.lam)
    chunks = []
    total = 0
    for w, (inp, tgt) in enumerate(windows):
        if max_targets is not None and total >= max_targets:
            break
        if fp.deterministic:
            logits = model.forward(inp[None, :], mults)[0]
            lp = log_softmax_with_temperature(logits, fp.temperature)
            chunks.append(-lp[np.arange(tgt.size), tgt])
        else:
            matrix = _stochastic_log_probs(model, inp, fp, seed.child(w))  # (S, T, V)
            _, _, normalized = _aggregate_stack(
                np.swapaxes(matrix, 0, 1), fp.alpha
            )  # (T, V)
            chunks.append(-normalized[np.arange(tgt.size), tgt])
        total += tgt.size
    nll = np.concatenate(chunks) if chunks else np.empty(0)
    return nll[:max_targets] if max_targets is not None else nll


def per_target_nll(model, dataset, fp: FamilyParams, seed: SplitSeed,
                   max_targets: int | None = None) -> np.ndarray:
    """Per-target negative log-likelihood under one family member.

    Classification datasets are (X, y) pairs; language-model datasets are
    token id streams, evaluated in contiguous windows (cold state per
    window) with one prediction per position. max_targets truncates to a
    deterministic prefix.
    """
    if model.kind == "lstm":
        window = getattr(model, "eval_window", 32)
        return _lm_nll(model, dataset, fp, seed, window, max_targets)
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if max_targets is not None:
        x, y = x[:max_targets], y[:max_targets]
    if y.size == 0:
        raise DomainError("empty dataset")
    return _classification_nll(model, x, y, fp, seed)


@dataclass(frozen=True)
class EvalResult:
    xe: float
    perplexity: float
    n_targets: int


def evaluate_dataset(model, dataset, fp: FamilyParams, seed: SplitSeed,
                     max_targets: int | None = None) -> EvalResult:
    """Mean cross entropy over targets and its exp (perplexity)."""
    nll = per_target_nll(model, dataset, fp, seed, max_targets)
    if nll.size == 0:
        raise DomainError("empty dataset")
    xe = float(np.mean(nll))
    return EvalResult(xe=xe, perplexity=float(np.exp(xe)), n_targets=int(nll.size))


def parse_threshold(spec: str):
    """Frequency bucket predicate: '25000<' or '>25000' means freq > 25000,
    '<500' means freq < 500."""
    s = str(spec).strip()
    if s.startswith(">") and s[1:].strip().isdigit():
        return (">", int(s[1:]))
    if s.endswith("<") and s[:-1].strip().isdigit():
        return (">", int(s[:-1]))
    if s.startswith("<") and s[1:].strip().isdigit():
        return ("<", int(s[1:]))
    raise DomainError(f"cannot parse frequency threshold {spec!r}")


@dataclass(frozen=True)
class BucketRow:
    split: str
    bucket: str
    target_count: int
    alpha: float | str
    lam: float
    temperature: float
    samples: int
    xe: float


def frequency_bucket_report(
    model,
    splits: dict[str, np.ndarray],
    train_freq: np.ndarray,
    fps: list[FamilyParams],
    thresholds: list[str],
    seed: SplitSeed,
    max_targets: int | None = None,
) -> list[BucketRow]:
    """Cross entropy per training-frequency bucket, per split and family
    member. Buckets come from one-sided thresholds and may overlap; a
    target lands in every bucket whose predicate its training frequency
    satisfies.
    """
    if not thresholds:
        raise DomainError("threshold list must be non-empty")
    preds = [(str(t), parse_threshold(t)) for t in thresholds]
    rows: list[BucketRow] = []
    for split_idx, (split_name, tokens) in enumerate(splits.items()):
        window = getattr(model, "eval_window", 32)
        windows = _lm_windows(tokens, window)
        targets = np.concatenate([t for _, t in windows]) if windows else np.empty(0, np.int64)
        if max_targets is not None:
            targets = targets[:max_targets]
        freqs = train_freq[targets]
        for fp_idx, fp in enumerate(fps):
            nll = per_target_nll(model, tokens, fp, seed.child(split_idx, fp_idx),
                                 max_targets)
            for label, (op, value) in preds:
                in_bucket = freqs > value if op == ">" else freqs < value
                count = int(np.sum(in_bucket))
                xe = float(np.mean(nll[in_bucket])) if count else float("nan")
                rows.append(BucketRow(
                    split=split_name, bucket=label, target_count=count,
                    alpha="det" if fp.deterministic else fp.alpha,
                    lam=fp.lam, temperature=fp.temperature,
                    samples=0 if fp.deterministic else fp.samples, xe=xe,
                ))
    return rows
