"""Evaluation-method sweeps, temperature linear search, and the CSV/report
emission used by the service and CLI.

Every row's MC seed is derived from the row's own parameters (not its grid
position), so duplicated grid points produce identical rows and the CSV is
byte-reproducible for a given grid, checkpoint and base seed.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import EvalDefaults
from .dropout import det_multipliers
from .errors import ConfigError, DomainError
from .family import (
    FamilyParams,
    _aggregate_stack,
    _lm_windows,
    evaluate_dataset,
    frequency_bucket_report,
    stochastic_logits,
)
from .numeric import SplitSeed, log_softmax_with_temperature
from .training import DataBundle, STREAM_EVAL, blas_single_thread

__all__ = [
    "SweepGrid",
    "parse_sweep_grid",
    "sweep_csv",
    "SWEEP_HEADER",
    "TemperatureSearchResult",
    "grid_search_temperature",
    "temperature_linear_search",
    "collect_eval_logits",
    "buckets_csv",
    "BUCKET_HEADER",
]

SWEEP_HEADER = "split,alpha,lambda,temperature,samples,xe,perplexity"
BUCKET_HEADER = "split,bucket,targets,alpha,lambda,temperature,samples,xe"


def _fmt(x: float) -> str:
    return repr(float(x))


def _row_seed(base_seed: int, *parts) -> SplitSeed:
    """Seed derived from the row's parameter values via a stable hash."""
    digest = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    a = int.from_bytes(digest[:8], "big", signed=False)
    b = int.from_bytes(digest[8:16], "big", signed=False)
    return SplitSeed(base_seed).child(STREAM_EVAL, a, b)


@dataclass(frozen=True)
class SweepGrid:
    splits: tuple[str, ...]
    alphas: tuple[float | str, ...]  # floats in [0, 1] or the string "det"
    lambdas: tuple[float, ...]
    temperatures: tuple[float, ...]
    samples: int
    max_targets: int | None
    seed: int


def parse_sweep_grid(d: dict, defaults: EvalDefaults) -> SweepGrid:
    d = dict(d)

    def take(key, fallback):
        return d.pop(key) if key in d else fallback

    splits = tuple(str(s) for s in take("splits", ["valid"]))
    alphas_raw = take("alphas", list(defaults.alphas))
    lambdas = tuple(float(v) for v in take("lambdas", list(defaults.lambdas)))
    temperatures = tuple(float(t) for t in take("temperatures", list(defaults.temperatures)))
    samples = take("samples", defaults.samples)
    max_targets = take("max_targets", defaults.max_targets)
    seed = take("seed", 0)
    if d:
        raise ConfigError(f"unknown keys in sweep grid: {sorted(d)}")
    if not splits or not alphas_raw or not lambdas or not temperatures:
        raise ConfigError("sweep grid axes must be non-empty")
    alphas: list[float | str] = []
    for a in alphas_raw:
        if isinstance(a, str):
            if a != "det":
                raise ConfigError(f"alpha must be a number in [0, 1] or 'det', got {a!r}")
            alphas.append("det")
        else:
            a = float(a)
            if not (0.0 <= a <= 1.0):
                raise DomainError(f"alpha must lie in [0, 1], got {a}")
            alphas.append(a)
    if not isinstance(samples, int) or samples < 1:
        raise ConfigError(f"samples must be a positive integer, got {samples!r}")
    if max_targets is not None and (not isinstance(max_targets, int) or max_targets < 1):
        raise ConfigError(f"max_targets must be a positive integer or null, got {max_targets!r}")
    return SweepGrid(splits=splits, alphas=tuple(alphas), lambdas=lambdas,
                     temperatures=temperatures, samples=samples,
                     max_targets=max_targets, seed=int(seed))


def _sweep_rows(grid: SweepGrid):
    for split in grid.splits:
        for alpha in grid.alphas:
            for lam in grid.lambdas:
                for temp in grid.temperatures:
                    yield split, alpha, lam, temp


def sweep_csv(model, bundle: DataBundle, grid: SweepGrid, n_workers: int = 1) -> str:
    """One CSV row per (split, alpha, lambda, temperature) grid point; rows
    with alpha 'det' are the single-pass evaluation and carry samples=0.

    Grid points evaluate independently, so they may run on a thread pool;
    the rows are assembled in grid order regardless of completion order.
    """
    rows = list(_sweep_rows(grid))

    def run(row):
        split, alpha, lam, temp = row
        if alpha == "det":
            fp = FamilyParams.det(lam=lam, temperature=temp)
            n_samples = 0
        else:
            fp = FamilyParams(alpha=alpha, lam=lam, temperature=temp, samples=grid.samples)
            n_samples = grid.samples
        seed = _row_seed(grid.seed, split, "det" if alpha == "det" else float(alpha),
                         float(lam), float(temp), n_samples)
        res = evaluate_dataset(model, bundle.split(split), fp, seed, grid.max_targets)
        alpha_str = "det" if alpha == "det" else _fmt(alpha)
        return (f"{split},{alpha_str},{_fmt(lam)},{_fmt(temp)},{n_samples},"
                f"{_fmt(res.xe)},{_fmt(res.perplexity)}")

    with blas_single_thread():
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                lines = list(pool.map(run, rows))
        else:
            lines = [run(r) for r in rows]
    return "\n".join([SWEEP_HEADER, *lines]) + "\n"


def collect_eval_logits(model, dataset, lam: float, samples: int, seed: SplitSeed,
                        deterministic: bool, max_targets: int | None):
    """Cache pre-temperature logits so a temperature grid re-scores without
    re-running forward passes.

    Returns (logits, targets): deterministic mode gives (N, C) from one
    pass per window/batch, MC mode gives (N, S, C) from S mask draws.
    """
    if model.kind == "lstm":
        window = getattr(model, "eval_window", 32)
        mults = det_multipliers(model.dropout, model.site_sizes(), lam)
        logit_chunks, target_chunks = [], []
        total = 0
        for w, (inp, tgt) in enumerate(_lm_windows(dataset, window)):
            if max_targets is not None and total >= max_targets:
                break
            if deterministic:
                logit_chunks.append(model.forward(inp[None, :], mults)[0])
            else:
                raw = stochastic_logits(model, inp, lam, samples, seed.child(w))
                logit_chunks.append(np.swapaxes(raw, 0, 1))  # (T, S, V)
            target_chunks.append(tgt)
            total += tgt.size
        if not logit_chunks:
            raise DomainError("empty dataset")
        logits = np.concatenate(logit_chunks, axis=0)
        targets = np.concatenate(target_chunks)
    else:
        x, y = dataset
        x = np.asarray(x, dtype=np.float64)
        targets = np.asarray(y, dtype=np.int64)
        if max_targets is not None:
            x, targets = x[:max_targets], targets[:max_targets]
        if targets.size == 0:
            raise DomainError("empty dataset")
        if deterministic:
            mults = det_multipliers(model.dropout, model.site_sizes(), lam)
            logits = model.forward(x, mults)
        else:
            logits = np.stack(
                [stochastic_logits(model, x[i], lam, samples, seed.child(i))
                 for i in range(targets.size)]
            )  # (N, S, C)
    if max_targets is not None:
        logits, targets = logits[:max_targets], targets[:max_targets]
    return logits, targets


def xe_at_temperature(logits: np.ndarray, targets: np.ndarray, temperature: float,
                      alpha: float | None = None) -> float:
    """Mean cross entropy of cached logits rescored at one temperature.

    2-D logits are scored directly; 3-D (N, S, C) logits are power-mean
    aggregated over the sample axis with the given alpha.
    """
    lp = log_softmax_with_temperature(logits, temperature)
    if lp.ndim == 3:
        if alpha is None:
            raise DomainError("alpha is required for sample-axis aggregation")
        _, _, lp = _aggregate_stack(lp, float(alpha))
    return float(np.mean(-lp[np.arange(targets.size), targets]))


@dataclass(frozen=True)
class TemperatureSearchResult:
    t_opt: float
    xe_opt: float
    grid: tuple[float, ...]
    xes: tuple[float, ...]


def grid_search_temperature(logits, targets, grid, alpha: float | None = None
                            ) -> TemperatureSearchResult:
    """argmin over the temperature grid (ties keep the lowest temperature)."""
    grid = tuple(float(t) for t in grid)
    if not grid or any(t <= 0.0 for t in grid):
        raise ConfigError("temperature grid must be non-empty and positive")
    xes = tuple(xe_at_temperature(logits, targets, t, alpha) for t in grid)
    best = int(np.argmin(xes))
    return TemperatureSearchResult(t_opt=grid[best], xe_opt=xes[best], grid=grid, xes=xes)


def temperature_linear_search(
    model,
    dataset,
    grid_spec: tuple[float, float, int],
    *,
    deterministic: bool = True,
    alpha: float = 1.0,
    lam: float = 1.0,
    samples: int = 32,
    seed: SplitSeed,
    max_targets: int | None = 256,
) -> TemperatureSearchResult:
    """Linear search for the softmax temperature minimising XE on a subset.

    Forward passes run once and every grid temperature rescoring reuses the
    cached logits, so xe(t_opt) <= xe(t) for every evaluated t by
    construction (in particular <= xe(1.0) whenever 1.0 is on the grid).
    """
    t_min, t_max, steps = float(grid_spec[0]), float(grid_spec[1]), int(grid_spec[2])
    if not (t_min > 0.0) or t_max < t_min or steps < 1:
        raise ConfigError(f"bad temperature grid spec: {grid_spec!r}")
    if not deterministic and not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    grid = (t_min,) if steps == 1 else tuple(np.linspace(t_min, t_max, steps))
    with blas_single_thread():
        logits, targets = collect_eval_logits(model, dataset, lam, samples, seed,
                                              deterministic, max_targets)
        return grid_search_temperature(logits, targets, grid,
                                       None if deterministic else alpha)


def buckets_csv(
    model,
    bundle: DataBundle,
    thresholds: list[str],
    fps: list[FamilyParams],
    seed: SplitSeed,
    max_targets: int | None,
    splits: tuple[str, ...] = ("train", "valid"),
) -> str:
    """Per-frequency-bucket XE rows for the named splits (LM only)."""
    if bundle.kind != "lm":
        raise ConfigError("frequency buckets require a language-model checkpoint")
    named = {name: bundle.split(name) for name in splits}
    with blas_single_thread():
        rows = frequency_bucket_report(model, named, bundle.corpus.train_freq, fps,
                                       list(thresholds), seed, max_targets)
    lines = [BUCKET_HEADER]
    for r in rows:
        alpha_str = r.alpha if isinstance(r.alpha, str) else _fmt(r.alpha)
        xe_str = "nan" if np.isnan(r.xe) else _fmt(r.xe)
        lines.append(f"{r.split},{r.bucket},{r.target_count},{alpha_str},"
                     f"{_fmt(r.lam)},{_fmt(r.temperature)},{r.samples},{xe_str}")
    return "\n".join(lines) + "\n"
