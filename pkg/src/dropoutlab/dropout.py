"""Row-dropout configuration and mask sampling.

A dropout site is one group of droppable weight rows (equivalently, the
units feeding that weight matrix). Masks are per-row Bernoulli keep/drop
draws; mask sharing controls whether a recurrent model redraws them every
time step or reuses one draw for the whole sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numeric import SplitSeed

SHARED_ACROSS_TIME = "shared_across_time"
PER_STEP = "per_step"

# MaskSet: site_id -> {0.0, 1.0} array. Shapes, with R the site's row count:
#   (R,)        one draw              (sample_masks, shared or single step)
#   (T, R)      one draw per step     (sample_masks, per_step)
#   (B, R)      batched shared        (sample_mask_batch)
#   (B, T, R)   batched per-step      (sample_mask_batch)
MaskSet = dict[str, np.ndarray]


@dataclass(frozen=True)
class DropoutSpec:
    """Per-site dropout rates, mask sharing mode, and the evaluation-time
    rate multiplier."""

    sites: tuple[tuple[str, float], ...]
    sharing: str = SHARED_ACROSS_TIME
    eval_multiplier: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "sites", tuple((str(s), float(p)) for s, p in self.sites)
        )
        for site_id, p in self.sites:
            if not (0.0 <= p <= 1.0):
                raise DomainError(f"dropout rate for site {site_id!r} not in [0, 1]: {p}")
        if self.sharing not in (SHARED_ACROSS_TIME, PER_STEP):
            raise DomainError(f"unknown sharing mode: {self.sharing!r}")
        lam = float(self.eval_multiplier)
        if not (0.0 <= lam <= 1.0):
            raise DomainError(f"eval_multiplier not in [0, 1]: {lam}")
        object.__setattr__(self, "eval_multiplier", lam)

    @property
    def rates(self) -> dict[str, float]:
        return dict(self.sites)

    def scaled(self, rate_scale: float) -> dict[str, float]:
        """Effective per-site rates rate_scale * p."""
        scale = float(rate_scale)
        if not (0.0 <= scale <= 1.0):
            raise DomainError(f"rate_scale not in [0, 1]: {rate_scale}")
        return {site_id: scale * p for site_id, p in self.sites}


def _draw(rng: np.random.Generator, rate: float, shape: tuple[int, ...]) -> np.ndarray:
    # keep with probability 1 - rate; exact at both endpoints
    if rate <= 0.0:
        return np.ones(shape, dtype=np.float64)
    if rate >= 1.0:
        return np.zeros(shape, dtype=np.float64)
    return (rng.random(shape) >= rate).astype(np.float64)


def sample_masks(
    spec: DropoutSpec,
    site_sizes: dict[str, int],
    seed: SplitSeed,
    t_steps: int = 1,
    rate_scale: float = 1.0,
) -> MaskSet:
    """Draw one MaskSet at effective rates rate_scale * p.

    shared_across_time draws one (R,) mask per site and reuses it for all
    t_steps; per_step draws a (t_steps, R) stack of independent masks.
    Sites are consumed in declaration order from a single stream, so the
    draw is reproducible for a given (spec, seed).
    """
    if t_steps < 1:
        raise DomainError(f"t_steps must be >= 1, got {t_steps}")
    rates = spec.scaled(rate_scale)
    rng = seed.generator()
    masks: MaskSet = {}
    for site_id, _ in spec.sites:
        size = site_sizes[site_id]
        if spec.sharing == PER_STEP:
            masks[site_id] = _draw(rng, rates[site_id], (t_steps, size))
        else:
            masks[site_id] = _draw(rng, rates[site_id], (size,))
    return masks


def sample_mask_batch(
    spec: DropoutSpec,
    site_sizes: dict[str, int],
    seed: SplitSeed,
    batch: int,
    t_steps: int = 1,
    rate_scale: float = 1.0,
) -> MaskSet:
    """Draw `batch` independent MaskSets in one vectorised call.

    Equivalent in distribution to `batch` calls of sample_masks with
    distinct child seeds; shapes gain a leading batch axis.
    """
    if batch < 1:
        raise DomainError(f"batch must be >= 1, got {batch}")
    if t_steps < 1:
        raise DomainError(f"t_steps must be >= 1, got {t_steps}")
    rates = spec.scaled(rate_scale)
    rng = seed.generator()
    masks: MaskSet = {}
    for site_id, _ in spec.sites:
        size = site_sizes[site_id]
        if spec.sharing == PER_STEP:
            masks[site_id] = _draw(rng, rates[site_id], (batch, t_steps, size))
        else:
            masks[site_id] = _draw(rng, rates[site_id], (batch, size))
    return masks


def det_multipliers(
    spec: DropoutSpec, site_sizes: dict[str, int], rate_scale: float | None = None
) -> MaskSet:
    """Deterministic per-site row scales 1 - rate_scale * p.

    rate_scale defaults to the DropoutSpec's eval_multiplier; rate_scale 0
    leaves every row at scale 1 (the raw-weights pass).
    """
    scale = spec.eval_multiplier if rate_scale is None else rate_scale
    rates = spec.scaled(scale)
    return {
        site_id: np.full(site_sizes[site_id], 1.0 - rates[site_id], dtype=np.float64)
        for site_id, _ in spec.sites
    }
