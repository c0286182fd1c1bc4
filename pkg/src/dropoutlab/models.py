"""Shared model machinery: the training loss split into its data and prior
parts, gradient dispatch, and parameter-vector flattening for checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dropout import MaskSet, PER_STEP
from .errors import DomainError
from .numeric import log_softmax_with_temperature

__all__ = [
    "LossBreakdown",
    "map_loss",
    "backward",
    "flatten_params",
    "unflatten_params",
    "make_loss_fn",
]


@dataclass(frozen=True)
class LossBreakdown:
    """Negative log-likelihood plus the weight-decay stand-in for the prior."""

    nll: float
    prior_term: float

    @property
    def total(self) -> float:
        return self.nll + self.prior_term


def cross_entropy_terms(logits: np.ndarray, targets: np.ndarray):
    """Summed -ln softmax(logits)[target] and its gradient w.r.t. logits."""
    flat = logits.reshape(-1, logits.shape[-1])
    y = targets.reshape(-1).astype(np.int64)
    log_probs = log_softmax_with_temperature(flat, 1.0)
    nll = float(-np.sum(log_probs[np.arange(y.size), y]))
    dlogits = np.exp(log_probs)
    dlogits[np.arange(y.size), y] -= 1.0
    return nll, dlogits.reshape(logits.shape)


def prior_terms(params: dict[str, np.ndarray], weight_decay: float, want_grads: bool):
    """0.5 * wd * ||theta||^2 and its gradient wd * theta."""
    wd = float(weight_decay)
    if wd < 0.0:
        raise DomainError(f"weight_decay must be >= 0, got {weight_decay}")
    prior = 0.5 * wd * sum(float(np.sum(v * v)) for v in params.values())
    grads = {k: wd * v for k, v in params.items()} if want_grads else None
    return prior, grads


def normalize_masks(model, masks: MaskSet) -> MaskSet:
    """Adapt a single draw from sample_masks to the batched multiplier
    convention (ndim 1 broadcast, ndim 2 = (B, R), ndim 3 = (B, T, R)).

    A per-step single draw is (T, R); it gains a leading batch axis of 1 so
    2-D arrays always mean per-element shared masks.
    """
    out: MaskSet = {}
    for site_id, m in masks.items():
        m = np.asarray(m, dtype=np.float64)
        if model.kind == "lstm" and model.dropout.sharing == PER_STEP and m.ndim == 2:
            m = m[None, :, :]
        out[site_id] = m
    return out


def map_loss(model, batch, masks: MaskSet, weight_decay: float) -> LossBreakdown:
    """Training objective on one batch under fixed masks: summed negative
    log-likelihood plus the weight-decay prior term."""
    breakdown, _ = model.loss_and_grads(
        batch, normalize_masks(model, masks), weight_decay, want_grads=False
    )
    return breakdown

def backward(model, batch, masks: MaskSet, weight_decay: float) -> dict[str, np.ndarray]:
    """Gradient of map_loss' total w.r.t. every named parameter."""
    _, grads = model.loss_and_grads(
        batch, normalize_masks(model, masks), weight_decay, want_grads=True
    )
    return grads


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate parameters into one vector, keys in sorted order."""
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten_params(template: dict[str, np.ndarray], theta: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    i = 0
    for k in sorted(template):
        n = template[k].size
        out[k] = theta[i : i + n].reshape(template[k].shape).copy()
        i += n
    if i != theta.size:
        raise DomainError(f"flat vector length {theta.size} != parameter count {i}")
    return out


def make_loss_fn(model, batch, masks: MaskSet, weight_decay: float) -> Callable[[np.ndarray], float]:
    """Total loss as a function of the flat parameter vector, masks held
    fixed; deterministic by construction, suitable for finite differences."""
    saved = {k: v.copy() for k, v in model.params.items()}
    mults = normalize_masks(model, masks)

    def f(theta: np.ndarray) -> float:
        model.params = unflatten_params(saved, theta)
        breakdown, _ = model.loss_and_grads(batch, mults, weight_decay, want_grads=False)
        model.params = {k: v.copy() for k, v in saved.items()}
        return breakdown.total

    return f
