"""Fully-connected tanh classifier with row-wise unit dropout.

Dropout sites are the input vector and each hidden layer; multiplying a
unit's activation by its mask bit is identical to masking that unit's
outgoing weight row, so masked rows contribute nothing to the data loss
or its gradient.
"""

from __future__ import annotations

import numpy as np

from .dropout import DropoutSpec, MaskSet
from .errors import ShapeError
from .numeric import SplitSeed

__all__ = ["Mlp"]


class Mlp:
    """layer_sizes = [in, hidden..., classes]; tanh hidden activations,
    identity output (pre-softmax logits)."""

    kind = "mlp"

    def __init__(
        self,
        layer_sizes: list[int],
        dropout: DropoutSpec,
        params: dict[str, np.ndarray] | None = None,
        init_seed: SplitSeed | None = None,
    ):
        if len(layer_sizes) < 2 or any(n < 1 for n in layer_sizes):
            raise ShapeError(f"invalid layer sizes: {layer_sizes}")
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.dropout = dropout
        known = set(self.site_sizes())
        for site_id, _ in dropout.sites:
            if site_id not in known:
                raise ShapeError(f"dropout site {site_id!r} not in {sorted(known)}")
        if params is None:
            if init_seed is None:
                raise ShapeError("either params or init_seed is required")
            params = self._init_params(init_seed)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self._check_shapes()

    # sites: "in" masks the input vector, "h{k}" masks hidden layer k.
    def site_sizes(self) -> dict[str, int]:
        sizes = {"in": self.layer_sizes[0]}
        for k, n in enumerate(self.layer_sizes[1:-1], start=1):
            sizes[f"h{k}"] = n
        return sizes

    def _site_order(self) -> list[str]:
        return ["in"] + [f"h{k}" for k in range(1, len(self.layer_sizes) - 1)]

    def _init_params(self, seed: SplitSeed) -> dict[str, np.ndarray]:
        rng = seed.generator()
        params: dict[str, np.ndarray] = {}
        for k in range(len(self.layer_sizes) - 1):
            n_in, n_out = self.layer_sizes[k], self.layer_sizes[k + 1]
            params[f"W{k}"] = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
            params[f"b{k}"] = np.zeros(n_out)
        return params

    def _check_shapes(self):
        for k in range(len(self.layer_sizes) - 1):
            n_in, n_out = self.layer_sizes[k], self.layer_sizes[k + 1]
            if self.params[f"W{k}"].shape != (n_in, n_out):
                raise ShapeError(f"W{k} shape {self.params[f'W{k}'].shape} != {(n_in, n_out)}")
            if self.params[f"b{k}"].shape != (n_out,):
                raise ShapeError(f"b{k} shape {self.params[f'b{k}'].shape} != {(n_out,)}")

    def _mult(self, mults: MaskSet, site_id: str, batch: int) -> np.ndarray:
        m = np.asarray(mults[site_id], dtype=np.float64)
        size = self.site_sizes()[site_id]
        if m.ndim == 3 and m.shape[1] == 1:
            m = m[:, 0, :]  # sharing modes are irrelevant to a single-step model
        if m.ndim == 1:
            if m.shape[0] != size:
                raise ShapeError(f"site {site_id!r} multiplier length {m.shape[0]} != {size}")
            return m
        if m.ndim == 2:
            if m.shape[1] != size or m.shape[0] not in (1, batch):
                raise ShapeError(f"site {site_id!r} multiplier shape {m.shape} incompatible "
                                 f"with batch {batch}")
            return m
        raise ShapeError(f"site {site_id!r} multiplier has ndim {m.ndim}")

    def forward(self, x: np.ndarray, mults: MaskSet) -> np.ndarray:
        """Logits for inputs x (B, in) under per-site multipliers (masks or
        deterministic row scales)."""
        logits, _ = self._forward_cached(x, mults)
        return logits

    def _forward_cached(self, x, mults):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.layer_sizes[0]:
            raise ShapeError(f"input width {x.shape[1]} != {self.layer_sizes[0]}")
        batch = x.shape[0]
        order = self._site_order()
        h = x
        cache = []  # per layer: (masked input to W_k, multiplier, activation out)
        n_layers = len(self.layer_sizes) - 1
        for k in range(n_layers):
            m = self._mult(mults, order[k], batch)
            hm = h * m
            z = hm @ self.params[f"W{k}"] + self.params[f"b{k}"]
            a = np.tanh(z) if k < n_layers - 1 else z
            cache.append((hm, m, a))
            h = a
        return h, (x, cache)

    def loss_and_grads(
        self,
        batch: tuple[np.ndarray, np.ndarray],
        mults: MaskSet,
        weight_decay: float,
        want_grads: bool = True,
    ):
        """Summed cross-entropy over the batch plus the weight-decay prior
        term; optionally the gradient of the total w.r.t. every parameter."""
        from .models import cross_entropy_terms, prior_terms, LossBreakdown

        x, y = batch
        logits, (x0, cache) = self._forward_cached(x, mults)
        nll, dlogits = cross_entropy_terms(logits, np.asarray(y))
        prior, prior_grads = prior_terms(self.params, weight_decay, want_grads)
        breakdown = LossBreakdown(nll=nll, prior_term=prior)
        if not want_grads:
            return breakdown, None

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        n_layers = len(self.layer_sizes) - 1
        delta = dlogits
        for k in range(n_layers - 1, -1, -1):
            hm, m, a = cache[k]
            grads[f"W{k}"] += hm.T @ delta
            grads[f"b{k}"] += delta.sum(axis=0)
            if k > 0:
                dh = (delta @ self.params[f"W{k}"].T) * m
                _, _, a_prev = cache[k - 1]
                delta = dh * (1.0 - a_prev * a_prev)  # tanh'
        for key in grads:
            grads[key] += prior_grads[key]
        return breakdown, grads
