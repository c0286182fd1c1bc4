"""Single-layer LSTM language model with row dropout on the input-to-hidden
and hidden-to-hidden connections.

One mask per source unit multiplies that unit's activation before the
4H-wide gate matmul, so all four gates see the same row mask. Masks are
either reused across every time step of a sequence or redrawn per step,
depending on the DropoutSpec sharing mode.
"""

from __future__ import annotations

import numpy as np

from .dropout import DropoutSpec, MaskSet
from .errors import InputError, ShapeError
from .numeric import SplitSeed

__all__ = ["LstmLm"]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LstmLm:
    """Embedding -> LSTM cell -> vocabulary logits at every step."""

    kind = "lstm"

    def __init__(
        self,
        vocab_size: int,
        embedding_dim: int,
        hidden_size: int,
        dropout: DropoutSpec,
        params: dict[str, np.ndarray] | None = None,
        init_seed: SplitSeed | None = None,
        tied_embedding: bool = False,
    ):
        if min(vocab_size, embedding_dim, hidden_size) < 1:
            raise ShapeError("vocab_size, embedding_dim and hidden_size must be >= 1")
        if tied_embedding and embedding_dim != hidden_size:
            raise ShapeError("tied embedding requires embedding_dim == hidden_size")
        self.vocab_size = int(vocab_size)
        self.embedding_dim = int(embedding_dim)
        self.hidden_size = int(hidden_size)
        self.tied_embedding = bool(tied_embedding)
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

    # sites: "x" masks the embedded input vector, "h" the recurrent state.
    def site_sizes(self) -> dict[str, int]:
        return {"x": self.embedding_dim, "h": self.hidden_size}

    def _init_params(self, seed: SplitSeed) -> dict[str, np.ndarray]:
        rng = seed.generator()
        v, e, h = self.vocab_size, self.embedding_dim, self.hidden_size
        params = {
            "emb": rng.normal(0.0, 0.1, size=(v, e)),
            "Wx": rng.normal(0.0, 1.0 / np.sqrt(e), size=(e, 4 * h)),
            "Wh": rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, 4 * h)),
            "b": np.zeros(4 * h),
            "bout": np.zeros(v),
        }
        params["b"][h : 2 * h] = 1.0  # forget-gate bias
        if not self.tied_embedding:
            params["Wout"] = rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, v))
        return params

    def _check_shapes(self):
        v, e, h = self.vocab_size, self.embedding_dim, self.hidden_size
        expect = {"emb": (v, e), "Wx": (e, 4 * h), "Wh": (h, 4 * h), "b": (4 * h,), "bout": (v,)}
        if not self.tied_embedding:
            expect["Wout"] = (h, v)
        for name, shape in expect.items():
            if name not in self.params or self.params[name].shape != shape:
                got = self.params.get(name)
                raise ShapeError(f"parameter {name}: expected shape {shape}, got "
                                 f"{None if got is None else got.shape}")

    def _out_matrix(self) -> np.ndarray:
        return self.params["emb"].T if self.tied_embedding else self.params["Wout"]

    def _check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.ndim != 2 or tokens.shape[1] < 1:
            raise ShapeError(f"token array must be (B, T>=1), got shape {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise InputError(f"token id outside [0, {self.vocab_size})")
        return tokens

    @staticmethod
    def _step_mult(m: np.ndarray, t: int, size: int, batch: int, site: str) -> np.ndarray:
        if m.ndim == 1:
            if m.shape[0] != size:
                raise ShapeError(f"site {site!r} multiplier length {m.shape[0]} != {size}")
            return m
        if m.ndim == 2:
            if m.shape[1] != size or m.shape[0] not in (1, batch):
                raise ShapeError(f"site {site!r} multiplier shape {m.shape} incompatible")
            return m
        if m.ndim == 3:
            if m.shape[2] != size or m.shape[0] not in (1, batch):
                raise ShapeError(f"site {site!r} multiplier shape {m.shape} incompatible")
            return m[:, t]
        raise ShapeError(f"site {site!r} multiplier has ndim {m.ndim}")

    def forward(self, tokens: np.ndarray, mults: MaskSet) -> np.ndarray:
        """Per-step next-token logits, shape (B, T, vocab)."""
        tokens = self._check_tokens(tokens)
        b, t_steps = tokens.shape
        e, hs = self.embedding_dim, self.hidden_size
        mx = np.asarray(mults["x"], dtype=np.float64)
        mh = np.asarray(mults["h"], dtype=np.float64)
        w_out = self._out_matrix()
        x_emb = self.params["emb"][tokens]  # (B, T, E)
        h = np.zeros((b, hs))
        c = np.zeros((b, hs))
        logits = np.empty((b, t_steps, self.vocab_size))
        for t in range(t_steps):
            xt = x_emb[:, t] * self._step_mult(mx, t, e, b, "x")
            hm = h * self._step_mult(mh, t, hs, b, "h")
            a = xt @ self.params["Wx"] + hm @ self.params["Wh"] + self.params["b"]
            i = _sigmoid(a[:, :hs])
            f = _sigmoid(a[:, hs : 2 * hs])
            g = np.tanh(a[:, 2 * hs : 3 * hs])
            o = _sigmoid(a[:, 3 * hs :])
            c = f * c + i * g
            h = o * np.tanh(c)
            logits[:, t] = h @ w_out + self.params["bout"]
        return logits

    def applied_step_masks(self, tokens, mults) -> list[dict[str, np.ndarray]]:
        """The multiplier actually applied at each step (diagnostic)."""
        tokens = self._check_tokens(tokens)
        b, t_steps = tokens.shape
        out = []
        for t in range(t_steps):
            out.append({
                "x": np.broadcast_to(self._step_mult(
                    np.asarray(mults["x"], dtype=np.float64), t, self.embedding_dim, b, "x"),
                    (b, self.embedding_dim)).copy(),
                "h": np.broadcast_to(self._step_mult(
                    np.asarray(mults["h"], dtype=np.float64), t, self.hidden_size, b, "h"),
                    (b, self.hidden_size)).copy(),
            })
        return out

    def loss_and_grads(
        self,
        batch: tuple[np.ndarray, np.ndarray],
        mults: MaskSet,
        weight_decay: float,
        want_grads: bool = True,
    ):
        from .models import cross_entropy_terms, prior_terms, LossBreakdown

        inputs, targets = batch
        tokens = self._check_tokens(inputs)
        targets = self._check_tokens(targets)
        if targets.shape != tokens.shape:
            raise ShapeError("inputs and targets must have equal shape")
        b, t_steps = tokens.shape
        e, hs = self.embedding_dim, self.hidden_size
        mx = np.asarray(mults["x"], dtype=np.float64)
        mh = np.asarray(mults["h"], dtype=np.float64)
        w_out = self._out_matrix()
        x_emb = self.params["emb"][tokens]

        h = np.zeros((b, hs))
        c = np.zeros((b, hs))
        hs_seq = np.empty((b, t_steps, hs))
        steps = []
        for t in range(t_steps):
            mx_t = self._step_mult(mx, t, e, b, "x")
            mh_t = self._step_mult(mh, t, hs, b, "h")
            xt = x_emb[:, t] * mx_t
            hm = h * mh_t
            a = xt @ self.params["Wx"] + hm @ self.params["Wh"] + self.params["b"]
            i = _sigmoid(a[:, :hs])
            f = _sigmoid(a[:, hs : 2 * hs])
            g = np.tanh(a[:, 2 * hs : 3 * hs])
            o = _sigmoid(a[:, 3 * hs :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs_seq[:, t] = h
            steps.append((xt, hm, mx_t, mh_t, i, f, g, o, c_prev, tc))

        logits = hs_seq @ w_out + self.params["bout"]
        nll, dlogits = cross_entropy_terms(logits, targets)
        prior, prior_grads = prior_terms(self.params, weight_decay, want_grads)
        breakdown = LossBreakdown(nll=nll, prior_term=prior)
        if not want_grads:
            return breakdown, None

        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        d_wout = np.zeros_like(w_out)
        flat_h = hs_seq.reshape(b * t_steps, hs)
        flat_dl = dlogits.reshape(b * t_steps, self.vocab_size)
        d_wout += flat_h.T @ flat_dl
        grads["bout"] += flat_dl.sum(axis=0)
        dh_from_logits = dlogits @ w_out.T  # (B, T, H)

        dh_next = np.zeros((b, hs))
        dc_next = np.zeros((b, hs))
        for t in range(t_steps - 1, -1, -1):
            xt, hm, mx_t, mh_t, i, f, g, o, c_prev, tc = steps[t]
            dh = dh_from_logits[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            grads["Wx"] += xt.T @ da
            grads["Wh"] += hm.T @ da
            grads["b"] += da.sum(axis=0)
            dxt = (da @ self.params["Wx"].T) * mx_t
            np.add.at(grads["emb"], tokens[:, t], dxt)
            dh_next = (da @ self.params["Wh"].T) * mh_t
            dc_next = dc * f

        if self.tied_embedding:
            grads["emb"] += d_wout.T
        else:
            grads["Wout"] += d_wout
        for key in grads:
            grads[key] += prior_grads[key]
        return breakdown, grads
