"""Versioned JSON checkpoints with byte-stable serialisation.

Floats are rendered with 17 significant digits, which round-trips 64-bit
reals losslessly: save -> load -> save reproduces the file byte for byte.
Keys are emitted in sorted order so the rendering never depends on dict
construction history.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError

__all__ = ["Checkpoint", "dumps_canonical", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1


def _render(value, out: list[str]):
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise ConfigError("cannot serialise non-finite float")
        out.append(f"{value:.17g}")
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise ConfigError(f"JSON object keys must be strings, got {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _render(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _render(item, out)
        out.append("]")
    else:
        raise ConfigError(f"cannot serialise value of type {type(value).__name__}")


def dumps_canonical(obj) -> str:
    """Compact JSON with sorted keys and 17-significant-digit floats."""
    out: list[str] = []
    _render(obj, out)
    return "".join(out)


@dataclass(frozen=True)
class Checkpoint:
    config: ExperimentConfig
    step: int
    params: dict[str, np.ndarray]
    base_seed: int
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        tensors = {}
        for name in sorted(self.params):
            arr = np.asarray(self.params[name], dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ConfigError(f"parameter {name!r} contains non-finite values")
            tensors[name] = {
                "shape": list(arr.shape),
                "data": [float(v) for v in arr.ravel()],
            }
        doc = {
            "format_version": self.format_version,
            "kind": "dropoutlab-checkpoint",
            "config": self.config.to_dict(),
            "step": self.step,
            "rng": {"base_seed": self.base_seed, "steps_completed": self.step},
            "params": tensors,
        }
        return dumps_canonical(doc) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid checkpoint JSON: {e}") from None
        if not isinstance(doc, dict) or doc.get("kind") != "dropoutlab-checkpoint":
            raise ConfigError("not a dropoutlab checkpoint document")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format_version: {version!r}")
        config = ExperimentConfig.from_dict(doc["config"])
        params = {}
        for name, tensor in doc["params"].items():
            shape = tuple(int(s) for s in tensor["shape"])
            data = np.asarray(tensor["data"], dtype=np.float64)
            if data.size != int(np.prod(shape, dtype=np.int64)):
                raise ConfigError(f"parameter {name!r}: data length does not match shape")
            params[name] = data.reshape(shape)
        rng = doc.get("rng", {})
        return cls(config=config, step=int(doc["step"]), params=params,
                   base_seed=int(rng.get("base_seed", config.seed)))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(ckpt.to_json(), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint file not found: {p}")
    return Checkpoint.from_json(p.read_text(encoding="utf-8"))
