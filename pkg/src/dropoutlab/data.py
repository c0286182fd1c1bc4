"""Dataset ingestion: text corpora for language modelling, numeric CSVs for
classification, and the built-in synthetic generators used by the test and
acceptance suites (a Zipf-distributed word corpus and a two-moons
classifier set).
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .numeric import SplitSeed

__all__ = [
    "Vocab",
    "CorpusData",
    "ingest_text_corpus",
    "ingest_classification_csv",
    "two_moons",
    "generate_zipf_corpus",
    "builtin_corpus_text",
    "BUILTIN_CORPUS",
]

UNK_TOKEN = "<unk>"
BUILTIN_CORPUS = "builtin:corpus"


@dataclass(frozen=True)
class Vocab:
    """Token table built from the training split; id 0 is the UNK token and
    the rest are ordered by descending training frequency (ties lexicographic)."""

    tokens: tuple[str, ...]
    index: dict[str, int]
    unk_id: int = 0

    @property
    def size(self) -> int:
        return len(self.tokens)

    def encode(self, toks: list[str]) -> np.ndarray:
        return np.array([self.index.get(t, self.unk_id) for t in toks], dtype=np.int64)


@dataclass(frozen=True)
class CorpusData:
    """Tokenised splits, the vocabulary, and training-split frequencies."""

    vocab: Vocab
    splits: dict[str, np.ndarray]
    train_freq: np.ndarray  # per token id, counted on the training split only


def _tokenize(text: str, tokenizer: str) -> list[str]:
    if tokenizer == "word":
        return text.split()
    if tokenizer == "char":
        return list(text)
    raise ConfigError(f"unknown tokenizer {tokenizer!r} (expected 'word' or 'char')")


def ingest_text_corpus(
    path_or_text: str | Path,
    split_fractions: tuple[float, ...] = (0.8, 0.1, 0.1),
    tokenizer: str = "word",
    is_text: bool = False,
) -> CorpusData:
    """Tokenise a corpus and split deterministically by fraction boundaries.

    Splits are contiguous (no shuffling across boundaries), cut at
    cumulative-floor token counts, and named train/valid/test in order.
    The vocabulary comes from the train split only; out-of-vocabulary
    tokens in later splits map to the UNK id. `path_or_text` is a file
    path, the `builtin:corpus` sentinel, or (with is_text=True) the raw
    corpus text itself.
    """
    if is_text:
        text = str(path_or_text)
    elif str(path_or_text) == BUILTIN_CORPUS:
        text = builtin_corpus_text()
    else:
        p = Path(path_or_text)
        if not p.is_file():
            raise ConfigError(f"corpus file not found: {p}")
        text = p.read_text(encoding="utf-8")
    tokens = _tokenize(text, tokenizer)
    if not tokens:
        raise ConfigError("corpus is empty after tokenisation")

    fractions = tuple(float(f) for f in split_fractions)
    if not (1 <= len(fractions) <= 3) or any(f <= 0.0 for f in fractions) \
            or sum(fractions) > 1.0 + 1e-9:
        raise ConfigError(f"degenerate split fractions: {split_fractions}")
    names = ("train", "valid", "test")[: len(fractions)]
    n = len(tokens)
    bounds = [0]
    acc = 0.0
    for f in fractions:
        acc += f
        bounds.append(min(n, int(np.floor(n * acc + 1e-9))))
    raw_splits = {name: tokens[bounds[i] : bounds[i + 1]] for i, name in enumerate(names)}
    if not raw_splits["train"]:
        raise ConfigError("train split is empty; fractions too small for corpus")

    counts: dict[str, int] = {}
    for t in raw_splits["train"]:
        counts[t] = counts.get(t, 0) + 1
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    tokens_table = (UNK_TOKEN,) + tuple(t for t in ordered if t != UNK_TOKEN)
    vocab = Vocab(tokens=tokens_table,
                  index={t: i for i, t in enumerate(tokens_table)}, unk_id=0)
    freq = np.zeros(vocab.size, dtype=np.int64)
    for t, c in counts.items():
        freq[vocab.index[t]] += c
    splits = {name: vocab.encode(toks) for name, toks in raw_splits.items()}
    return CorpusData(vocab=vocab, splits=splits, train_freq=freq)


def ingest_classification_csv(path: str | Path, expected_classes: int | None = None):
    """Numeric CSV with the integer class label in the last column.

    Returns (features (N, D) float64, labels (N,) int64). Ragged rows and
    non-numeric cells raise ParseError with the 1-based line number.
    """
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"file not found: {p}")
    features: list[list[float]] = []
    labels: list[int] = []
    width: int | None = None
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if width is None:
            width = len(cells)
            if width < 2:
                raise ParseError("need at least one feature column and a label", lineno)
        elif len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", lineno)
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise ParseError(f"non-numeric cell in {line!r}", lineno) from None
        label = values[-1]
        if label != int(label):
            raise ParseError(f"label {label!r} is not an integer", lineno)
        features.append(values[:-1])
        labels.append(int(label))
    if not features:
        raise ParseError("no data rows found")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = expected_classes if expected_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ParseError(f"label outside [0, {n_classes})")
    return x, y


def two_moons(n: int, noise: float, seed: SplitSeed):
    """Two interleaving half circles with Gaussian jitter; n//2 points per
    class, deterministic for a given seed."""
    if n < 2:
        raise ConfigError(f"two_moons needs n >= 2, got {n}")
    rng = seed.generator()
    n0 = n // 2
    n1 = n - n0
    t0 = rng.random(n0) * np.pi
    t1 = rng.random(n1) * np.pi
    x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    x1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([x0, x1]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return x[order], y[order]


def generate_zipf_corpus(
    seed: int = 20240801,
    n_tokens: int = 36000,
    vocab_size: int = 900,
    zipf_exponent: float = 1.08,
    successors: int = 12,
    words_per_line: tuple[int, int] = (7, 13),
) -> str:
    """Deterministic synthetic word corpus: a sparse Markov chain over
    pseudo-words with a Zipf-shaped marginal distribution.

    Each word has a small, peaked successor distribution (candidates drawn
    from the Zipf marginal), so the stream carries real sequential
    structure a language model can fit, while token frequencies keep the
    frequent/rare split the per-frequency analyses need.
    """
    rng = SplitSeed(seed).generator()
    letters = np.array(list("etaoinshrdlucmfwypvbgkjqxz"))
    letter_w = 1.0 / np.arange(2, 2 + letters.size) ** 0.9
    letter_w /= letter_w.sum()
    words: list[str] = []
    seen = set()
    while len(words) < vocab_size:
        length = int(rng.integers(2, 10))
        w = "".join(rng.choice(letters, size=length, p=letter_w))
        if w not in seen:
            seen.add(w)
            words.append(w)

    marginal = 1.0 / (np.arange(vocab_size) + 2.0) ** zipf_exponent
    marginal /= marginal.sum()
    succ_ids = np.empty((vocab_size, successors), dtype=np.int64)
    succ_probs = np.empty((vocab_size, successors))
    for i in range(vocab_size):
        succ_ids[i] = rng.choice(vocab_size, size=successors, replace=False, p=marginal)
        w = rng.dirichlet(np.full(successors, 0.25))
        succ_probs[i] = w / w.sum()

    ids = np.empty(n_tokens, dtype=np.int64)
    ids[0] = rng.choice(vocab_size, p=marginal)
    for t in range(1, n_tokens):
        cur = ids[t - 1]
        ids[t] = succ_ids[cur][rng.choice(successors, p=succ_probs[cur])]

    lines = []
    i = 0
    while i < n_tokens:
        k = int(rng.integers(words_per_line[0], words_per_line[1] + 1))
        lines.append(" ".join(words[j] for j in ids[i : i + k]))
        i += k
    return "\n".join(lines) + "\n"


def builtin_corpus_text() -> str:
    """The synthetic corpus shipped with the package."""
    ref = importlib.resources.files("dropoutlab").joinpath("assets/corpus.txt")
    return ref.read_text(encoding="utf-8")
