"""Corpus ingestion, synthetic multi-label corpora, and batching."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, RecordError, ShapeError
from .losses import LabelSet

UNK = "<unk>"
UNK_ID = 0


@dataclass(frozen=True)
class Example:
    tokens: tuple[int, ...]
    labels: LabelSet


@dataclass
class Dataset:
    examples: list[Example]
    label_names: list[str]
    vocabulary: dict[str, int]

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.examples[int(i)] for i in indices], self.label_names, self.vocabulary)

    def token_lists(self, indices=None) -> list[tuple[int, ...]]:
        if indices is None:
            return [ex.tokens for ex in self.examples]
        return [self.examples[int(i)].tokens for i in indices]

    def label_sets(self, indices=None) -> list[LabelSet]:
        if indices is None:
            return [ex.labels for ex in self.examples]
        return [self.examples[int(i)].labels for i in indices]

    def label_matrix(self) -> np.ndarray:
        return np.stack([ex.labels.to_array() for ex in self.examples])

    def texts(self) -> list[str]:
        words = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return [" ".join(words[t] for t in ex.tokens) for ex in self.examples]

    def records(self) -> list[dict]:
        return [
            {"text": text, "labels": [self.label_names[j] for j in ex.labels.indices()]}
            for text, ex in zip(self.texts(), self.examples)
        ]


def _validate_record(obj, line: int) -> tuple[str, list[str]]:
    if not isinstance(obj, dict):
        raise RecordError(line, "record is not an object")
    if "text" not in obj or not isinstance(obj["text"], str):
        raise RecordError(line, 'missing or non-string "text"')
    if "labels" not in obj or not isinstance(obj["labels"], list):
        raise RecordError(line, 'missing or non-list "labels"')
    if not obj["labels"]:
        raise RecordError(line, "empty labels")
    if not all(isinstance(x, str) for x in obj["labels"]):
        raise RecordError(line, "labels must be strings")
    if not obj["text"].split():
        raise RecordError(line, "text has no tokens")
    return obj["text"], obj["labels"]


def read_records(path) -> list[tuple[str, list[str]]]:
    """Parse a line-record corpus into ``(text, labels)`` pairs; blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(lineno, f"invalid JSON ({exc.msg})") from None
            records.append(_validate_record(obj, lineno))
    return records


def build_dataset(
    records: Sequence[tuple[str, Sequence[str]]],
    vocabulary: dict[str, int] | None = None,
    label_names: Sequence[str] | None = None,
) -> Dataset:
    """Tokenise records on whitespace.

    Without ``vocabulary`` one is built in first-seen order with ``<unk>`` at
    id 0; with one, unseen words map to id 0.  ``label_names`` likewise fixes
    the label space, and unknown label strings are an error.
    """
    frozen_vocab = vocabulary is not None
    vocab = dict(vocabulary) if frozen_vocab else {UNK: UNK_ID}
    frozen_labels = label_names is not None
    names = list(label_names) if frozen_labels else []
    label_index = {name: j for j, name in enumerate(names)}

    encoded = []
    for lineno, (text, labels) in enumerate(records, start=1):
        ids = []
        for word in text.split():
            tid = vocab.get(word)
            if tid is None:
                if frozen_vocab:
                    tid = UNK_ID
                else:
                    tid = vocab[word] = len(vocab)
            ids.append(tid)
        bits = []
        for name in labels:
            j = label_index.get(name)
            if j is None:
                if frozen_labels:
                    raise RecordError(lineno, f"unknown label {name!r}")
                j = label_index[name] = len(names)
                names.append(name)
            bits.append(j)
        if not bits:
            raise RecordError(lineno, "empty labels")
        encoded.append((tuple(ids), bits))
    width = len(names)
    examples = [Example(ids, LabelSet.from_indices(bits, width)) for ids, bits in encoded]
    return Dataset(examples, names, vocab)


def load_jsonl(path, vocabulary=None, label_names=None) -> Dataset:
    return build_dataset(read_records(path), vocabulary, label_names)


def write_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in dataset.records():
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split_indices(n: int, seed: int, sizes: Sequence[int] | None = None, fractions=(0.7, 0.1, 0.2)):
    """Seeded shuffle of ``range(n)`` cut into train/valid/test index arrays.

    ``sizes`` gives explicit counts (must sum to at most ``n``); otherwise
    ``fractions`` are applied with the test split taking the remainder.
    """
    order = np.random.default_rng(seed).permutation(n)
    if sizes is None:
        n_train = int(round(fractions[0] * n))
        n_valid = int(round(fractions[1] * n))
        sizes = (n_train, n_valid, n - n_train - n_valid)
    if sum(sizes) > n or min(sizes) < 0:
        raise ShapeError(f"split sizes {tuple(sizes)} do not fit {n} examples")
    a, b = sizes[0], sizes[0] + sizes[1]
    return order[:a], order[a:b], order[b : b + sizes[2]]


def load_splits(path, seed: int = 0, vocabulary=None, label_names=None):
    """Split one corpus file 70/10/20 into (train, valid, test) Datasets.

    The vocabulary comes from the training split only; the label space is
    taken from the whole file so that rare labels outside training still have
    a column.  Pass ``vocabulary``/``label_names`` to reuse a frozen mapping.
    """
    records = read_records(path)
    if label_names is None:
        label_names = build_dataset(records).label_names
    tr, va, te = split_indices(len(records), seed)
    train = build_dataset([records[i] for i in tr], vocabulary, label_names)
    valid = build_dataset([records[i] for i in va], train.vocabulary, label_names)
    test = build_dataset([records[i] for i in te], train.vocabulary, label_names)
    return train, valid, test


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Generator settings.

    ``cooccurrence[i][j]`` is the chance that label ``j`` joins an example whose
    primary label is ``i`` (given the example is multi-label).  ``None`` means
    0.2 everywhere off the diagonal.  ``signal_rate`` is the share of tokens
    drawn from the active labels' vocabulary blocks rather than the shared
    block.
    """

    n_labels: int = 6
    vocab_size: int = 500
    n_examples: int = 2900
    tokens_per_example: int = 12
    cooccurrence: list[list[float]] | None = None
    multi_label_rate: float = 0.5
    seed: int = 0
    signal_rate: float = 0.5

    def __post_init__(self):
        if self.cooccurrence is None:
            c = np.full((self.n_labels, self.n_labels), 0.2)
            np.fill_diagonal(c, 1.0)
            self.cooccurrence = c.tolist()
        self.validate()

    def validate(self) -> None:
        for name in ("n_labels", "vocab_size", "n_examples", "tokens_per_example"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if self.vocab_size < self.n_labels + 1:
            raise ConfigError("vocab_size", "needs at least one word per label plus a shared block")
        for name in ("multi_label_rate", "signal_rate"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigError(name, f"must lie in [0, 1], got {value!r}")
        c = np.asarray(self.cooccurrence, dtype=np.float64)
        if c.shape != (self.n_labels, self.n_labels):
            raise ConfigError("cooccurrence", f"shape {c.shape} != ({self.n_labels}, {self.n_labels})")
        if np.any(~np.isfinite(c)) or np.any(c < 0) or np.any(c > 1):
            raise ConfigError("cooccurrence", "probabilities must lie in [0, 1]")
        if not np.array_equal(c, c.T):
            raise ConfigError("cooccurrence", "matrix must be symmetric")
        if not np.all(np.diag(c) == 1.0):
            raise ConfigError("cooccurrence", "diagonal must be 1")

    @classmethod
    def from_dict(cls, values: dict) -> "SyntheticConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(name, "unknown synthetic-config field")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def label_marginals(self) -> np.ndarray:
        """Probability that each label is active under the generator."""
        c = np.asarray(self.cooccurrence, dtype=np.float64)
        off = c - np.diag(np.diag(c))
        l = self.n_labels
        return (1.0 + self.multi_label_rate * off.sum(axis=0)) / l


def vocabulary_blocks(n_labels: int, vocab_size: int) -> list[range]:
    """Word-index blocks: one per label, then the shared block last."""
    per = vocab_size // (n_labels + 1)
    blocks = [range(j * per, (j + 1) * per) for j in range(n_labels)]
    blocks.append(range(n_labels * per, vocab_size))
    return blocks


def generate_records(cfg: SyntheticConfig) -> list[tuple[str, list[str]]]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    l = cfg.n_labels
    c = np.asarray(cfg.cooccurrence, dtype=np.float64)
    blocks = vocabulary_blocks(l, cfg.vocab_size)
    names = [f"L{j}" for j in range(l)]
    records = []
    for _ in range(cfg.n_examples):
        primary = int(rng.integers(l))
        active = [primary]
        if rng.random() < cfg.multi_label_rate:
            draws = rng.random(l)
            active += [j for j in range(l) if j != primary and draws[j] < c[primary, j]]
        active.sort()
        words = []
        for _ in range(cfg.tokens_per_example):
            if rng.random() < cfg.signal_rate:
                block = blocks[active[int(rng.integers(len(active)))]]
            else:
                block = blocks[-1]
            words.append(f"w{block[int(rng.integers(len(block)))]}")
        records.append((" ".join(words), [names[j] for j in active]))
    return records


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Draw a corpus; label names are ``L0..L{l-1}`` in index order."""
    names = [f"L{j}" for j in range(cfg.n_labels)]
    return build_dataset(generate_records(cfg), label_names=names)


def batch_iterator(dataset, batch_size: int, seed: int = 0, shuffle: bool = True) -> list[np.ndarray]:
    """Consecutive index groups of ``batch_size`` (the last may be short)."""
    if batch_size < 1:
        raise ShapeError("batch_size must be >= 1")
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]
