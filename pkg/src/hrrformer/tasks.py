"""Synthetic sequence-classification datasets and raw-byte ingestion.

Token 0 is always padding.  Labels are token ids, so ``num_classes``
equals the vocabulary size and unused ids are simply never targets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, IngestionError

PAD = 0
SEP = 1


@dataclass
class TaskBatch:
    tokens: np.ndarray  # (B, T) int64
    mask: np.ndarray    # (B, T) int8, 1 = valid
    labels: np.ndarray  # (B,) int64


@dataclass
class Dataset:
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    vocab_size: int
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.tokens[index], self.mask[index], self.labels[index],
                       self.vocab_size, self.num_classes)

    def as_batch(self) -> TaskBatch:
        return TaskBatch(self.tokens, self.mask, self.labels)

    def split(self, n_test: int) -> tuple:
        """Last ``n_test`` rows become the test set."""
        n = len(self)
        if not 0 <= n_test <= n:
            raise ConfigError(f"cannot hold out {n_test} of {n} examples")
        return self.subset(slice(0, n - n_test)), self.subset(slice(n - n_test, n))


def check_batch(batch, vocab_size: int, num_classes: int) -> None:
    """Raise ``ContractError`` unless the TaskBatch invariants hold."""
    if batch.tokens.shape != batch.mask.shape or batch.labels.shape != batch.tokens.shape[:1]:
        raise ContractError("tokens, mask and labels have inconsistent shapes")
    if batch.tokens.size and (batch.tokens.min() < 0 or batch.tokens.max() >= vocab_size):
        raise ContractError("token id outside the vocabulary")
    if not np.isin(batch.mask, (0, 1)).all():
        raise ContractError("mask must be binary")
    if (batch.tokens[batch.mask == 0] != PAD).any():
        raise ContractError("masked positions must hold the pad token")
    if batch.labels.size and (batch.labels.min() < 0 or batch.labels.max() >= num_classes):
        raise ContractError("label outside [0, num_classes)")


def keyvalue_alphabets(vocab: int) -> tuple:
    """Split ids 2..vocab-1 into key ids (lower half) and value ids (upper half)."""
    usable = vocab - 2
    n_keys = usable // 2
    keys = np.arange(2, 2 + n_keys)
    values = np.arange(2 + n_keys, vocab)
    return keys, values


def gen_keyvalue_recall(n: int, T: int, n_pairs: int, vocab: int, seed: int) -> Dataset:
    """Associative recall: ``k1 v1 ... kP vP SEP q`` then padding.

    Keys within a sequence are distinct; values are drawn with replacement.
    The label is the value token stored next to the key equal to ``q``.
    """
    if n_pairs < 1 or 2 * n_pairs + 2 > T:
        raise ConfigError(f"{n_pairs} pairs plus separator and query do not fit in T={T}")
    keys, values = keyvalue_alphabets(vocab)
    if len(keys) < n_pairs or len(values) < 1:
        raise ConfigError(f"vocab={vocab} has only {len(keys)} key ids for {n_pairs} distinct keys")
    rng = np.random.default_rng(seed)
    k = np.argsort(rng.random((n, len(keys))), axis=1)[:, :n_pairs]
    k = keys[k]
    v = values[rng.integers(0, len(values), (n, n_pairs))]
    which = rng.integers(0, n_pairs, n)
    rows = np.arange(n)

    L = 2 * n_pairs + 2
    tokens = np.zeros((n, T), dtype=np.int64)
    tokens[:, 0:2 * n_pairs:2] = k
    tokens[:, 1:2 * n_pairs:2] = v
    tokens[:, 2 * n_pairs] = SEP
    tokens[:, 2 * n_pairs + 1] = k[rows, which]
    mask = np.zeros((n, T), dtype=np.int8)
    mask[:, :L] = 1
    return Dataset(tokens, mask, v[rows, which].astype(np.int64), vocab, vocab)


def gen_majority(n: int, T: int, C: int, seed: int, min_len: int = None) -> Dataset:
    """Sequences over class tokens 1..C with one planted, strictly most frequent class.

    Lengths are uniform in ``[min_len, T]`` (default ``T // 2``).  About a
    fifth of each sequence is overwritten with the planted class, then more
    positions are flipped to it if needed so the argmax count is unique.
    """
    if C < 2:
        raise ConfigError(f"majority needs at least two classes, got {C}")
    min_len = max(1, T // 2 if min_len is None else min_len)
    if not 1 <= min_len <= T:
        raise ConfigError(f"min_len must lie in [1, T], got {min_len}")
    rng = np.random.default_rng(seed)
    tokens = np.zeros((n, T), dtype=np.int64)
    mask = np.zeros((n, T), dtype=np.int8)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        L = int(rng.integers(min_len, T + 1))
        seq = rng.integers(1, C + 1, L)
        major = int(rng.integers(1, C + 1))
        seq[rng.random(L) < 0.2] = major
        counts = np.bincount(seq, minlength=C + 1)
        rival = np.delete(counts, [0, major]).max()
        if counts[major] <= rival:
            others = np.flatnonzero(seq != major)
            flip = rng.permutation(others)[: rival - counts[major] + 1]
            seq[flip] = major
        tokens[i, :L] = seq
        mask[i, :L] = 1
        labels[i] = major
    return Dataset(tokens, mask, labels, C + 1, C + 1)


def majority_label(tokens) -> int:
    """The unique most frequent non-pad token; raises if the maximum is tied."""
    tokens = np.asarray(tokens)
    counts = np.bincount(tokens[tokens != PAD])
    top = np.flatnonzero(counts == counts.max())
    if len(top) != 1:
        raise ValueError(f"no unique majority: tokens {top.tolist()} tie")
    return int(top[0])


def encode_bytes(raw: bytes, T: int) -> tuple:
    """Bytes shifted by +1 (0 is pad), truncated or padded to ``T``."""
    data = np.frombuffer(raw[:T], dtype=np.uint8).astype(np.int64) + 1
    tokens = np.zeros(T, dtype=np.int64)
    mask = np.zeros(T, dtype=np.int8)
    tokens[: len(data)] = data
    mask[: len(data)] = 1
    return tokens, mask


def load_bytes_dataset(directory, T: int, seed: int) -> Dataset:
    """Read files listed in ``labels.csv`` (``filename,label``) under ``directory``.

    Rows are returned in a seeded shuffled order.  A header row is
    optional.  Vocabulary is 257: 256 byte values plus padding.
    """
    directory = Path(directory)
    manifest = directory / "labels.csv"
    try:
        with open(manifest, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise IngestionError(manifest, f"cannot read labels manifest ({exc.strerror})") from None
    if rows and [c.strip().lower() for c in rows[0]] == ["filename", "label"]:
        rows = rows[1:]
    tokens, mask, labels = [], [], []
    for row in rows:
        if len(row) != 2:
            raise IngestionError(manifest, f"expected 'filename,label', got {row!r}")
        name, label = row[0].strip(), row[1].strip()
        try:
            y = int(label)
        except ValueError:
            raise IngestionError(name, f"label {label!r} is not an integer") from None
        if y < 0:
            raise IngestionError(name, f"label {y} is negative")
        try:
            raw = (directory / name).read_bytes()
        except OSError as exc:
            raise IngestionError(name, f"cannot read file ({exc.strerror})") from None
        t, m = encode_bytes(raw, T)
        tokens.append(t)
        mask.append(m)
        labels.append(y)
    n = len(labels)
    order = np.random.default_rng(seed).permutation(n)
    tokens = np.array(tokens, dtype=np.int64).reshape(n, T)[order]
    mask = np.array(mask, dtype=np.int8).reshape(n, T)[order]
    labels = np.array(labels, dtype=np.int64)[order]
    classes = int(labels.max()) + 1 if n else 1
    return Dataset(tokens, mask, labels, 257, max(classes, 2))


def batch_iter(dataset: Dataset, B: int, seed: int, shuffle: bool = True, epoch: int = 0) -> Iterator[TaskBatch]:
    """Mini-batches in a per-(seed, epoch) permutation; the last batch may be short."""
    if B < 1:
        raise ConfigError(f"batch size must be positive, got {B}")
    n = len(dataset)
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, B):
        idx = order[start:start + B]
        yield TaskBatch(dataset.tokens[idx], dataset.mask[idx], dataset.labels[idx])


def export_jsonl(dataset: Dataset, path) -> None:
    """One ``{"tokens": [...], "label": k}`` object per line, padding stripped."""
    with open(path, "w") as fh:
        for t, m, y in zip(dataset.tokens, dataset.mask, dataset.labels):
            fh.write(json.dumps({"tokens": t[m == 1].tolist(), "label": int(y)}) + "\n")


def read_jsonl(path, T: int) -> Dataset:
    """Load the JSONL export back, padding every row to ``T``."""
    tokens, mask, labels = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                seq = np.asarray(obj["tokens"], dtype=np.int64)[:T]
                y = int(obj.get("label", 0))
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestionError(path, f"line {lineno}: {exc}") from None
            row = np.zeros(T, dtype=np.int64)
            row[: len(seq)] = seq
            m = np.zeros(T, dtype=np.int8)
            m[: len(seq)] = 1
            tokens.append(row)
            mask.append(m)
            labels.append(y)
    n = len(labels)
    toks = np.array(tokens, dtype=np.int64).reshape(n, T)
    vocab = int(toks.max()) + 1 if n else 1
    return Dataset(toks, np.array(mask, dtype=np.int8).reshape(n, T),
                   np.array(labels, dtype=np.int64), vocab, max(labels, default=0) + 1)
