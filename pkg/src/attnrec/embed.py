"""Skip-gram item embeddings learned from per-user action sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from . import sampler
from .corpus import UserHistory, Vocabulary
from .numkit import log_logistic, logistic


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    """Target and context vectors per vocabulary item.

    Downstream models only ever see :attr:`vectors`, a read-only view of
    the target vectors.
    """

    items: tuple[str, ...]
    target: np.ndarray
    context: np.ndarray

    @property
    def dim(self) -> int:
        return self.target.shape[1]

    @property
    def vectors(self) -> np.ndarray:
        view = self.target.view()
        view.setflags(write=False)
        return view

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SkipGramConfig:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    gamma: float = 0.75
    lr: float = 0.025
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 0:
            raise ValueError(f"invalid skip-gram config: {self}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def extract_pairs(sequence: Sequence[int], window: int) -> list[tuple[int, int]]:
    """All (center, context) pairs within ``window`` positions.

    Pairs whose two entries are the same item are dropped.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(sequence)
    out = []
    for t in range(n):
        for s in range(max(0, t - window), min(n, t + window + 1)):
            if s != t and sequence[s] != sequence[t]:
                out.append((sequence[t], sequence[s]))
    return out


def pair_arrays(sequence: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`extract_pairs` returning center/context arrays."""
    n = len(sequence)
    centers, contexts = [], []
    for off in range(1, window + 1):
        if off >= n:
            break
        a, b = sequence[:-off], sequence[off:]
        keep = a != b
        centers += [a[keep], b[keep]]
        contexts += [b[keep], a[keep]]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def sg_loss(table: EmbeddingTable, center: int, context: int, negatives: Sequence[int]) -> float:
    x = table.target[center]
    pos = log_logistic(x @ table.context[context])
    neg = log_logistic(-(table.context[list(negatives)] @ x)) if len(negatives) else 0.0
    return float(-(pos + np.sum(neg)))


def sg_gradients(target: np.ndarray, context: np.ndarray, center: int, ctx: int, negatives: Sequence[int]):
    """Gradients w.r.t. the center vector and each touched context row."""
    x = target[center]
    rows = [ctx, *negatives]
    labels = np.array([1.0] + [0.0] * len(negatives))
    c = context[rows]
    coef = logistic(c @ x) - labels
    g_center = coef @ c
    g_rows = coef[:, None] * x[None, :]
    return g_center, rows, g_rows


def sg_step(table: EmbeddingTable, center: int, context: int, negatives: Sequence[int], lr: float):
    """One SGD step on a (center, context) pair plus its negatives.

    Mutates the table in place and returns ``(table, loss_before_step)``.
    """
    if context in set(negatives):
        raise ValueError("negatives must not contain the context item")
    loss = sg_loss(table, center, context, negatives)
    g_center, rows, g_rows = sg_gradients(table.target, table.context, center, context, negatives)
    for r, g in zip(rows, g_rows):
        table.context[r] -= lr * g
    table.target[center] -= lr * g_center
    return table, loss


@numba.njit(cache=True)
def _sgd_kernel(target, context, centers, contexts, negatives, lr_start, lr_end, step0, total):
    d = target.shape[1]
    n_neg = negatives.shape[1]
    grad = np.empty(d)
    for p in range(centers.shape[0]):
        frac = (step0 + p) / max(total - 1, 1)
        lr = lr_start + (lr_end - lr_start) * frac
        c = centers[p]
        grad[:] = 0.0
        for j in range(n_neg + 1):
            if j == 0:
                row = contexts[p]
                label = 1.0
            else:
                row = negatives[p, j - 1]
                label = 0.0
            dot = 0.0
            for k in range(d):
                dot += target[c, k] * context[row, k]
            if dot >= 0:
                sig = 1.0 / (1.0 + math.exp(-dot))
            else:
                e = math.exp(dot)
                sig = e / (1.0 + e)
            coef = sig - label
            for k in range(d):
                grad[k] += coef * context[row, k]
                context[row, k] -= lr * coef * target[c, k]
        for k in range(d):
            target[c, k] -= lr * grad[k]


def init_table(vocab: Vocabulary, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    target = (rng.random((len(vocab), dim)) - 0.5) / dim
    context = np.zeros((len(vocab), dim))
    return EmbeddingTable(tuple(vocab.items), target, context)


def _draw_negatives(table_alias, contexts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    neg = sampler.sample_many(table_alias, (len(contexts), k), rng)
    # redraw negatives that collide with the positive context
    bad = neg == contexts[:, None]
    while np.any(bad):
        neg[bad] = sampler.sample_many(table_alias, int(bad.sum()), rng)
        bad = neg == contexts[:, None]
    return neg


def train_embeddings(
    histories: Sequence[UserHistory],
    vocab: Vocabulary,
    config: SkipGramConfig,
    counts: np.ndarray | None = None,
) -> EmbeddingTable:
    """Train target/context vectors with negative sampling.

    Sequences are the raw, temporally ordered item streams (repeats kept).
    The learning rate decays linearly from ``lr`` to ``lr / 100`` over all
    pairs of all epochs.  Negatives come from ``counts ** gamma``.
    """
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    rng = np.random.default_rng(config.seed)
    table = init_table(vocab, config.dim, rng)
    counts = vocab.counts if counts is None else counts
    alias = sampler.build_alias(sampler.build_distribution(counts, config.gamma))
    seqs = []
    for h in histories:
        idx = [vocab.index[i] for i in h.items() if i in vocab.index]
        seqs.append(np.array(idx, dtype=np.int64))
    per_epoch = sum(len(pair_arrays(s, config.window)[0]) for s in seqs)
    total = per_epoch * config.epochs
    if total == 0:
        return table
    if int(np.count_nonzero(alias.positive)) < 2:
        return table
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(seqs))
        parts = [pair_arrays(seqs[i], config.window) for i in order]
        centers = np.concatenate([p[0] for p in parts])
        contexts = np.concatenate([p[1] for p in parts])
        negatives = _draw_negatives(alias, contexts, config.negatives, rng)
        _sgd_kernel(table.target, table.context, centers, contexts, negatives,
                    config.lr, config.lr / 100.0, step, total)
        step += len(centers)
    if not (np.all(np.isfinite(table.target)) and np.all(np.isfinite(table.context))):
        raise FloatingPointError("skip-gram training produced non-finite vectors")
    return table


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.where(norms > 0, norms, 1.0)
    return unit @ unit.T


def save_embeddings(table: EmbeddingTable, path) -> None:
    """word2vec text format with 9 significant digits (target vectors)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for item, vec in zip(table.items, table.target):
            fh.write(item + " " + " ".join(f"{v:.9g}" for v in vec) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}:1: expected header 'N d'")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}:1: non-integer header") from None
        items, rows = [], []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != d + 1:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected {d} values, got {len(parts) - 1}")
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: bad number") from None
            items.append(parts[0])
    if len(items) != n:
        raise EmbeddingFormatError(f"{path}: header says {n} items, body has {len(items)}")
    target = np.array(rows, dtype=np.float64).reshape(n, d)
    return EmbeddingTable(tuple(items), target, np.zeros_like(target))
