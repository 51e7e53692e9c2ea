"""Smoothed item distributions and alias-method sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection

import numpy as np


class InfeasibleSample(ValueError):
    pass


@dataclass(frozen=True)
class SampledDistribution:
    gamma: float
    probs: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)


def build_distribution(counts, gamma: float) -> SampledDistribution:
    """Item probabilities proportional to ``counts ** gamma``.

    ``0 ** 0`` is taken as 1, so ``gamma == 0`` is uniform over every item
    including zero-count ones.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("counts must be a non-empty vector")
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise ValueError("counts must be finite and non-negative")
    if not np.any(counts > 0):
        raise ValueError("all counts are zero")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 0.0:
        weights = np.ones_like(counts)
    elif gamma == 1.0:
        weights = counts
    else:
        weights = np.power(counts, gamma)
    probs = weights / weights.sum()
    probs.setflags(write=False)
    return SampledDistribution(float(gamma), probs)


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray
    positive: np.ndarray  # bool mask of items with nonzero source probability

    def __len__(self) -> int:
        return len(self.prob)

    def reconstruct(self) -> np.ndarray:
        """Probabilities implied by the table."""
        n = len(self.prob)
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / n


def build_alias(dist: SampledDistribution | np.ndarray) -> AliasTable:
    """Vose's two-worklist construction, O(n)."""
    probs = dist.probs if isinstance(dist, SampledDistribution) else np.asarray(dist, dtype=float)
    n = len(probs)
    scaled = probs * n
    prob = np.zeros(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    top = int(np.argmax(probs))
    for i in large + small:
        if probs[i] > 0:
            prob[i] = 1.0
            alias[i] = i
        else:
            prob[i] = 0.0
            alias[i] = top
    positive = probs > 0
    for arr in (prob, alias, positive):
        arr.setflags(write=False)
    return AliasTable(prob, alias, positive)


def sample(table: AliasTable, rng: np.random.Generator) -> int:
    """One draw: a uniform column plus a uniform coin."""
    i = int(rng.integers(len(table.prob)))
    return i if rng.random() < table.prob[i] else int(table.alias[i])


def sample_many(table: AliasTable, size, rng: np.random.Generator) -> np.ndarray:
    cols = rng.integers(len(table.prob), size=size)
    coins = rng.random(size=size)
    return np.where(coins < table.prob[cols], cols, table.alias[cols])


def eligible_count(table: AliasTable, exclude: Collection[int]) -> int:
    n_excluded = sum(1 for e in set(exclude) if 0 <= e < len(table.prob) and table.positive[e])
    return int(np.count_nonzero(table.positive)) - n_excluded


def sample_negatives(
    table: AliasTable,
    k: int,
    exclude: Collection[int],
    rng: np.random.Generator,
    max_attempts: int | None = None,
) -> list[int]:
    """``k`` distinct indices outside ``exclude``, in draw order.

    Rejection sampling; a prefix of the result is itself a valid
    without-replacement sample, which lets callers nest pools.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return []
    exclude = set(int(e) for e in exclude)
    room = eligible_count(table, exclude)
    if k > room:
        raise InfeasibleSample(f"asked for {k} negatives but only {room} items are eligible")
    budget = max_attempts if max_attempts is not None else 1000 * k
    chosen: list[int] = []
    seen = set(exclude)
    attempts = 0
    while len(chosen) < k:
        batch = max(16, 2 * (k - len(chosen)))
        batch = min(batch, budget - attempts)
        if batch <= 0:
            raise InfeasibleSample(f"could not draw {k} negatives in {budget} attempts")
        for d in sample_many(table, batch, rng).tolist():
            attempts += 1
            if d not in seen:
                seen.add(d)
                chosen.append(d)
                if len(chosen) == k:
                    break
    return chosen
