"""Non-learned rankers: popularity, last item, and weighted sum."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from ..corpus import ACTIONS, Action, InteractionEvent

DAY = 86400.0


def popularity_rank(counts: np.ndarray, candidates: Sequence[int]) -> list[int]:
    """Candidates by descending count, ties by ascending index."""
    cand = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((cand, -np.asarray(counts)[cand]))
    return cand[order].tolist()


def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine of ``a`` against each row of ``b`` (0 where a norm vanishes)."""
    b = np.atleast_2d(b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    out = np.zeros(len(b))
    ok = denom > 0
    out[ok] = (b[ok] @ a) / denom[ok]
    return np.clip(out, -1.0, 1.0)


def last_item_score(vectors: np.ndarray, history: Sequence[int], query: int) -> float:
    if len(history) == 0:
        raise ValueError("empty history")
    return float(cosine(vectors[history[-1]], vectors[query][None])[0])


def last_item_scores(vectors: np.ndarray, history: Sequence[int], candidates: Sequence[int]) -> np.ndarray:
    if len(history) == 0:
        raise ValueError("empty history")
    return cosine(vectors[history[-1]], vectors[np.asarray(candidates, dtype=np.int64)])


@dataclass
class WeightedSumParams:
    """Exponential recency decay times a per-action weight.

    ``decay`` is per second.  This form is a stand-in for heuristics whose
    exact definition is not public.
    """

    decay: float = 0.0
    purchase: float = 1.0
    view: float = 1.0
    stream_video: float = 1.0
    stream_music: float = 1.0

    def __post_init__(self):
        vals = [getattr(self, f.name) for f in fields(self)]
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("weighted-sum parameters must be finite and non-negative")
        if not any(self.type_weight(a) > 0 for a in ACTIONS):
            raise ValueError("at least one action weight must be positive")

    def type_weight(self, action: Action) -> float:
        return getattr(self, Action(action).value)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "WeightedSumParams":
        known = {f.name for f in fields(cls)}
        kw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in known:
                raise ValueError(f"line {lineno}: bad entry {line!r}")
            kw[key] = float(val)
        return cls(**kw)

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "WeightedSumParams":
        """Map an unconstrained vector to valid parameters (log scale)."""
        theta = np.clip(np.asarray(theta, dtype=float), -30.0, 30.0)
        return cls(float(np.exp(theta[0]) / DAY), *(float(np.exp(t)) for t in theta[1:5]))


def _canonical(events: Sequence[InteractionEvent]) -> list[InteractionEvent]:
    return sorted(events, key=lambda e: (e.timestamp, e.item_id, e.action.value))


def weighted_user_vector(vectors: np.ndarray, events: Sequence[InteractionEvent], item_index: dict,
                         params: WeightedSumParams, now: float) -> np.ndarray:
    """Weighted average of the history's item vectors.

    Weights are ``type_weight * exp(-decay * (now - t))``, normalized in log
    space so very fast decays collapse onto the most recent events instead of
    underflowing.
    """
    evs = [e for e in _canonical(events) if e.item_id in item_index]
    if not evs:
        raise ValueError("empty history")
    tw = np.array([params.type_weight(e.action) for e in evs])
    age = np.array([now - e.timestamp for e in evs], dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(tw) - params.decay * age
    if not np.any(np.isfinite(logw)):
        return np.zeros(vectors.shape[1])
    w = np.exp(logw - np.max(logw))
    rows = vectors[[item_index[e.item_id] for e in evs]]
    return (w @ rows) / w.sum()


def weighted_sum_scores(vectors: np.ndarray, events, item_index: dict, params: WeightedSumParams,
                        now: float, candidates: Sequence[int]) -> np.ndarray:
    u = weighted_user_vector(vectors, events, item_index, params, now)
    return cosine(u, vectors[np.asarray(candidates, dtype=np.int64)])
