"""Interaction logs: ingest, vocabulary, temporal splits and synthetic data."""

from __future__ import annotations

import enum
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Action(str, enum.Enum):
    PURCHASE = "purchase"
    VIEW = "view"
    STREAM_VIDEO = "stream_video"
    STREAM_MUSIC = "stream_music"


ACTIONS = tuple(Action)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionEvent:
    user_id: str
    item_id: str
    action: Action
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise CorpusError("empty user or item id")
        if self.timestamp < 0:
            raise CorpusError(f"negative timestamp {self.timestamp}")
        if not isinstance(self.action, Action):
            object.__setattr__(self, "action", Action(self.action))


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    events: tuple[InteractionEvent, ...]

    def items(self) -> list[str]:
        return [e.item_id for e in self.events]


@dataclass(frozen=True)
class SplitInstance:
    """Observed (model input) and future (held-out positive) item indices."""

    user_id: str
    observed: tuple[int, ...]
    future: tuple[int, ...]


@dataclass(frozen=True)
class TestPair:
    """A user's training history and the new items seen after the boundary."""

    user_id: str
    history: UserHistory
    test_items: tuple[str, ...]


@dataclass
class Vocabulary:
    items: list[str]
    counts: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.index = {item: i for i, item in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise CorpusError("duplicate item ids in vocabulary")
        if self.counts.shape != (len(self.items),):
            raise CorpusError("counts do not align with items")
        if np.any(self.counts < 1):
            raise CorpusError("every vocabulary item needs a count >= 1")

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.index

    def encode(self, item_ids: Iterable[str]) -> list[int]:
        return [self.index[i] for i in item_ids]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.items[i] for i in indices]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (item, count) in enumerate(zip(self.items, self.counts)):
                fh.write(f"{i}\t{item}\t{int(count)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        items, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected index<TAB>item<TAB>count")
                try:
                    idx, count = int(parts[0]), int(parts[2])
                except ValueError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
                if idx != len(items):
                    raise CorpusError(f"{path}:{lineno}: index {idx} out of order")
                items.append(parts[1])
                counts.append(count)
        return cls(items, np.array(counts, dtype=np.int64))


def parse_line(line: str, lineno: int = 0) -> InteractionEvent | None:
    """Parse one log line; blank and ``#`` lines give ``None``."""
    line = line.rstrip("\r\n")
    if not line.strip() or line.startswith("#"):
        return None
    parts = line.split("\t")
    if len(parts) != 4:
        raise CorpusError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
    user, item, action, ts = parts
    try:
        return InteractionEvent(user, item, Action(action), int(ts))
    except ValueError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def read_events(path) -> list[InteractionEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            ev = parse_line(line, lineno)
            if ev is not None:
                events.append(ev)
    return events


def write_events(histories: Sequence[UserHistory], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h in histories:
            for e in h.events:
                fh.write(f"{e.user_id}\t{e.item_id}\t{e.action.value}\t{e.timestamp}\n")


def group_histories(events: Iterable[InteractionEvent]) -> list[UserHistory]:
    """Group by user (first-appearance order) and sort each stably by time."""
    by_user: OrderedDict[str, list[InteractionEvent]] = OrderedDict()
    for e in events:
        by_user.setdefault(e.user_id, []).append(e)
    return [UserHistory(u, tuple(sorted(evs, key=lambda e: e.timestamp))) for u, evs in by_user.items()]


def build_corpus(
    events: Iterable[InteractionEvent],
    min_user_events: int = 3,
    min_item_count: int = 2,
) -> tuple[Vocabulary, list[UserHistory]]:
    """Filter rare items, then short users, and index what is left.

    Vocabulary order is by first appearance in the surviving histories, so
    re-ingesting serialized output reproduces the same indices.
    """
    histories = group_histories(events)
    item_counts = Counter(e.item_id for h in histories for e in h.events)
    kept = []
    for h in histories:
        evs = tuple(e for e in h.events if item_counts[e.item_id] >= min_item_count)
        if len(evs) >= min_user_events:
            kept.append(UserHistory(h.user_id, evs))
    if not kept:
        raise CorpusError("no users left after filtering")
    counts: OrderedDict[str, int] = OrderedDict()
    for h in kept:
        for e in h.events:
            counts[e.item_id] = counts.get(e.item_id, 0) + 1
    vocab = Vocabulary(list(counts), np.fromiter(counts.values(), dtype=np.int64))
    return vocab, kept


def ingest(path, min_user_events: int = 3, min_item_count: int = 2) -> tuple[Vocabulary, list[UserHistory]]:
    try:
        events = read_events(path)
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from None
    return build_corpus(events, min_user_events, min_item_count)


def split_events(history: UserHistory, n_future: int):
    """Return ``(observed_events, future_items)`` or ``None`` when too short.

    The future part is the shortest suffix of events holding exactly
    ``n_future`` distinct items; observed events are the earlier ones whose
    item is not also in the future part.
    """
    if n_future < 1:
        raise ValueError("n_future must be >= 1")
    events = history.events
    distinct: dict[str, int] = {}
    cut = len(events)
    for pos in range(len(events) - 1, -1, -1):
        item = events[pos].item_id
        if item not in distinct:
            if len(distinct) == n_future:
                break
            distinct[item] = pos
        cut = pos
    if len(distinct) < n_future:
        return None
    future = set(distinct)
    observed = [e for e in events[:cut] if e.item_id not in future]
    if not observed:
        return None
    future_items = sorted(distinct, key=distinct.__getitem__, reverse=True)
    return observed, future_items


def temporal_split(history: UserHistory, n_future: int, vocab: Vocabulary) -> SplitInstance | None:
    """Hold out the last ``n_future`` distinct items; ``None`` means skip.

    Observed items are distinct, in order of first occurrence.
    """
    parts = split_events(history, n_future)
    if parts is None:
        return None
    observed, future = parts
    obs = list(dict.fromkeys(e.item_id for e in observed))
    return SplitInstance(history.user_id, tuple(vocab.encode(obs)), tuple(vocab.encode(future)))


def train_test_split(histories: Sequence[UserHistory], boundary: int) -> tuple[list[UserHistory], list[TestPair]]:
    """Half-open split at ``boundary``: training is ``t < boundary``.

    Test items are distinct post-boundary items the user never touched in
    training.  Users with no training events or no new test items are left
    out of the test pairs (but keep their training history).
    """
    train, pairs = [], []
    for h in histories:
        before = tuple(e for e in h.events if e.timestamp < boundary)
        after = [e.item_id for e in h.events if e.timestamp >= boundary]
        if before:
            train.append(UserHistory(h.user_id, before))
        seen = {e.item_id for e in before}
        test = [i for i in dict.fromkeys(after) if i not in seen]
        if before and test:
            pairs.append(TestPair(h.user_id, UserHistory(h.user_id, before), tuple(test)))
    return train, pairs


def time_quantile(histories: Sequence[UserHistory], q: float) -> int:
    ts = np.fromiter((e.timestamp for h in histories for e in h.events), dtype=np.int64)
    return int(np.quantile(ts, q, method="higher"))


def user_item_counts(histories: Sequence[UserHistory], vocab: Vocabulary) -> np.ndarray:
    """Number of distinct users that touched each vocabulary item."""
    counts = np.zeros(len(vocab), dtype=np.int64)
    for h in histories:
        for item in {e.item_id for e in h.events}:
            if item in vocab.index:
                counts[vocab.index[item]] += 1
    return counts


def synth_generate(
    n_users: int,
    n_items: int,
    n_clusters: int,
    events_per_user: int,
    concentration: float,
    seed: int,
    horizon: int = 120 * 86400,
) -> tuple[Vocabulary, list[UserHistory]]:
    """Planted-cluster interaction data.

    Items are split evenly into clusters.  Each user draws cluster
    preferences from a symmetric Dirichlet, then draws events i.i.d.: a
    cluster by preference and an item uniformly within it.  Timestamps are
    distinct sorted draws from ``[0, horizon)``.
    """
    for name, val in [("n_users", n_users), ("n_items", n_items), ("n_clusters", n_clusters),
                      ("events_per_user", events_per_user)]:
        if val < 1:
            raise CorpusError(f"{name} must be >= 1")
    if n_clusters > n_items:
        raise CorpusError("n_clusters cannot exceed n_items")
    if not concentration > 0:
        raise CorpusError("concentration must be positive")
    if events_per_user > horizon:
        raise CorpusError("horizon too short for distinct timestamps")
    rng = np.random.default_rng(seed)
    cluster_of = np.arange(n_items) * n_clusters // n_items
    members = [np.flatnonzero(cluster_of == c) for c in range(n_clusters)]
    width = len(str(n_items - 1))
    uwidth = len(str(n_users - 1))
    item_ids = [f"i{j:0{width}d}" for j in range(n_items)]
    actions = np.array(ACTIONS, dtype=object)
    histories = []
    for u in range(n_users):
        pref = rng.dirichlet(np.full(n_clusters, concentration))
        clusters = rng.choice(n_clusters, size=events_per_user, p=pref)
        offsets = rng.random(events_per_user)
        items = [members[c][int(o * len(members[c]))] for c, o in zip(clusters, offsets)]
        ts = np.sort(rng.choice(horizon, size=events_per_user, replace=False))
        acts = actions[rng.integers(len(ACTIONS), size=events_per_user)]
        uid = f"u{u:0{uwidth}d}"
        histories.append(UserHistory(uid, tuple(
            InteractionEvent(uid, item_ids[i], a, int(t)) for i, a, t in zip(items, acts, ts)
        )))
    counts = Counter(e.item_id for h in histories for e in h.events)
    present = [i for i in item_ids if counts[i] > 0]
    vocab = Vocabulary(present, np.array([counts[i] for i in present], dtype=np.int64))
    return vocab, histories


def cluster_labels(vocab: Vocabulary, n_items: int, n_clusters: int) -> np.ndarray:
    """Planted cluster of every vocabulary item from a ``synth_generate`` corpus."""
    return np.array([int(i[1:]) * n_clusters // n_items for i in vocab.items])
