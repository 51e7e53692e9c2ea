"""Fixtures and independent oracles shared by several test modules."""

import math
from collections import Counter

import numpy as np

from attnrec import corpus, embed
from attnrec.corpus import Action, InteractionEvent, UserHistory
from attnrec.evalkit import CandidatePool


def two_clique_corpus(n_users=200, length=20, seed=0):
    """Users who only ever touch one of two disjoint 5-item groups."""
    rng = np.random.default_rng(seed)
    items = [f"a{k}" for k in range(5)] + [f"b{k}" for k in range(5)]
    hists = []
    for u in range(n_users):
        group = items[:5] if u % 2 == 0 else items[5:]
        picks = rng.choice(5, size=length)
        uid = f"u{u}"
        hists.append(UserHistory(uid, tuple(InteractionEvent(uid, group[p], Action.VIEW, t)
                                            for t, p in enumerate(picks))))
    counts = Counter(e.item_id for h in hists for e in h.events)
    vocab = corpus.Vocabulary(items, np.array([counts[i] for i in items]))
    return vocab, hists


def clique_margin(table):
    """Mean intra-group cosine minus mean inter-group cosine."""
    cos = embed.cosine_matrix(np.asarray(table.vectors))
    group = np.array([0] * 5 + [1] * 5)
    same = group[:, None] == group[None, :]
    off_diag = ~np.eye(10, dtype=bool)
    return cos[same & off_diag].mean() - cos[~same].mean()


def _brute_order(scores, candidates):
    return sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))


def brute_ndcg(scores, candidates, relevant):
    order = _brute_order(scores, candidates)
    dcg = sum(1 / math.log2(r + 2) for r, i in enumerate(order) if candidates[i] in relevant)
    ideal = sum(1 / math.log2(r + 2) for r in range(len(relevant)))
    return dcg / ideal


def brute_recall(scores, candidates, relevant, k):
    order = _brute_order(scores, candidates)
    return sum(candidates[i] in relevant for i in order[:k]) / len(relevant)


def ten_user_fixture(seed=0):
    """Ten pools of mixed sizes with coarse integer scores, so ties occur."""
    rng = np.random.default_rng(seed)
    pools, scores = [], {}
    for u in range(10):
        items = rng.choice(200, size=rng.integers(5, 30), replace=False).tolist()
        n_pos = int(rng.integers(1, min(6, len(items))))
        pool = CandidatePool(f"u{u}", tuple(items[:n_pos]), tuple(items[n_pos:]), 1.0, seed)
        scores[pool.user_id] = rng.integers(0, 4, len(items)).astype(float)
        pools.append(pool)
    return pools, scores
