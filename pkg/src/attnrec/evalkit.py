"""Sampled-candidate ranking evaluation.

Every user's test items are ranked among negatives drawn from a smoothed
item distribution, excluding anything the user ever touched.  All models
rank the same pools so per-user metrics can be compared pairwise.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import sampler

log = logging.getLogger(__name__)

DEFAULT_K_GRID = (1, 5, 10, 20, 50)


@dataclass(frozen=True)
class CandidatePool:
    user_id: str
    positives: tuple[int, ...]
    negatives: tuple[int, ...]
    gamma: float
    seed: int

    @property
    def candidates(self) -> tuple[int, ...]:
        return self.positives + self.negatives


@dataclass(frozen=True)
class EvalUser:
    """What the pool builder needs to know about one test user."""

    user_id: str
    positives: tuple[int, ...]
    interacted: frozenset[int]


Scorer = Callable[[CandidatePool], np.ndarray]


def build_pools(users: Sequence[EvalUser], dist: sampler.SampledDistribution, n_negatives: int,
                rng: np.random.Generator, seed: int = 0) -> tuple[list[CandidatePool], int]:
    """One pool per user; returns ``(pools, n_skipped)``."""
    grid = build_pool_grid(users, dist, [n_negatives], rng, seed)
    return grid[n_negatives], grid["skipped"]


def build_pool_grid(users: Sequence[EvalUser], dist: sampler.SampledDistribution,
                    n_negatives_grid: Sequence[int], rng: np.random.Generator, seed: int = 0) -> dict:
    """Nested pools: the pool with ``n`` negatives is a prefix of the largest.

    Users for whom the largest pool is infeasible are skipped at every size,
    so the settings stay paired.
    """
    if min(n_negatives_grid) < 1:
        raise ValueError("n_negatives must be >= 1")
    table = sampler.build_alias(dist)
    top = max(n_negatives_grid)
    out: dict = {n: [] for n in n_negatives_grid}
    skipped = 0
    for u in users:
        try:
            neg = sampler.sample_negatives(table, top, u.interacted | set(u.positives), rng)
        except sampler.InfeasibleSample:
            skipped += 1
            continue
        for n in n_negatives_grid:
            out[n].append(CandidatePool(u.user_id, tuple(u.positives), tuple(neg[:n]), dist.gamma, seed))
    if skipped:
        log.warning("skipped %d users with too few eligible negatives", skipped)
    out["skipped"] = skipped
    return out


def dcg_discount(position: np.ndarray) -> np.ndarray:
    return 1.0 / np.log2(np.asarray(position, dtype=float) + 1.0)


def ndcg(ranked: Sequence[int], relevant) -> float:
    """Binary-relevance NDCG over the full ranked list."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    pos = [p for p, item in enumerate(ranked, 1) if item in relevant]
    if not pos:
        return 0.0
    dcg = float(np.sum(dcg_discount(np.array(pos))))
    idcg = float(np.sum(dcg_discount(np.arange(1, len(relevant) + 1))))
    return dcg / idcg


def recall_at_k(ranked: Sequence[int], relevant, k: int) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    return len(relevant.intersection(ranked[:k])) / len(relevant)


def rank_candidates(scores: np.ndarray, candidates: Sequence[int]) -> list[int]:
    """Descending score, ties by ascending item index."""
    cand = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != cand.shape:
        raise ValueError("one score per candidate required")
    return cand[np.lexsort((cand, -scores))].tolist()


@dataclass
class ModelMetrics:
    ndcg: list[float]
    recall: dict[int, list[float]]

    @property
    def mean_ndcg(self) -> float:
        return float(np.mean(self.ndcg)) if self.ndcg else float("nan")

    def mean_recall(self, k: int) -> float:
        return float(np.mean(self.recall[k])) if self.recall[k] else float("nan")


@dataclass
class SettingResult:
    gamma: float
    n_negatives: int
    users: list[str]
    models: dict[str, ModelMetrics] = field(default_factory=dict)
    pool_hash: str = ""


@dataclass
class MetricsReport:
    k_grid: list[int]
    settings: list[SettingResult] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)
    skipped_users: int = 0
    significance: dict[str, float] = field(default_factory=dict)

    def setting(self, gamma: float, n_negatives: int) -> SettingResult:
        for s in self.settings:
            if s.gamma == gamma and s.n_negatives == n_negatives:
                return s
        raise KeyError((gamma, n_negatives))

    def to_dict(self) -> dict:
        out = {"k_grid": self.k_grid, "seeds": self.seeds, "skipped_users": self.skipped_users, "settings": [],
               "significance": self.significance}
        for s in self.settings:
            models = {}
            for name, m in s.models.items():
                models[name] = {
                    "mean_ndcg": m.mean_ndcg,
                    "mean_recall": {str(k): m.mean_recall(k) for k in self.k_grid},
                    "ndcg": m.ndcg,
                    "recall": {str(k): v for k, v in m.recall.items()},
                }
            out["settings"].append({"gamma": s.gamma, "n_negatives": s.n_negatives, "users": s.users,
                                    "models": models, "pool_hash": s.pool_hash})
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        rep = cls([int(k) for k in data["k_grid"]], seeds=dict(data["seeds"]),
                  skipped_users=int(data["skipped_users"]),
                  significance={k: float(v) for k, v in data.get("significance", {}).items()})
        for s in data["settings"]:
            res = SettingResult(float(s["gamma"]), int(s["n_negatives"]), list(s["users"]),
                                pool_hash=s.get("pool_hash", ""))
            for name, m in s["models"].items():
                res.models[name] = ModelMetrics(list(m["ndcg"]), {int(k): list(v) for k, v in m["recall"].items()})
            rep.settings.append(res)
        return rep


def pool_digest(pools: Sequence[CandidatePool]) -> str:
    """sha256 over every pool's user, positives and negatives, in order."""
    h = hashlib.sha256()
    for p in pools:
        h.update(f"{p.user_id}|{p.positives}|{p.negatives}\n".encode())
    return h.hexdigest()


def evaluate_pools(models: Mapping[str, Scorer], pools: Sequence[CandidatePool],
                   k_grid: Sequence[int] = DEFAULT_K_GRID) -> dict[str, ModelMetrics]:
    out = {}
    for name, scorer in models.items():
        nd, rec = [], {k: [] for k in k_grid}
        for pool in pools:
            ranked = rank_candidates(scorer(pool), pool.candidates)
            nd.append(ndcg(ranked, pool.positives))
            for k in k_grid:
                rec[k].append(recall_at_k(ranked, pool.positives, k))
        out[name] = ModelMetrics(nd, rec)
    return out


def evaluate(models: Mapping[str, Scorer], pool_sets: Mapping[tuple[float, int], Sequence[CandidatePool]],
             k_grid: Sequence[int] = DEFAULT_K_GRID, seeds: Mapping[str, int] | None = None) -> MetricsReport:
    """Run every model over every ``(gamma, n_negatives)`` pool set."""
    report = MetricsReport(list(k_grid), seeds=dict(seeds or {}))
    for (gamma, n_neg), pools in pool_sets.items():
        res = SettingResult(float(gamma), int(n_neg), [p.user_id for p in pools], pool_hash=pool_digest(pools))
        res.models = evaluate_pools(models, pools, k_grid)
        report.settings.append(res)
    return report


def paired_significance(a: Sequence[float], b: Sequence[float], n_resamples: int = 10000,
                        seed: int = 0) -> float:
    """Two-sided paired bootstrap p-value for ``mean(a - b) == 0``.

    The bootstrap distribution of the mean difference is centred on zero
    and compared with the observed mean difference.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if diff.ndim != 1 or diff.size == 0:
        raise ValueError("need two aligned, non-empty metric vectors")
    rng = np.random.default_rng(seed)
    observed = diff.mean()
    n = diff.size
    exceed = 0
    chunk = max(1, min(n_resamples, 2_000_000 // n))
    done = 0
    while done < n_resamples:
        m = min(chunk, n_resamples - done)
        means = diff[rng.integers(n, size=(m, n))].mean(axis=1)
        exceed += int(np.sum(np.abs(means - observed) >= abs(observed) - 1e-15))
        done += m
    return (exceed + 1) / (n_resamples + 1)


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else "nan"


def emit_report(report: MetricsReport, out_dir, depth_models: Mapping[str, int] | None = None) -> list[Path]:
    """Write ``report.json`` plus one CSV per figure.

    ``ndcg.csv`` has a row per model and setting; ``recall.csv`` a row per
    model, setting and K; ``depth.csv`` (when ``depth_models`` maps model
    names to depths) the NDCG of each depth variant.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out_dir / "report.json"
    p.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(p)
    header = ["model", "gamma", "n_negatives", "metric", "K", "value"]

    def write(name, rows):
        path = out_dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths.append(path)

    ndcg_rows, recall_rows, depth_rows = [], [], []
    for s in report.settings:
        for name, m in s.models.items():
            ndcg_rows.append([name, s.gamma, s.n_negatives, "ndcg", "", _fmt(m.mean_ndcg)])
            for k in report.k_grid:
                recall_rows.append([name, s.gamma, s.n_negatives, "recall", k, _fmt(m.mean_recall(k))])
            if depth_models and name in depth_models:
                depth_rows.append([name, s.gamma, s.n_negatives, "ndcg", depth_models[name], _fmt(m.mean_ndcg)])
    write("ndcg.csv", ndcg_rows)
    write("recall.csv", recall_rows)
    if depth_models:
        write("depth.csv", depth_rows)
    return paths
