"""Stage functions behind the command-line interface.

Every stage reads its inputs from and writes its outputs to one run
directory.  Artifacts other than the timestamped event log are byte-for-byte
reproducible for a fixed configuration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import attncf, corpus, embed, evalkit, sampler, trainer
from .baselines import cmaes, dan, heuristics
from .config import RunConfig
from .corpus import CorpusError

log = logging.getLogger(__name__)


class DataError(ValueError):
    """A stage's input artifact is missing or inconsistent."""


class Layout:
    """Fixed file names inside a run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.data = self.root / "data"
        self.interactions = self.data / "interactions.tsv"
        self.events = self.data / "events.tsv"
        self.vocab = self.data / "vocab.tsv"
        self.embeddings = self.root / "embeddings.txt"
        self.models = self.root / "models"
        self.report = self.root / "report"
        self.logs = self.root / "logs"
        self.manifest = self.root / "manifest.json"
        self.partial = self.root / ".partial"
        self.config = self.root / "config.ini"

    def checkpoint(self, name: str) -> Path:
        suffix = ".txt" if name == "weighted_sum" else ".ckpt"
        return self.models / f"{name}{suffix}"

    def train_log(self, name: str) -> Path:
        return self.models / f"{name}.log.jsonl"


# -- event logging -------------------------------------------------------------

class EventLog:
    """JSON-lines events (timestamp, stage, payload) to a file and a logger."""

    def __init__(self, path: Path | None, stage: str):
        self.path, self.stage = path, stage
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, event: str, **fields) -> None:
        rec = {"time": round(time.time(), 3), "stage": self.stage, "event": event, **fields}
        line = json.dumps(rec, sort_keys=True, default=_jsonable)
        log.info(line)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


# -- manifest ------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_checksums(layout: Layout) -> dict[str, str]:
    """Checksums of every artifact except logs, the manifest and markers."""
    out = {}
    skip = {layout.manifest, layout.partial}
    for p in sorted(layout.root.rglob("*")):
        if p.is_file() and p not in skip and layout.logs not in p.parents:
            out[p.relative_to(layout.root).as_posix()] = sha256_file(p)
    return out


def write_manifest(cfg: RunConfig, layout: Layout) -> dict:
    manifest = {
        "config_hash": cfg.digest(),
        "seeds": {"run": cfg.run.seed, "embed": cfg.run.seed, "train": cfg.run.seed,
                  "pools": cfg.run.seed, "cma_es": cfg.run.seed},
        "artifacts": artifact_checksums(layout),
    }
    layout.manifest.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# -- dataset -------------------------------------------------------------------

@dataclass
class Dataset:
    vocab: corpus.Vocabulary
    histories: list[corpus.UserHistory]
    boundary: int
    train: list[corpus.UserHistory]
    pairs: list[corpus.TestPair]
    counts: np.ndarray  # distinct training users per item

    def history_index(self, history: corpus.UserHistory) -> list[int]:
        """Distinct item indices ordered by most recent occurrence (oldest first)."""
        items = list(dict.fromkeys(reversed(history.items())))[::-1]
        return self.vocab.encode(items)


def load_dataset(cfg: RunConfig, layout: Layout) -> Dataset:
    if not (layout.events.exists() and layout.vocab.exists()):
        raise DataError(f"{layout.data}: no ingested corpus, run 'ingest' first")
    vocab = corpus.Vocabulary.load(layout.vocab)
    histories = corpus.group_histories(corpus.read_events(layout.events))
    missing = {e.item_id for h in histories for e in h.events} - set(vocab.index)
    if missing:
        raise DataError(f"{len(missing)} event items missing from {layout.vocab}")
    if cfg.corpus.boundary >= 0:
        boundary = cfg.corpus.boundary
    else:
        boundary = corpus.time_quantile(histories, 1.0 - cfg.corpus.test_fraction)
    train, pairs = corpus.train_test_split(histories, boundary)
    if not train:
        raise DataError("no training events before the split boundary")
    counts = corpus.user_item_counts(train, vocab)
    return Dataset(vocab, histories, boundary, train, pairs, counts)


def training_instances(cfg: RunConfig, data: Dataset):
    """Temporal instances from training histories, split into train and holdout users."""
    insts = [x for x in (corpus.temporal_split(h, cfg.model.n_future, data.vocab) for h in data.train)
             if x is not None]
    if len(insts) < 2:
        raise DataError(f"only {len(insts)} users have more than {cfg.model.n_future} distinct items")
    rng = np.random.default_rng([cfg.run.seed, 2])
    return trainer.holdout_split(insts, rng, cfg.model.holdout_fraction, cfg.model.holdout_cap)


def train_config(cfg: RunConfig) -> trainer.TrainConfig:
    m = cfg.model
    return trainer.TrainConfig(
        batch_size=m.batch_size, lr=m.lr, patience=m.patience, decay=m.decay,
        max_reductions=m.max_reductions, eval_period=m.eval_period or None, n_future=m.n_future,
        n_negatives=m.n_negatives, gamma=m.gamma, seed=cfg.run.seed, max_history=m.max_history,
        exclude_observed=m.exclude_observed, fixed_negatives=m.fixed_negatives,
        max_updates=m.max_updates or None,
    )


def load_vectors(layout: Layout, vocab: corpus.Vocabulary) -> np.ndarray:
    if not layout.embeddings.exists():
        raise DataError(f"{layout.embeddings}: missing, run 'embed' first")
    table = embed.load_embeddings(layout.embeddings)
    if list(table.items) != list(vocab.items):
        raise DataError("embedding items do not match the vocabulary")
    return np.asarray(table.vectors)


# -- stages --------------------------------------------------------------------

def stage_synth(cfg: RunConfig, layout: Layout, emit: EventLog) -> Path:
    s = cfg.synth
    _, histories = corpus.synth_generate(s.n_users, s.n_items, s.n_clusters, s.events_per_user,
                                         s.concentration, cfg.run.seed)
    layout.data.mkdir(parents=True, exist_ok=True)
    corpus.write_events(histories, layout.interactions)
    emit("synth", events=sum(len(h.events) for h in histories), users=len(histories))
    return layout.interactions


def source_path(cfg: RunConfig, layout: Layout) -> Path:
    if cfg.corpus.source == "synth":
        return layout.interactions
    return Path(cfg.corpus.path)


def stage_ingest(cfg: RunConfig, layout: Layout, emit: EventLog) -> None:
    src = source_path(cfg, layout)
    if not src.exists():
        hint = ", run 'synth' first" if cfg.corpus.source == "synth" else ""
        raise DataError(f"{src}: interaction log not found{hint}")
    vocab, histories = corpus.ingest(src, cfg.corpus.min_user_events, cfg.corpus.min_item_count)
    layout.data.mkdir(parents=True, exist_ok=True)
    corpus.write_events(histories, layout.events)
    vocab.save(layout.vocab)
    emit("ingest", users=len(histories), items=len(vocab))


def stage_embed(cfg: RunConfig, layout: Layout, emit: EventLog) -> None:
    data = load_dataset(cfg, layout)
    e = cfg.embed
    sg = embed.SkipGramConfig(dim=e.dim, window=e.window, negatives=e.negatives, gamma=e.gamma,
                              lr=e.lr, epochs=e.epochs, seed=cfg.run.seed)
    table = embed.train_embeddings(data.train, data.vocab, sg, counts=data.counts)
    embed.save_embeddings(table, layout.embeddings)
    emit("embed", items=len(table), dim=table.dim)


def _model_variants(cfg: RunConfig) -> dict[str, int]:
    """Attention model names and depths: the main one plus any ablation depths."""
    out = {"attn": cfg.model.depth}
    for k in cfg.eval.depths:
        out.setdefault(f"attn_K{k}", k)
    return out


def stage_train(cfg: RunConfig, layout: Layout, emit: EventLog, model: str,
                depth: int | None = None, name: str | None = None) -> Path:
    if model not in ("attn", "dan"):
        raise ValueError(f"unknown model {model!r}")
    data = load_dataset(cfg, layout)
    vectors = load_vectors(layout, data.vocab)
    train_set, holdout = training_instances(cfg, data)
    tc = train_config(cfg)
    name = name or model
    layout.models.mkdir(parents=True, exist_ok=True)
    log_path = layout.train_log(name)
    events = []

    def on_event(ev: dict) -> None:
        events.append(ev)
        emit(ev["event"], model=name, **{k: v for k, v in ev.items() if k != "event"})

    if model == "attn":
        depth = depth or cfg.model.depth
        params, _ = attncf.train(train_set, holdout, vectors, data.counts, tc, d_hidden=cfg.model.hidden,
                                 depth=depth, on_event=on_event)
        ckpt = layout.checkpoint(name)
        attncf.save_params(params, ckpt)
    else:
        params, _ = dan.dan_train(train_set, holdout, vectors, data.counts, tc, hidden=cfg.dan.hidden,
                                  n_hidden=cfg.dan.layers, on_event=on_event)
        ckpt = layout.checkpoint(name)
        dan.save_dan(params, ckpt)
    with open(log_path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
    return ckpt


def ws_holdout_objective(cfg: RunConfig, data: Dataset, vectors: np.ndarray) -> Callable[[np.ndarray], float]:
    """Negative mean NDCG of the weighted-sum ranker on the training holdout users."""
    _, holdout = training_instances(cfg, data)
    by_user = {h.user_id: h for h in data.train}
    table = sampler.build_alias(sampler.build_distribution(data.counts, 1.0))
    rng = np.random.default_rng([cfg.run.seed, 4])
    cases = []
    for inst in holdout:
        hist = by_user[inst.user_id]
        observed, future = corpus.split_events(hist, cfg.model.n_future)
        touched = set(data.vocab.encode(hist.items()))
        try:
            neg = sampler.sample_negatives(table, cfg.ws.n_negatives, touched, rng)
        except sampler.InfeasibleSample:
            continue
        pos = data.vocab.encode(future)
        cases.append((observed, pos, pos + neg, float(observed[-1].timestamp)))
    if not cases:
        raise DataError("no holdout users available for weighted-sum tuning")

    def objective(theta: np.ndarray) -> float:
        params = heuristics.WeightedSumParams.from_vector(theta)
        total = 0.0
        for observed, pos, cand, now in cases:
            scores = heuristics.weighted_sum_scores(vectors, observed, data.vocab.index, params, now, cand)
            total += evalkit.ndcg(evalkit.rank_candidates(scores, cand), pos)
        return -total / len(cases)

    return objective


def stage_tune_ws(cfg: RunConfig, layout: Layout, emit: EventLog) -> heuristics.WeightedSumParams:
    data = load_dataset(cfg, layout)
    vectors = load_vectors(layout, data.vocab)
    objective = ws_holdout_objective(cfg, data, vectors)
    res = cmaes.cma_es_optimize(objective, 5, x0=np.zeros(5), sigma0=cfg.ws.sigma,
                                population=cfg.ws.population or None, iterations=cfg.ws.iterations,
                                seed=cfg.run.seed)
    params = heuristics.WeightedSumParams.from_vector(res.x)
    layout.models.mkdir(parents=True, exist_ok=True)
    layout.checkpoint("weighted_sum").write_text(params.to_text(), encoding="utf-8")
    trace = {"event": "cma_es", "initial_objective": res.x0_f, "objective": res.f,
             "evaluations": res.evaluations, "best_trace": res.best_trace}
    layout.train_log("weighted_sum").write_text(json.dumps(trace, sort_keys=True) + "\n", encoding="utf-8")
    emit("tune_ws", initial_objective=res.x0_f, objective=res.f, evaluations=res.evaluations)
    return params


def sphere_self_test(seed: int = 0) -> tuple[float, bool]:
    """CMA-ES on a shifted 5-dim sphere; returns the distance to the optimum."""
    target = np.linspace(-1.0, 1.0, 5)
    res = cmaes.cma_es_optimize(lambda x: float(np.sum((x - target) ** 2)), 5, iterations=100, seed=seed)
    dist = float(np.linalg.norm(res.x - target))
    return dist, dist < 1e-3


def eval_users(data: Dataset) -> list[evalkit.EvalUser]:
    users = []
    for p in data.pairs:
        interacted = frozenset(data.vocab.encode(p.history.items()))
        users.append(evalkit.EvalUser(p.user_id, tuple(data.vocab.encode(p.test_items)), interacted))
    return users


def build_scorers(cfg: RunConfig, layout: Layout, data: Dataset, vectors: np.ndarray, names) -> dict:
    d = vectors.shape[1]
    hist = {p.user_id: data.history_index(p.history) for p in data.pairs}
    events = {p.user_id: p.history.events for p in data.pairs}
    max_h = cfg.model.max_history
    scorers = {}
    for name in names:
        path = layout.checkpoint(name)
        if name.startswith("attn"):
            if not path.exists():
                raise DataError(f"{path}: missing, run 'train --model attn' first")
            params = attncf.load_params(path, expect_d=d)
            scorers[name] = (lambda pool, P=params:
                             attncf.score_batch(P, hist[pool.user_id], pool.candidates, vectors, max_h))
        elif name == "dan":
            if not path.exists():
                raise DataError(f"{path}: missing, run 'train --model dan' first")
            params = dan.load_dan(path, expect_d=d)
            scorers[name] = (lambda pool, P=params:
                             dan.dan_score_batch(P, hist[pool.user_id], pool.candidates, vectors, max_h))
        elif name == "weighted_sum":
            if not path.exists():
                raise DataError(f"{path}: missing, run 'tune-ws' first")
            try:
                ws = heuristics.WeightedSumParams.from_text(path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from None
            now = float(data.boundary)
            scorers[name] = (lambda pool, P=ws:
                             heuristics.weighted_sum_scores(vectors, events[pool.user_id], data.vocab.index,
                                                            P, now, pool.candidates))
        elif name == "popularity":
            # higher count first; ties fall to ascending index in rank_candidates
            scorers[name] = lambda pool: data.counts[list(pool.candidates)].astype(float)
        elif name == "last_item":
            scorers[name] = lambda pool: heuristics.last_item_scores(vectors, hist[pool.user_id], pool.candidates)
        else:
            raise ValueError(f"unknown model {name!r}")
    return scorers


def stage_evaluate(cfg: RunConfig, layout: Layout, emit: EventLog) -> evalkit.MetricsReport:
    data = load_dataset(cfg, layout)
    vectors = load_vectors(layout, data.vocab)
    names = list(cfg.eval.models)
    depth_models = None
    if cfg.eval.depths:
        variants = _model_variants(cfg)
        depth_models = variants
        names += [n for n in variants if n not in names]
    scorers = build_scorers(cfg, layout, data, vectors, names)
    users = eval_users(data)
    if not users:
        raise DataError("no users with test items after the split boundary")
    pool_sets, skipped = {}, 0
    for gi, gamma in enumerate(cfg.eval.gammas):
        dist = sampler.build_distribution(data.counts, gamma)
        grid = evalkit.build_pool_grid(users, dist, cfg.eval.n_negatives, np.random.default_rng([cfg.run.seed, 3, gi]),
                                       seed=cfg.run.seed)
        skipped = max(skipped, grid.pop("skipped"))
        for n in cfg.eval.n_negatives:
            pool_sets[(float(gamma), int(n))] = grid[n]
    report = evalkit.evaluate(scorers, pool_sets, cfg.eval.k_grid, seeds={"run": cfg.run.seed})
    report.skipped_users = skipped
    if "attn" in scorers:
        for s in report.settings:
            for other in scorers:
                if other == "attn" or len(s.users) == 0:
                    continue
                p = evalkit.paired_significance(s.models["attn"].ndcg, s.models[other].ndcg,
                                                cfg.eval.bootstrap, seed=cfg.run.seed)
                report.significance[f"{s.gamma}/{s.n_negatives}/attn-vs-{other}"] = p
    evalkit.emit_report(report, layout.report, depth_models)
    for s in report.settings:
        emit("evaluate", gamma=s.gamma, n_negatives=s.n_negatives,
             mean_ndcg={k: m.mean_ndcg for k, m in s.models.items()})
    return report


def stage_pipeline(cfg: RunConfig, layout: Layout, emit: EventLog) -> evalkit.MetricsReport:
    if cfg.corpus.source == "synth":
        stage_synth(cfg, layout, emit)
    stage_ingest(cfg, layout, emit)
    stage_embed(cfg, layout, emit)
    models = set(cfg.eval.models)
    if "attn" in models or cfg.eval.depths:
        trained: dict[int, str] = {}
        for name, depth in _model_variants(cfg).items():
            if depth in trained:
                # training depends only on the config and depth, so an equal depth gives equal weights
                src = trained[depth]
                shutil.copyfile(layout.checkpoint(src), layout.checkpoint(name))
                shutil.copyfile(layout.train_log(src), layout.train_log(name))
                emit("reuse", model=name, source=src)
            else:
                stage_train(cfg, layout, emit, "attn", depth=depth, name=name)
                trained[depth] = name
    if "dan" in models:
        stage_train(cfg, layout, emit, "dan")
    if "weighted_sum" in models:
        stage_tune_ws(cfg, layout, emit)
    return stage_evaluate(cfg, layout, emit)


__all__ = [
    "CorpusError", "DataError", "Dataset", "EventLog", "Layout", "artifact_checksums", "load_dataset",
    "sphere_self_test", "stage_embed", "stage_evaluate", "stage_ingest", "stage_pipeline", "stage_synth",
    "stage_train", "stage_tune_ws", "training_instances", "write_manifest",
]
