"""Minibatch training loop shared by the attention model and the DAN baseline.

Adam with global-norm clipping, negatives resampled per minibatch from the
smoothed item distribution, and a plateau schedule on the holdout loss: the
learning rate is multiplied by ``decay`` after ``patience`` assessments
without improvement, and training stops after ``max_reductions`` decays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import sampler
from .attncf import canonical_history
from .corpus import SplitInstance
from .numkit import AdamState, NumericError, Params, adam_step, check_finite, clip_global_norm

log = logging.getLogger(__name__)


class Model(Protocol):
    name: str

    def init_params(self, rng: np.random.Generator) -> Params: ...

    def logits(self, t: Params, Xh, mask, Xq): ...

    def backward(self, t: Params, cache, dlogits) -> Params: ...


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.002
    patience: int = 5
    decay: float = 0.8
    max_reductions: int = 20
    eval_period: int | None = None
    n_future: int = 10
    n_negatives: int = 100
    gamma: float = 0.75
    seed: int = 0
    clip_norm: float = 10.0
    max_history: int = 200
    exclude_observed: bool = False
    fixed_negatives: bool = False
    max_updates: int | None = None

    def __post_init__(self):
        for name in ("batch_size", "patience", "max_reductions", "n_future", "n_negatives", "max_history"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.eval_period is not None and self.eval_period < 1:
            raise ValueError("eval_period must be positive")

    def resolved_eval_period(self, n_train: int) -> int:
        if self.eval_period is not None:
            return self.eval_period
        return max(50, n_train // self.batch_size // 10)


@dataclass
class TrainResult:
    params: Params
    log: list[dict] = field(default_factory=list)
    best_holdout: float = float("inf")
    initial_holdout: float = float("nan")
    updates: int = 0

    def lr_reductions(self) -> list[dict]:
        return [e for e in self.log if e["event"] == "lr_reduction"]


@dataclass
class Batch:
    Xh: np.ndarray
    mask: np.ndarray
    Xq: np.ndarray
    labels: np.ndarray
    weights: np.ndarray


def balanced_loss(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Per-row weighted logistic loss and its derivative w.r.t. the logits."""
    nll = np.where(labels > 0, np.logaddexp(0.0, -logits), np.logaddexp(0.0, logits))
    losses = np.sum(weights * nll, axis=-1)
    s = 1.0 / (1.0 + np.exp(-logits))
    return losses, weights * (s - labels)


def make_batch(instances: Sequence[SplitInstance], negatives: Sequence[Sequence[int]],
               vectors: np.ndarray, max_history: int) -> Batch:
    """Pad a list of instances (and their negatives) into dense arrays."""
    hists = [canonical_history(inst.observed, max_history) for inst in instances]
    B = len(instances)
    L = max(len(h) for h in hists)
    Q = max(len(inst.future) + len(neg) for inst, neg in zip(instances, negatives))
    d = vectors.shape[1]
    dt = vectors.dtype
    Xh = np.zeros((B, L, d), dtype=dt)
    mask = np.zeros((B, L), dtype=bool)
    Xq = np.zeros((B, Q, d), dtype=dt)
    labels = np.zeros((B, Q), dtype=dt)
    weights = np.zeros((B, Q), dtype=dt)
    for b, (inst, hist, neg) in enumerate(zip(instances, hists, negatives)):
        Xh[b, :len(hist)] = vectors[hist]
        mask[b, :len(hist)] = True
        nf, nn = len(inst.future), len(neg)
        Xq[b, :nf + nn] = vectors[list(inst.future) + list(neg)]
        labels[b, :nf] = 1
        weights[b, :nf] = dt.type(1) / (2 * nf)
        weights[b, nf:nf + nn] = dt.type(1) / (2 * nn)
    return Batch(Xh, mask, Xq, labels, weights)


def batch_loss(model: Model, t: Params, batch: Batch, with_grad: bool = True):
    """Mean balanced loss over the batch (and gradients of that mean).

    The loss keeps the dtype of the batch so extended-precision checks work.
    """
    logits, cache = model.logits(t, batch.Xh, batch.mask, batch.Xq)
    losses, dlogits = balanced_loss(logits, batch.labels, batch.weights)
    B = len(losses)
    loss = np.mean(losses)
    if not with_grad:
        return loss, None
    return loss, model.backward(t, cache, dlogits / B)


def draw_negatives(inst: SplitInstance, table: sampler.AliasTable, k: int,
                   exclude_observed: bool, rng: np.random.Generator) -> list[int]:
    exclude = set(inst.future)
    if exclude_observed:
        exclude |= set(inst.observed)
    return sampler.sample_negatives(table, k, exclude, rng)


def holdout_split(instances: Sequence[SplitInstance], rng: np.random.Generator,
                  fraction: float = 0.05, cap: int = 2000):
    """Split off a small holdout set of users for early stopping."""
    n = len(instances)
    if n < 2:
        raise ValueError("need at least two instances to form a holdout set")
    n_hold = min(cap, max(1, int(round(fraction * n))), n - 1)
    perm = rng.permutation(n)
    hold = sorted(perm[:n_hold].tolist())
    keep = sorted(perm[n_hold:].tolist())
    return [instances[i] for i in keep], [instances[i] for i in hold]


def train(
    model: Model,
    train_instances: Sequence[SplitInstance],
    holdout_instances: Sequence[SplitInstance],
    vectors: np.ndarray,
    item_counts: np.ndarray,
    config: TrainConfig,
    objective: Callable[[Params], float] | None = None,
    on_event: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit ``model`` and return the parameters with the best holdout loss.

    ``objective`` replaces the holdout loss (used to force plateaus in tests).
    """
    if not train_instances or not holdout_instances:
        raise ValueError("need at least one training and one holdout instance")
    vectors = np.asarray(vectors)
    rng = np.random.default_rng(config.seed)
    init_rng, neg_rng, order_rng = rng.spawn(3)
    params = model.init_params(init_rng)
    table = sampler.build_alias(sampler.build_distribution(item_counts, config.gamma))

    hold_rng = np.random.default_rng([config.seed, 1])
    hold_negs = [draw_negatives(inst, table, config.n_negatives, config.exclude_observed, hold_rng)
                 for inst in holdout_instances]
    hold_batches = [
        make_batch(holdout_instances[i:i + 256], hold_negs[i:i + 256], vectors, config.max_history)
        for i in range(0, len(holdout_instances), 256)
    ]

    def holdout_loss(t: Params) -> float:
        total = 0.0
        for b in hold_batches:
            loss, _ = batch_loss(model, t, b, with_grad=False)
            total += float(loss) * len(b.labels)
        return total / len(holdout_instances)

    objective = objective or holdout_loss
    fixed = None
    if config.fixed_negatives:
        fixed = [draw_negatives(inst, table, config.n_negatives, config.exclude_observed, neg_rng)
                 for inst in train_instances]

    eval_period = config.resolved_eval_period(len(train_instances))
    opt = AdamState(lr=config.lr)
    result = TrainResult(params={k: v.copy() for k, v in params.items()})

    def emit(event: dict) -> None:
        result.log.append(event)
        if on_event is not None:
            on_event(event)

    best = objective(params)
    result.initial_holdout = result.best_holdout = best
    emit({"event": "eval", "update": 0, "holdout_loss": best, "lr": opt.lr})
    bad = reductions = updates = 0
    done = False
    n = len(train_instances)
    while not done:
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            insts = [train_instances[i] for i in idx]
            if fixed is not None:
                negs = [fixed[i] for i in idx]
            else:
                negs = [draw_negatives(inst, table, config.n_negatives, config.exclude_observed, neg_rng)
                        for inst in insts]
            loss, grads = batch_loss(model, params, make_batch(insts, negs, vectors, config.max_history))
            loss = float(loss)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at update {updates}")
            adam_step(opt, params, clip_global_norm(grads, config.clip_norm))
            updates += 1
            if updates % eval_period == 0:
                check_finite(params)
                value = objective(params)
                emit({"event": "eval", "update": updates, "holdout_loss": value, "lr": opt.lr,
                      "train_loss": loss})
                if value < best:
                    best, bad = value, 0
                    result.params = {k: v.copy() for k, v in params.items()}
                    result.best_holdout = best
                else:
                    bad += 1
                    if bad >= config.patience:
                        bad = 0
                        reductions += 1
                        opt.lr = config.lr * config.decay ** reductions
                        emit({"event": "lr_reduction", "update": updates, "reductions": reductions,
                              "lr": opt.lr})
                        if reductions >= config.max_reductions:
                            done = True
            if config.max_updates is not None and updates >= config.max_updates:
                done = True
            if done:
                break
    result.updates = updates
    emit({"event": "done", "update": updates, "best_holdout_loss": result.best_holdout})
    log.debug("training finished after %d updates, best holdout %.5f", updates, result.best_holdout)
    return result
