"""Finite-difference suites for the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import embed
from .attncf import AttentionModel
from .baselines.dan import DanModel
from .corpus import SplitInstance
from .numkit import GradCheckReport, Params, finite_diff_check
from .trainer import Batch, batch_loss, make_batch


@dataclass
class SuiteResult:
    name: str
    reports: list[GradCheckReport]

    @property
    def max_rel_error(self) -> float:
        return max(r.max_rel_error for r in self.reports)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def random_case(rng: np.random.Generator, d: int, n_items: int = 40, hist_len: int = 5,
                n_future: int = 3, n_negatives: int = 7):
    """Unit-scale random embeddings plus one instance with its negatives."""
    vectors = rng.standard_normal((n_items, d)) / np.sqrt(d)
    perm = rng.permutation(n_items)
    hist = perm[:hist_len]
    fut = perm[hist_len:hist_len + n_future]
    neg = perm[hist_len + n_future:hist_len + n_future + n_negatives]
    inst = SplitInstance("u", tuple(int(i) for i in hist), tuple(int(i) for i in fut))
    return vectors, inst, [int(i) for i in neg]


def _cast(batch: Batch, dtype) -> Batch:
    return Batch(batch.Xh.astype(dtype), batch.mask, batch.Xq.astype(dtype),
                 batch.labels.astype(dtype), batch.weights.astype(dtype))


def check_model(model, params: Params, batch: Batch, rng: np.random.Generator, n_coords: int = 200,
                tolerance: float = 1e-5, epsilon: float = 1e-5) -> GradCheckReport:
    by_dtype = {np.dtype(np.float64): batch, np.dtype(np.longdouble): _cast(batch, np.longdouble)}

    def loss_fn(t):
        return batch_loss(model, t, by_dtype[next(iter(t.values())).dtype])

    return finite_diff_check(loss_fn, params, epsilon=epsilon, tolerance=tolerance, n_coords=n_coords,
                             rng=rng, numeric_dtype=np.longdouble)


def _perturbed(params: Params, rng: np.random.Generator, scale: float = 0.3) -> Params:
    # move off the zero-bias / zero-readout init so every parameter matters
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in params.items()}


def attention_suite(depths=(1, 3), d: int = 8, d_hidden: int = 6, n_instances: int = 10,
                    n_coords: int = 200, seed: int = 0, tolerance: float = 1e-5) -> list[SuiteResult]:
    out = []
    for depth in depths:
        rng = np.random.default_rng([seed, depth])
        model = AttentionModel(d, d_hidden, depth)
        reports = []
        for _ in range(n_instances):
            vectors, inst, neg = random_case(rng, d)
            params = _perturbed(model.init_params(rng), rng)
            batch = make_batch([inst], [neg], vectors, 200)
            reports.append(check_model(model, params, batch, rng, n_coords, tolerance))
        out.append(SuiteResult(f"attention K={depth}", reports))
    return out


def dan_suite(d: int = 8, hidden: int = 16, n_hidden: int = 2, n_instances: int = 10, n_coords: int = 200,
              seed: int = 0, tolerance: float = 1e-5) -> SuiteResult:
    rng = np.random.default_rng([seed, 99])
    model = DanModel(d, hidden, n_hidden)
    reports = []
    for _ in range(n_instances):
        vectors, inst, neg = random_case(rng, d)
        params = _perturbed(model.init_params(rng), rng, scale=0.1)
        batch = make_batch([inst], [neg], vectors, 200)
        reports.append(check_model(model, params, batch, rng, n_coords, tolerance))
    return SuiteResult("dan", reports)


def skipgram_suite(d: int = 4, n_negatives: int = 2, n_instances: int = 10, seed: int = 0,
                   tolerance: float = 1e-6) -> SuiteResult:
    """Check the skip-gram pair gradients against differences of its loss."""
    rng = np.random.default_rng([seed, 7])
    reports = []
    for _ in range(n_instances):
        n_items = 6
        target = rng.standard_normal((n_items, d)) * 0.5
        context = rng.standard_normal((n_items, d)) * 0.5
        center, ctx, *negs = rng.permutation(n_items)[:2 + n_negatives].tolist()

        def loss_fn(t):
            tab = embed.EmbeddingTable(tuple(map(str, range(n_items))), t["target"], t["context"])
            loss = embed.sg_loss(tab, center, ctx, negs)
            g_center, rows, g_rows = embed.sg_gradients(t["target"], t["context"], center, ctx, negs)
            grads = {"target": np.zeros_like(t["target"]), "context": np.zeros_like(t["context"])}
            grads["target"][center] = g_center
            for r, g in zip(rows, g_rows):
                grads["context"][r] += g
            return loss, grads

        reports.append(finite_diff_check(loss_fn, {"target": target, "context": context},
                                         tolerance=tolerance, rng=rng))
    return SuiteResult("skip-gram", reports)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [*attention_suite(seed=seed), dan_suite(seed=seed), skipgram_suite(seed=seed)]
