"""Multi-layer attention over a user's observed items, scored against a query.

Every layer attends over the (distinct) history items with the current
query state, then adds the attended value back into the state::

    z0 = h(x_q)
    p_k = softmax_i( f_k(x_i) . z_{k-1} )
    z_k = z_{k-1} + sum_i p_k[i] g_k(x_i)
    score = sigmoid(w . z_K)

with ``f_k``, ``g_k`` and ``h`` affine maps from ``d`` to ``d_hidden``.
Layers do not share parameters.  Gradients are written out by hand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import Params, logistic, masked_softmax, orthogonal_init

MAGIC = b"ATNCF1"


class CheckpointError(ValueError):
    pass


def param_names(depth: int) -> list[str]:
    names = ["B_h", "c_h"]
    for k in range(depth):
        names += [f"B_f{k}", f"c_f{k}", f"B_g{k}", f"c_g{k}"]
    return names + ["w"]


@dataclass
class AttentionParams:
    d: int
    d_hidden: int
    depth: int
    tensors: Params

    def __post_init__(self):
        expected = self.shapes(self.d, self.d_hidden, self.depth)
        if list(self.tensors) != list(expected):
            raise ValueError("parameter names/order do not match depth")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    @staticmethod
    def shapes(d: int, d_hidden: int, depth: int) -> dict[str, tuple[int, ...]]:
        out = {}
        for name in param_names(depth):
            out[name] = (d_hidden, d) if name.startswith("B_") else (d_hidden,)
        return out

    @classmethod
    def zeros(cls, d: int, d_hidden: int, depth: int) -> "AttentionParams":
        return cls(d, d_hidden, depth, {n: np.zeros(s) for n, s in cls.shapes(d, d_hidden, depth).items()})

    @classmethod
    def init(cls, d: int, d_hidden: int, depth: int, rng: np.random.Generator) -> "AttentionParams":
        """Orthogonal weight matrices; zero biases and readout."""
        p = cls.zeros(d, d_hidden, depth)
        for name in p.tensors:
            if name.startswith("B_"):
                p.tensors[name] = orthogonal_init(d_hidden, d, rng)
        return p

    def copy(self) -> "AttentionParams":
        return AttentionParams(self.d, self.d_hidden, self.depth, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())


@dataclass
class ForwardTrace:
    attention: list[np.ndarray]  # p^k over canonical history order
    states: list[np.ndarray]  # z^0 .. z^K
    score: float
    history: np.ndarray  # canonical (sorted, distinct) history indices


def canonical_history(history: Sequence[int], max_history: int | None = None) -> np.ndarray:
    """Distinct indices, sorted.  ``history`` is oldest-first when truncating."""
    hist = list(history)
    if max_history is not None and len(hist) > max_history:
        recent = list(dict.fromkeys(reversed(hist)))[:max_history]
        hist = recent
    out = np.unique(np.asarray(hist, dtype=np.int64))
    if out.size == 0:
        raise ValueError("empty history")
    return out


# -- batched core ------------------------------------------------------------
#
# Shapes: Xh (B, L, d) padded histories with mask (B, L); Xq (B, Q, d) queries.

def batch_forward(t: Params, depth: int, Xh: np.ndarray, mask: np.ndarray, Xq: np.ndarray):
    z = Xq @ t["B_h"].T + t["c_h"]
    cache = {"Xh": Xh, "Xq": Xq, "z": [z], "p": [], "F": [], "G": []}
    att_mask = mask[:, None, :]
    for k in range(depth):
        # c_f shifts every logit of a row equally, so softmax ignores it;
        # leaving it out keeps that invariance exact in floating point
        F = Xh @ t[f"B_f{k}"].T
        G = Xh @ t[f"B_g{k}"].T + t[f"c_g{k}"]
        p = masked_softmax(z @ F.transpose(0, 2, 1), att_mask)
        z = z + p @ G
        cache["F"].append(F)
        cache["G"].append(G)
        cache["p"].append(p)
        cache["z"].append(z)
    logits = z @ t["w"]
    return logits, cache


def batch_backward(t: Params, depth: int, cache, dlogits: np.ndarray) -> Params:
    """Gradients of ``sum(dlogits * logits)`` w.r.t. every parameter."""
    Xh, Xq = cache["Xh"], cache["Xq"]
    grads: Params = {}
    grads["w"] = np.einsum("bq,bqh->h", dlogits, cache["z"][-1])
    dz = dlogits[..., None] * t["w"]
    for k in range(depth - 1, -1, -1):
        p, F, G, z_prev = cache["p"][k], cache["F"][k], cache["G"][k], cache["z"][k]
        dG = p.transpose(0, 2, 1) @ dz
        dp = dz @ G.transpose(0, 2, 1)
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
        dF = ds.transpose(0, 2, 1) @ z_prev
        dz = dz + ds @ F
        grads[f"B_g{k}"] = np.einsum("blh,bld->hd", dG, Xh)
        grads[f"c_g{k}"] = dG.sum(axis=(0, 1))
        grads[f"B_f{k}"] = np.einsum("blh,bld->hd", dF, Xh)
        grads[f"c_f{k}"] = np.zeros_like(t[f"c_f{k}"])
    grads["B_h"] = np.einsum("bqh,bqd->hd", dz, Xq)
    grads["c_h"] = dz.sum(axis=(0, 1))
    return {name: grads[name] for name in param_names(depth)}


class AttentionModel:
    """Adapter giving the trainer a uniform view of the attention network."""

    name = "attn"

    def __init__(self, d: int, d_hidden: int = 128, depth: int = 10):
        self.d, self.d_hidden, self.depth = d, d_hidden, depth

    def init_params(self, rng: np.random.Generator) -> Params:
        return AttentionParams.init(self.d, self.d_hidden, self.depth, rng).tensors

    def logits(self, t: Params, Xh, mask, Xq):
        return batch_forward(t, self.depth, Xh, mask, Xq)

    def backward(self, t: Params, cache, dlogits) -> Params:
        return batch_backward(t, self.depth, cache, dlogits)

    def wrap(self, t: Params) -> AttentionParams:
        return AttentionParams(self.d, self.d_hidden, self.depth, t)


# -- single-instance API -------------------------------------------------------

def _gather(vectors: np.ndarray, idx) -> np.ndarray:
    return np.asarray(vectors)[np.asarray(idx, dtype=np.int64)]


def forward(params: AttentionParams, history: Sequence[int], query: int, vectors: np.ndarray) -> ForwardTrace:
    hist = canonical_history(history)
    Xh = _gather(vectors, hist)[None]
    Xq = _gather(vectors, [query])[None]
    logits, cache = batch_forward(params.tensors, params.depth, Xh, np.ones((1, len(hist)), bool), Xq)
    return ForwardTrace(
        attention=[p[0, 0] for p in cache["p"]],
        states=[z[0, 0] for z in cache["z"]],
        score=float(logistic(logits[0, 0])),
        history=hist,
    )


def backward(params: AttentionParams, history: Sequence[int], query: int, vectors: np.ndarray,
             upstream: float) -> Params:
    """Gradient of ``upstream * score`` for a single (history, query) pair.

    The embedding table is an input only; it never receives a gradient.
    """
    hist = canonical_history(history)
    Xh = _gather(vectors, hist)[None]
    Xq = _gather(vectors, [query])[None]
    logits, cache = batch_forward(params.tensors, params.depth, Xh, np.ones((1, len(hist)), bool), Xq)
    s = logistic(logits)
    return batch_backward(params.tensors, params.depth, cache, upstream * s * (1.0 - s))


def score_batch(params: AttentionParams, history: Sequence[int], candidates: Sequence[int],
                vectors: np.ndarray, max_history: int | None = None) -> np.ndarray:
    """Scores for many candidates; history transforms are computed once."""
    if len(candidates) == 0:
        return np.empty(0)
    hist = canonical_history(history, max_history)
    Xh = _gather(vectors, hist)[None]
    Xq = _gather(vectors, candidates)[None]
    logits, _ = batch_forward(params.tensors, params.depth, Xh, np.ones((1, len(hist)), bool), Xq)
    return logistic(logits[0])


def instance_loss(params: AttentionParams, observed: Sequence[int], future: Sequence[int],
                  negatives: Sequence[int], vectors: np.ndarray) -> tuple[float, Params]:
    """Balanced loss of one training instance and its gradients.

    Positives and negatives each carry half the weight, whatever their counts.
    """
    from .corpus import SplitInstance
    from .trainer import batch_loss, make_batch

    if len(future) == 0 or len(negatives) == 0:
        raise ValueError("need at least one future and one negative item")
    if set(future) & set(negatives):
        raise ValueError("negatives overlap the future set")
    inst = SplitInstance("", tuple(observed), tuple(future))
    batch = make_batch([inst], [list(negatives)], np.asarray(vectors), max_history=len(observed) or 1)
    return batch_loss(AttentionModel(params.d, params.d_hidden, params.depth), params.tensors, batch)


def train(train_instances, holdout_instances, vectors, item_counts, config, d_hidden: int = 128,
          depth: int = 10, **kwargs):
    """Fit the attention model with the shared plateau-scheduled trainer."""
    from .trainer import train as run

    vectors = np.asarray(vectors)
    model = AttentionModel(vectors.shape[1], d_hidden, depth)
    result = run(model, train_instances, holdout_instances, vectors, item_counts, config, **kwargs)
    return model.wrap(result.params), result


# -- checkpoints ---------------------------------------------------------------

def save_params(params: AttentionParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", params.d, params.d_hidden, params.depth))
        for name in param_names(params.depth):
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())


def load_params(path, expect_d: int | None = None) -> AttentionParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != MAGIC or len(blob) < 18:
        raise CheckpointError(f"{path}: not an attention checkpoint")
    d, d_hidden, depth = struct.unpack("<III", blob[6:18])
    if min(d, d_hidden, depth) < 1:
        raise CheckpointError(f"{path}: corrupted header")
    if expect_d is not None and d != expect_d:
        raise CheckpointError(f"{path}: checkpoint expects d={d}, embeddings have d={expect_d}")
    shapes = AttentionParams.shapes(d, d_hidden, depth)
    need = 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) - 18 != need:
        raise CheckpointError(f"{path}: body has {len(blob) - 18} bytes, header implies {need}")
    flat = np.frombuffer(blob, dtype="<f8", offset=18).astype(np.float64)
    tensors, pos = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        tensors[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    return AttentionParams(d, d_hidden, depth, tensors)
