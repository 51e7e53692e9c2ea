"""Deep averaging network: a ReLU MLP applied to the mean history vector,
scored by inner product with the query embedding (then a logistic link so
it trains with the same loss as the attention model)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..attncf import CheckpointError, canonical_history
from ..numkit import Params, logistic, orthogonal_init

MAGIC = b"DANCF1"


def param_shapes(d: int, hidden: int, n_hidden: int) -> dict[str, tuple[int, ...]]:
    dims = [d] + [hidden] * n_hidden + [d]
    shapes = {}
    for i in range(len(dims) - 1):
        shapes[f"W{i}"] = (dims[i + 1], dims[i])
        shapes[f"b{i}"] = (dims[i + 1],)
    return shapes


@dataclass
class DanParams:
    d: int
    hidden: int
    n_hidden: int
    tensors: Params
    variant: str = "inner_product"

    def __post_init__(self):
        shapes = param_shapes(self.d, self.hidden, self.n_hidden)
        if list(self.tensors) != list(shapes):
            raise ValueError("DAN parameter names do not match the layer layout")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    @classmethod
    def zeros(cls, d: int, hidden: int = 128, n_hidden: int = 2) -> "DanParams":
        return cls(d, hidden, n_hidden, {k: np.zeros(s) for k, s in param_shapes(d, hidden, n_hidden).items()})

    @classmethod
    def init(cls, d: int, hidden: int, n_hidden: int, rng: np.random.Generator) -> "DanParams":
        p = cls.zeros(d, hidden, n_hidden)
        for name, arr in p.tensors.items():
            if name.startswith("W"):
                p.tensors[name] = orthogonal_init(*arr.shape, rng)
        return p


def _n_layers(t: Params) -> int:
    return sum(1 for k in t if k.startswith("W"))


def batch_forward(t: Params, Xh: np.ndarray, mask: np.ndarray, Xq: np.ndarray):
    m = mask.astype(float)
    a = np.einsum("bl,bld->bd", m, Xh) / m.sum(axis=1, keepdims=True)
    acts = [a]
    n = _n_layers(t)
    for i in range(n):
        a = a @ t[f"W{i}"].T + t[f"b{i}"]
        if i < n - 1:
            a = np.maximum(a, 0.0)
        acts.append(a)
    logits = np.einsum("bqd,bd->bq", Xq, a)
    return logits, {"acts": acts, "Xq": Xq}


def batch_backward(t: Params, cache, dlogits: np.ndarray) -> Params:
    acts = cache["acts"]
    n = _n_layers(t)
    grads: Params = {}
    da = np.einsum("bq,bqd->bd", dlogits, cache["Xq"])
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            da = da * (acts[i + 1] > 0)
        grads[f"W{i}"] = da.T @ acts[i]
        grads[f"b{i}"] = da.sum(axis=0)
        da = da @ t[f"W{i}"]
    return {k: grads[k] for k in t}


class DanModel:
    name = "dan"

    def __init__(self, d: int, hidden: int = 128, n_hidden: int = 2):
        self.d, self.hidden, self.n_hidden = d, hidden, n_hidden

    def init_params(self, rng: np.random.Generator) -> Params:
        return DanParams.init(self.d, self.hidden, self.n_hidden, rng).tensors

    def logits(self, t: Params, Xh, mask, Xq):
        return batch_forward(t, Xh, mask, Xq)

    def backward(self, t: Params, cache, dlogits) -> Params:
        return batch_backward(t, cache, dlogits)

    def wrap(self, t: Params) -> DanParams:
        return DanParams(self.d, self.hidden, self.n_hidden, t)


def dan_score_batch(params: DanParams, history: Sequence[int], candidates: Sequence[int],
                    vectors: np.ndarray, max_history: int | None = None) -> np.ndarray:
    if len(candidates) == 0:
        return np.empty(0)
    hist = canonical_history(history, max_history)
    vectors = np.asarray(vectors)
    Xh = vectors[hist][None]
    Xq = vectors[np.asarray(candidates, dtype=np.int64)][None]
    logits, _ = batch_forward(params.tensors, Xh, np.ones((1, len(hist)), bool), Xq)
    return logistic(logits[0])


def dan_score(params: DanParams, history: Sequence[int], query: int, vectors: np.ndarray) -> float:
    return float(dan_score_batch(params, history, [query], vectors)[0])


def save_dan(params: DanParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", params.d, params.hidden, params.n_hidden))
        for arr in params.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_dan(path, expect_d: int | None = None) -> DanParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != MAGIC or len(blob) < 18:
        raise CheckpointError(f"{path}: not a DAN checkpoint")
    d, hidden, n_hidden = struct.unpack("<III", blob[6:18])
    if min(d, hidden) < 1:
        raise CheckpointError(f"{path}: corrupted header")
    if expect_d is not None and d != expect_d:
        raise CheckpointError(f"{path}: checkpoint expects d={d}, embeddings have d={expect_d}")
    shapes = param_shapes(d, hidden, n_hidden)
    need = 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) - 18 != need:
        raise CheckpointError(f"{path}: body has {len(blob) - 18} bytes, header implies {need}")
    flat = np.frombuffer(blob, dtype="<f8", offset=18).astype(np.float64)
    tensors, pos = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        tensors[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    return DanParams(d, hidden, n_hidden, tensors)


def dan_train(train_instances, holdout_instances, vectors, item_counts, config, hidden: int = 128,
              n_hidden: int = 2, **kwargs):
    """Same optimizer, loss and schedule as the attention model."""
    from ..trainer import train as run

    vectors = np.asarray(vectors)
    model = DanModel(vectors.shape[1], hidden, n_hidden)
    result = run(model, train_instances, holdout_instances, vectors, item_counts, config, **kwargs)
    return model.wrap(result.params), result
