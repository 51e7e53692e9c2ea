"""Small dense numeric kernel shared by the models.

Parameters and gradients are plain ``dict[str, np.ndarray]`` mappings so the
optimizer, clipping and gradient checks can work on any model uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

Params = dict[str, np.ndarray]


class NumericError(ValueError):
    """Raised when a non-finite value reaches a checkpoint."""


def affine(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ValueError(f"shape mismatch: W{W.shape} b{b.shape} x{x.shape}")
    return x @ W.T + b


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(s - np.max(s, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def masked_softmax(s: np.ndarray, mask: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax where entries with ``mask == False`` get exactly zero weight."""
    s = np.where(mask, s, -np.inf)
    e = np.exp(s - np.max(s, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def logistic(x):
    """Numerically stable logistic function (scalar or array)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_logistic(x):
    """log(sigmoid(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Params:
    """Rescale ``grads`` to have norm ``max_norm`` when it exceeds it."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    """Semi-orthogonal matrix from the QR decomposition of a Gaussian draw."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    # sign fix makes the result uniformly distributed over the Stiefel manifold
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def adam_step(state: AdamState, params: Params, grads: Mapping[str, np.ndarray]) -> Params:
    """Bias-corrected Adam update, applied to ``params`` in place.

    A gradient that is exactly zero everywhere leaves the parameters untouched
    (the bias-corrected first moment would otherwise keep pushing them).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
    if all(not np.any(g) for g in grads.values()):
        return params
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: tuple[str, tuple[int, ...]] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_diff_check(
    loss_fn: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Params,
    epsilon: float = 1e-5,
    tolerance: float = 1e-5,
    n_coords: int = 200,
    rng: np.random.Generator | None = None,
    numeric_dtype=np.float64,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` and compute in the dtype
    of the arrays it is given.  Analytic gradients always come from float64
    parameters; ``numeric_dtype=np.longdouble`` runs only the differencing in
    extended precision, which keeps rounding noise in the loss (about
    ``1e-16 / epsilon``) from swamping coordinates with tiny gradients.
    ``n_coords`` coordinates are drawn uniformly over all parameter entries
    (all of them if fewer exist).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_fn({k: v.copy() for k, v in params.items()})
    probe = {k: v.astype(numeric_dtype) for k, v in params.items()}
    eps = numeric_dtype(epsilon)
    coords = [(name, idx) for name, arr in params.items() for idx in np.ndindex(arr.shape)]
    if len(coords) > n_coords:
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]
    worst_err, worst = 0.0, None
    for name, idx in coords:
        arr = probe[name]
        orig = arr[idx]
        arr[idx] = orig + eps
        up, _ = loss_fn(probe)
        arr[idx] = orig - eps
        down, _ = loss_fn(probe)
        arr[idx] = orig
        numeric = float((up - down) / (2 * eps))
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        if err > worst_err:
            worst_err, worst = err, (name, idx)
    return GradCheckReport(worst_err, len(coords), tolerance, worst)


def check_finite(params: Mapping[str, np.ndarray], where: str = "parameters") -> None:
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite entries in {where} {name!r}")
