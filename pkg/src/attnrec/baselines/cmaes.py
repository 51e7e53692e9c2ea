"""(mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation and
rank-one plus rank-mu covariance updates, using Hansen's default settings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class CmaResult:
    x: np.ndarray
    f: float
    x0_f: float
    evaluations: int
    best_trace: list[float] = field(default_factory=list)  # running best per iteration


def default_population(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


def cma_es_optimize(
    objective: Callable[[np.ndarray], float],
    dim: int,
    x0=None,
    sigma0: float = 0.5,
    population: int | None = None,
    iterations: int = 100,
    seed: int = 0,
    ftarget: float | None = None,
) -> CmaResult:
    """Minimize ``objective`` over R^dim.

    Candidates with a non-finite objective are ranked after every finite one.
    The starting point is evaluated too, so the result is never worse than
    ``x0``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    n = dim
    rng = np.random.default_rng(seed)
    lam = population or default_population(n)
    mu = lam // 2
    weights = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights ** 2)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    mean = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    sigma = float(sigma0)
    C = np.eye(n)
    pc = np.zeros(n)
    ps = np.zeros(n)
    B = np.eye(n)
    D = np.ones(n)

    def safe(x):
        val = float(objective(x))
        return val if math.isfinite(val) else math.inf

    best_x = mean.copy()
    best_f = x0_f = safe(mean)
    evals = 1
    trace = []
    for gen in range(iterations):
        z = rng.standard_normal((lam, n))
        y = (z * D) @ B.T
        xs = mean + sigma * y
        fs = np.array([safe(x) for x in xs])
        evals += lam
        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < best_f:
            best_f, best_x = float(fs[order[0]]), xs[order[0]].copy()
        trace.append(best_f)
        if ftarget is not None and best_f <= ftarget:
            break

        y_sel = y[order[:mu]]
        y_w = weights @ y_sel
        mean = mean + sigma * y_w
        inv_sqrt_c = B @ np.diag(1 / D) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_c @ y_w)
        hsig = (np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * (gen + 1))) / chi_n) < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        rank_mu = (y_sel.T * weights) @ y_sel
        C = ((1 - c1 - cmu) * C
             + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
        C = (C + C.T) / 2
        eigvals, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(eigvals, 1e-20))
        if sigma * D.max() < 1e-14:
            break
    return CmaResult(best_x, best_f, x0_f, evals, trace)
