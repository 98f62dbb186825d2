"""Posterior of the primary-source average treatment effect under model averaging.

Each posterior draw ``b`` evaluates the conditional effect for every
primary-source row, then integrates over the covariate distribution with a
fresh Bayesian-bootstrap weight vector::

    Delta_b = sum_i p_i^(b) * CATE_i^(b),   p^(b) ~ Dirichlet(1, ..., 1)

Draws are split across exchangeability patterns by largest-remainder
rounding of ``omega_q * B``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import MemError, MemPateError
from .mem import MemSpace, pool
from .models import EstimandSpec

__all__ = ["EstimandSpec", "PatePosterior", "Summary", "allocate_draws", "bayesian_bootstrap_weights",
           "cate_draw", "pate_posterior", "summarize"]


def cate_draw(draws, data: Dataset, spec: EstimandSpec = EstimandSpec(), index=None) -> np.ndarray:
    """Conditional effects of a single posterior draw on ``data`` rows (primary rows by default)."""
    if len(draws) != 1:
        raise ValueError("cate_draw expects a single posterior draw; use draws.draw(b)")
    if index is None:
        index = data.source_index(data.primary)
    return draws.cate_matrix(data, index, spec)[0]


def bayesian_bootstrap_weights(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Flat-Dirichlet weights on ``n`` points as the gaps of ``n - 1`` sorted uniforms.

    With ``size`` set, returns a ``(size, n)`` array of independent draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = (n - 1,) if size is None else (size, n - 1)
    u = np.sort(rng.random(shape), axis=-1)
    pad = [(0, 0)] * (u.ndim - 1)
    return np.diff(np.pad(u, pad + [(1, 0)], constant_values=0.0), axis=-1, append=1.0)


def allocate_draws(weights, B: int) -> np.ndarray:
    """Largest-remainder integer split of ``B`` proportional to ``weights``; ties go to lower indices."""
    w = np.asarray(weights, dtype=float)
    target = w * B
    alloc = np.floor(target).astype(np.int64)
    short = B - int(alloc.sum())
    if short > 0:
        order = np.argsort(-(target - alloc), kind="stable")
        alloc[order[:short]] += 1
    return alloc


@dataclass(frozen=True, eq=False)
class PatePosterior:
    draws: np.ndarray
    mem_allocation: np.ndarray
    pattern_of_draw: np.ndarray

    def __post_init__(self):
        if int(self.mem_allocation.sum()) != self.draws.size:
            raise ValueError("allocation does not match the number of draws")
        if not np.all(np.isfinite(self.draws)):
            raise MemError("non-finite treatment-effect draws")

    @property
    def B(self) -> int:
        return self.draws.size

    def summary(self, mass: float = 0.95) -> "Summary":
        return summarize(self, mass)


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    lower: float
    upper: float
    mass: float = 0.95

    def format(self, digits: int = 2) -> str:
        return f"{self.mean:.{digits}f}({self.sd:.{digits}f})"


def summarize(post, mass: float = 0.95) -> Summary:
    """Mean, sample sd and equal-tailed ``mass`` interval of the draws."""
    d = np.asarray(post.draws if isinstance(post, PatePosterior) else post, dtype=float)
    if d.size < 2:
        raise ValueError("at least two draws are needed for a standard deviation")
    if not 0 < mass < 1:
        raise ValueError("interval mass must lie in (0, 1)")
    tail = 0.5 * (1.0 - mass)
    lo, hi = np.quantile(d, [tail, 1.0 - tail])
    return Summary(float(d.mean()), float(d.std(ddof=1)), float(lo), float(hi), mass)


def _pattern_draws(data: Dataset, model, space: MemSpace, q: int, k: int, spec: EstimandSpec,
                   rng: np.random.Generator, primary: np.ndarray) -> np.ndarray:
    pattern = space.patterns[q]
    pooled, _ = pool(data, pattern)
    try:
        fitted = model.fit(data, pooled.index(data), k, rng)
        cate = fitted.cate_matrix(data, primary, spec)
    except MemPateError as exc:
        raise MemError(f"{type(exc).__name__} from {exc.module}: {exc}", pattern.label(),
                       "+".join(pooled.sources)) from exc
    out = np.empty(k)
    for b in range(k):
        out[b] = bayesian_bootstrap_weights(primary.size, rng) @ cate[b]
    return out


def pate_posterior(data: Dataset, model, space: MemSpace, B: int, rng: np.random.Generator | int,
                   spec: EstimandSpec = EstimandSpec(), *, threads: int = 1) -> PatePosterior:
    """Mixture posterior of the primary-source PATE across exchangeability patterns.

    Every pattern with a positive allocation gets its own child stream of
    ``rng`` (spawned in pattern order), so results do not depend on
    ``threads``.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    rng = np.random.default_rng(rng)
    alloc = allocate_draws(space.weights, B)
    children = rng.spawn(len(space.patterns))
    primary = data.source_index(data.primary)
    jobs = [q for q in range(len(space.patterns)) if alloc[q] > 0]

    def run(q):
        return _pattern_draws(data, model, space, q, int(alloc[q]), spec, children[q], primary)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(q) for q in jobs]
    draws = np.concatenate(parts) if parts else np.zeros(0)
    owner = np.repeat(np.arange(len(space.patterns)), alloc)
    return PatePosterior(draws, alloc, owner)
