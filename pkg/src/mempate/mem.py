"""Exchangeability patterns, model priors and posterior model weights.

Patterns are ordered by an index ``q = 0 .. 2^H - 1`` with
``z_h = 1 - bit_(h-1)(q)``, so pattern 0 borrows from every source, the
last pattern borrows from none, and the first supplemental source varies
fastest.  For ``H = 2`` the order is (1,1), (0,1), (1,0), (0,0).

The joint prior over patterns is the product of independent per-source
exchangeability probabilities ``p``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .errors import ConfigError, MemError, MemPateError

log = logging.getLogger(__name__)

MAX_SOURCES = 20
PRIOR_KINDS = ("flat-half", "power-r", "inverse-r", "power-half-r")
_ALIASES = {"half": "flat-half", "flat": "flat-half"}


@dataclass(frozen=True)
class ExchPattern:
    z: tuple[int, ...]

    def __post_init__(self):
        z = tuple(int(v) for v in self.z)
        if any(v not in (0, 1) for v in z):
            raise ValueError("pattern entries must be 0 or 1")
        object.__setattr__(self, "z", z)

    @property
    def H(self) -> int:
        return len(self.z)

    @property
    def n_borrowed(self) -> int:
        return sum(self.z)

    def label(self) -> str:
        return "".join(map(str, self.z)) or "-"


def enumerate_patterns(H: int) -> list[ExchPattern]:
    if H < 0:
        raise ValueError("H must be >= 0")
    if H > MAX_SOURCES:
        raise MemError(f"H = {H} exceeds the supported maximum of {MAX_SOURCES} supplemental sources")
    return [ExchPattern(tuple(1 - ((q >> h) & 1) for h in range(H))) for q in range(2 ** H)]


@dataclass(frozen=True)
class ModelPrior:
    """Per-source exchangeability probability family.

    ``flat-half``: 1/2; ``power-r``: (1/2)^r; ``inverse-r``: 1/r;
    ``power-half-r``: (1/2)^(r/2).
    """

    kind: str = "flat-half"
    r: int = 1

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in PRIOR_KINDS:
            raise ConfigError(f"unknown prior kind {self.kind!r}; expected one of {PRIOR_KINDS}")
        if int(self.r) != self.r or self.r < 1:
            raise ConfigError("r must be a positive integer")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "r", int(self.r))

    @property
    def p(self) -> float:
        if self.kind == "flat-half":
            return 0.5
        if self.kind == "power-r":
            return 0.5 ** self.r
        if self.kind == "inverse-r":
            return 1.0 / self.r
        return 0.5 ** (self.r / 2)


def model_prior(pattern: ExchPattern, prior: ModelPrior) -> float:
    # direct product keeps closed-form values such as 2^-39 exact
    p = prior.p
    k = pattern.n_borrowed
    return p ** k * (1.0 - p) ** (pattern.H - k)


def prior_probs(patterns: Sequence[ExchPattern], prior: ModelPrior) -> np.ndarray:
    return np.array([model_prior(z, prior) for z in patterns])


@dataclass(frozen=True)
class Block:
    """A set of sources modelled with shared parameters."""

    sources: tuple[str, ...]
    mask: int

    def index(self, data: Dataset) -> np.ndarray:
        return data.source_index(self.sources)


def block_for(data: Dataset, labels: Sequence[str]) -> Block:
    order = [s for s in data.sources if s in set(labels)]
    mask = sum(1 << data.sources.index(s) for s in order)
    return Block(tuple(order), mask)


def pool(data: Dataset, pattern: ExchPattern) -> tuple[Block, list[Block]]:
    """Pooled block (primary plus borrowed sources) and one singleton block per unborrowed source."""
    if pattern.H != data.H:
        raise MemError(f"pattern has length {pattern.H} but the dataset has H = {data.H}", pattern.label())
    borrowed = [s for s, z in zip(data.supplemental, pattern.z) if z]
    pooled = block_for(data, [data.primary, *borrowed])
    singles = [block_for(data, [s]) for s, z in zip(data.supplemental, pattern.z) if not z]
    return pooled, singles


class BlockCache:
    """Block log marginals keyed by source set, each computed with its own seeded stream."""

    def __init__(self, data: Dataset, model, seed: int = 0):
        self.data = data
        self.model = model
        self.seed = int(seed)
        self._values: dict[int, float] = {}

    def rng(self, block: Block) -> np.random.Generator:
        return np.random.default_rng([self.seed, 0, block.mask])

    def compute(self, block: Block, pattern: ExchPattern | None = None) -> float:
        if block.mask not in self._values:
            try:
                value = float(self.model.block_log_marginal(self.data, block.index(self.data), self.rng(block)))
            except MemPateError as exc:
                raise MemError(f"{type(exc).__name__} from {exc.module}: {exc}",
                               None if pattern is None else pattern.label(), "+".join(block.sources)) from exc
            self._values[block.mask] = value
        return self._values[block.mask]

    def prefetch(self, items: Sequence[tuple[Block, ExchPattern]], threads: int = 1) -> None:
        """Evaluate ``(block, first pattern using it)`` pairs, optionally in parallel."""
        todo = [(b, z) for b, z in items if b.mask not in self._values]
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(lambda bz: self.compute(*bz), todo))
        else:
            for b, z in todo:
                self.compute(b, z)


def pattern_log_marginal(data: Dataset, pattern: ExchPattern, model, *, seed: int = 0,
                         cache: BlockCache | None = None) -> float:
    """Sum of block log marginals: the pooled block plus each unborrowed source alone."""
    cache = cache or BlockCache(data, model, seed)
    pooled, singles = pool(data, pattern)
    total = 0.0
    for b in (pooled, *singles):
        total += cache.compute(b, pattern)
    return total


def posterior_weights(log_marginals, prior) -> np.ndarray:
    """Normalized ``exp(log_marginal) * prior`` computed in log space."""
    lm = np.asarray(log_marginals, dtype=float)
    pr = np.asarray(prior, dtype=float)
    if lm.shape != pr.shape:
        raise MemError("log marginals and prior probabilities differ in length")
    if np.any(np.isnan(lm)) or np.any(lm == np.inf):
        raise MemError("log marginals must be finite or -inf")
    if np.any(pr < 0) or not math.isclose(pr.sum(), 1.0, abs_tol=1e-9):
        raise MemError("prior probabilities must form a simplex")
    with np.errstate(divide="ignore"):
        lw = lm + np.log(pr)
    if not np.any(np.isfinite(lw)):
        raise MemError("every pattern has zero posterior mass (all log marginals are -inf)")
    w = np.exp(lw - logsumexp(lw))
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class MemSpace:
    patterns: tuple[ExchPattern, ...]
    prior_probs: np.ndarray
    log_marginals: np.ndarray
    weights: np.ndarray
    sources: tuple[str, ...] = ()
    prior: ModelPrior | None = None

    @property
    def H(self) -> int:
        return len(self.sources) - 1 if self.sources else (self.patterns[0].H if self.patterns else 0)

    def borrow_weight(self) -> float:
        """Posterior weight on borrowing: omega of the all-ones pattern for H = 1,
        the omega-weighted fraction of borrowed sources for H >= 2 (1 when H = 0)."""
        H = self.patterns[0].H
        if H == 0:
            return 1.0
        frac = np.array([z.n_borrowed / H for z in self.patterns])
        return float(np.clip(frac @ self.weights, 0.0, 1.0))

    def table(self):
        """Rows of (pattern index, z, prior, log marginal, omega)."""
        return [(q + 1, z.z, float(self.prior_probs[q]), float(self.log_marginals[q]), float(self.weights[q]))
                for q, z in enumerate(self.patterns)]


def no_borrow_space(data: Dataset) -> MemSpace:
    """Degenerate space that puts all weight on the pattern borrowing from no source."""
    patterns = tuple(enumerate_patterns(data.H))
    w = np.zeros(len(patterns))
    w[-1] = 1.0
    return MemSpace(patterns, w.copy(), np.full(len(patterns), np.nan), w, data.sources, None)


def build_mem_space(data: Dataset, model, prior: ModelPrior | str = "flat-half", *, r: int | None = None,
                    seed: int = 0, threads: int = 1) -> MemSpace:
    """Evaluate every exchangeability pattern for ``model`` and weight them."""
    if isinstance(prior, str):
        prior = ModelPrior(prior, r if r is not None else model.predictor_count(data))
    patterns = tuple(enumerate_patterns(data.H))
    cache = BlockCache(data, model, seed)
    blocks = {}
    for z in patterns:
        pooled, singles = pool(data, z)
        for b in (pooled, *singles):
            blocks.setdefault(b.mask, (b, z))
    cache.prefetch(list(blocks.values()), threads)
    lm = np.array([pattern_log_marginal(data, z, model, cache=cache) for z in patterns])
    pp = prior_probs(patterns, prior)
    return MemSpace(patterns, pp, lm, posterior_weights(lm, pp), data.sources, prior)
