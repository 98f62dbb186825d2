"""Simulation scenarios and a seeded Monte Carlo harness.

All scenarios share the outcome model ``Y = (1 + delta_s) A + f(X) + eps``
with ``eps ~ N(0, 1)``, ``delta_s = 0`` in the primary source and
``delta`` in the supplemental source, so the primary-source PATE is 1.

========  =============================  ===========================  ========
scenario  X                              A | X                        f(x)
========  =============================  ===========================  ========
1         N(0, 1)                        Bernoulli(logistic(x))       x
2         primary N(0, 1), supp. N(3,1)  Bernoulli(logistic(x))       x
3         X|A=0 ~ N(0, 4/3),             A ~ Bernoulli(1/2)           exp(x)
          X|A=1 ~ N(0, 2/3)
========  =============================  ===========================  ========
"""

from __future__ import annotations

import csv
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, MemPateError
from .mem import ModelPrior, build_mem_space, no_borrow_space
from .models import make_model
from .pate import pate_posterior

log = logging.getLogger(__name__)

PRIMARY = "P"
SUPPLEMENTAL = "S1"
TRUE_PATE = 1.0
FAILURE_CAP = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    n_primary: int = 100
    n_supplemental: int = 100
    delta: float = 0.0
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"scenario must be 1, 2 or 3 (got {self.scenario!r})")
        if self.n_primary < 2 or self.n_supplemental < 2:
            raise ConfigError("each source needs at least two rows")


def _draw_source(scenario: int, n: int, x_mean: float, rng: np.random.Generator):
    # redraw until both arms are present; only matters for tiny n or shifted X
    while True:
        if scenario == 3:
            a = (rng.random(n) < 0.5).astype(np.int8)
            x = rng.standard_normal(n) * np.sqrt(np.where(a == 1, 2.0 / 3.0, 4.0 / 3.0))
        else:
            x = x_mean + rng.standard_normal(n)
            a = (rng.random(n) < 1.0 / (1.0 + np.exp(-x))).astype(np.int8)
        if 0 < a.sum() < n:
            return x, a


def outcome_mean(scenario: int, a, x, effect: float = 1.0):
    f = np.exp(x) if scenario == 3 else x
    return effect * a + f


def gen_scenario(config: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    """Primary plus one supplemental source for the given scenario."""
    parts = []
    for label, n, effect in ((PRIMARY, config.n_primary, 1.0),
                             (SUPPLEMENTAL, config.n_supplemental, 1.0 + config.delta)):
        x_mean = 3.0 if (config.scenario == 2 and label == SUPPLEMENTAL) else 0.0
        x, a = _draw_source(config.scenario, n, x_mean, rng)
        y = outcome_mean(config.scenario, a, x, effect) + config.noise_sd * rng.standard_normal(n)
        parts.append((label, y, a, x))
    return Dataset(
        y=np.concatenate([p[1] for p in parts]),
        a=np.concatenate([p[2] for p in parts]),
        source=np.array([p[0] for p in parts for _ in range(p[1].size)], dtype=object),
        X=np.concatenate([p[3] for p in parts])[:, None],
        sources=(PRIMARY, SUPPLEMENTAL),
        covariate_names=("x",),
    )


def delta_grid(part: int = 1) -> np.ndarray:
    if part == 1:
        return np.arange(-5, 6) * 0.5
    if part == 2:
        return np.arange(-2, 3) * 0.75
    raise ConfigError("part must be 1 or 2")


def shift_treatment_effect(data: Dataset, source: str, delta: float, sd: float | None = None) -> Dataset:
    """Add ``delta * sd(Y_source)`` to the treated outcomes of ``source``.

    ``sd`` defaults to the sample sd of that source's outcomes before the
    shift; pass it explicitly to undo a shift exactly.
    """
    idx = data.source_index(source)
    if delta == 0:
        return data
    if sd is None:
        sd = float(np.std(data.y[idx], ddof=1))
    y = data.y.copy()
    treated = idx[data.a[idx] == 1]
    y[treated] += delta * sd
    return data.replace_outcome(y)


# ---------------------------------------------------------------------------
# Estimators


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    borrow_weight: float


@dataclass(frozen=True)
class Estimator:
    """A named PATE estimator.

    String specs: ``"blm"``, ``"bart"`` (flat-half prior),
    ``"blm:power-r"`` and the like for other model priors, and
    ``"nb-blm"`` / ``"nb-bart"`` for the primary-only fits.
    """

    name: str
    model_kind: str | None = None
    prior_kind: str = "none"
    borrow: bool = True
    fn: Callable | None = None
    model_options: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, spec, model_options: dict | None = None) -> "Estimator":
        if isinstance(spec, Estimator):
            return spec
        if callable(spec):
            return cls(getattr(spec, "__name__", "custom"), fn=spec)
        text = str(spec).strip().lower()
        opts = dict(model_options or {})
        if text.startswith("nb-"):
            kind = text[3:]
            return cls(text, kind, "none", False, model_options=opts.get(kind, {}))
        kind, _, prior = text.partition(":")
        prior = ModelPrior(prior or "flat-half", 1).kind
        if kind not in ("blm", "bart"):
            raise ConfigError(f"unknown estimator {spec!r}")
        return cls(text, kind, prior, True, model_options=opts.get(kind, {}))

    def __call__(self, data: Dataset, B: int, seed: np.random.SeedSequence) -> EstimatorResult:
        if self.fn is not None:
            out = self.fn(data, B, np.random.default_rng(seed))
            if isinstance(out, EstimatorResult):
                return out
            est, w = out if isinstance(out, tuple) else (out, 0.0)
            return EstimatorResult(float(est), float(w))
        model = make_model(self.model_kind, **self.model_options)
        mem_seed = int(seed.generate_state(1, np.uint64)[0] >> np.uint64(1))
        if self.borrow:
            space = build_mem_space(data, model, self.prior_kind, seed=mem_seed)
        else:
            space = no_borrow_space(data)
        post = pate_posterior(data, model, space, B, np.random.default_rng(seed))
        return EstimatorResult(float(post.draws.mean()), space.borrow_weight() if self.borrow else 0.0)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McRecord:
    scenario: str
    delta: float
    estimator: str
    prior_kind: str
    reps: int
    bias: float
    root_mse: float
    mean_borrow_weight: float
    failures: int
    estimates: np.ndarray = field(repr=False, compare=False, default=None)
    borrow_weights: np.ndarray = field(repr=False, compare=False, default=None)


CSV_COLUMNS = ("scenario", "delta", "estimator", "prior_kind", "reps", "bias", "root_mse",
               "mean_borrow_weight", "failures")


@dataclass(frozen=True)
class McResult:
    records: tuple[McRecord, ...]
    reps: int
    master_seed: int

    def get(self, estimator: str, delta: float) -> McRecord:
        for r in self.records:
            if r.estimator == estimator and math.isclose(r.delta, delta, abs_tol=1e-12):
                return r
        raise KeyError((estimator, delta))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow([r.scenario, f"{r.delta:.17g}", r.estimator, r.prior_kind, r.reps,
                            f"{r.bias:.17g}", f"{r.root_mse:.17g}", f"{r.mean_borrow_weight:.17g}", r.failures])


def rep_seed(master: int, delta_index: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(delta_index), int(rep)])


def estimator_seed(master: int, delta_index: int, rep: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(delta_index), int(rep), zlib.crc32(name.encode())])


def run_monte_carlo(scenario: ScenarioConfig | Callable, estimators: Sequence, reps: int, *, B: int = 100,
                    seed: int = 0, deltas=None, threads: int = 1, truth: float = TRUE_PATE,
                    model_options: dict | None = None) -> McResult:
    """Bias, root MSE and mean borrow weight per (estimator, delta).

    ``scenario`` is a :class:`ScenarioConfig` (its ``delta`` is replaced by
    each grid value) or a callable ``(delta, rng) -> Dataset``.  Each rep's
    data come from ``SeedSequence([seed, delta_index, rep])``; each
    estimator additionally mixes in a hash of its name, so results do not
    depend on the estimator list or on ``threads``.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    ests = [Estimator.parse(e, model_options) for e in estimators]
    if len({e.name for e in ests}) != len(ests):
        raise ConfigError("estimator names must be unique")
    if deltas is None:
        deltas = [scenario.delta] if isinstance(scenario, ScenarioConfig) else [0.0]
    deltas = [float(d) for d in deltas]
    label = str(scenario.scenario) if isinstance(scenario, ScenarioConfig) else getattr(scenario, "__name__", "custom")

    def make_data(di, delta, rep):
        rng = np.random.default_rng(rep_seed(seed, di, rep))
        if isinstance(scenario, ScenarioConfig):
            cfg = ScenarioConfig(scenario.scenario, scenario.n_primary, scenario.n_supplemental, delta,
                                 scenario.noise_sd)
            return gen_scenario(cfg, rng)
        return scenario(delta, rng)

    def one_rep(args):
        di, delta, rep = args
        data = make_data(di, delta, rep)
        out = []
        for e in ests:
            try:
                out.append(e(data, B, estimator_seed(seed, di, rep, e.name)))
            except (MemPateError, np.linalg.LinAlgError) as exc:
                log.warning("estimator %s failed at delta=%g rep=%d: %s", e.name, delta, rep, exc)
                out.append(None)
        return out

    records = []
    for di, delta in enumerate(deltas):
        jobs = [(di, delta, rep) for rep in range(reps)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                results = list(ex.map(one_rep, jobs))
        else:
            results = [one_rep(j) for j in jobs]
        for k, e in enumerate(ests):
            ok = [r[k] for r in results if r[k] is not None]
            failures = reps - len(ok)
            if failures > FAILURE_CAP * reps:
                raise MemPateError(f"estimator {e.name} failed in {failures} of {reps} reps at delta={delta:g}")
            if failures:
                log.warning("estimator %s: %d failed reps excluded at delta=%g", e.name, failures, delta)
            est = np.array([r.estimate for r in ok])
            bw = np.array([r.borrow_weight for r in ok])
            err = est - truth
            records.append(McRecord(label, delta, e.name, e.prior_kind, len(ok), float(err.mean()),
                                    float(np.sqrt(np.mean(err ** 2))), float(bw.mean()), failures, est, bw))
    return McResult(tuple(records), reps, int(seed))
