"""Outcome-model adapters shared by the MEM and PATE layers.

Both adapters expose the same three operations on a block of rows
(given as row indices into a :class:`~mempate.data.Dataset`):

* ``predictor_count(data)``: the ``r`` used by size-dependent model priors;
* ``block_log_marginal(data, index, rng)``: log p(y_block);
* ``fit(data, index, k, rng)``: ``k`` posterior draws able to evaluate
  conditional average treatment effects on any rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import blm
from .bart import model as bart
from .data import Dataset, DesignBuilder, OutcomeTransform, design_builder, predictor_builder, standardize_outcome
from .errors import ConfigError

COMPLIANCE_MODES = ("none", "fix-compliant")


@dataclass(frozen=True)
class EstimandSpec:
    """Treated-minus-control contrast; ``fix-compliant`` sets C = 1 in both arms."""

    compliance: str = "none"

    def __post_init__(self):
        if self.compliance not in COMPLIANCE_MODES:
            raise ConfigError(f"compliance handling must be one of {COMPLIANCE_MODES}")

    @property
    def fix_compliant(self) -> bool:
        return self.compliance == "fix-compliant"

    def counterfactual(self, builder: DesignBuilder, data: Dataset, index, arm: int):
        if self.fix_compliant:
            if not data.has_compliance:
                raise ConfigError("fix-compliant estimand requires compliance data")
            if not builder.include_compliance:
                raise ConfigError("fix-compliant estimand requires a model that includes compliance")
        c = 1 if self.fix_compliant else None
        return builder.build(data, index, treatment=arm, compliance=c)


# ---------------------------------------------------------------------------
# Posterior draw containers


@dataclass(frozen=True, eq=False)
class BlmDraws:
    builder: DesignBuilder
    beta: np.ndarray
    sigma2: np.ndarray

    def __len__(self) -> int:
        return self.beta.shape[0]

    def cate_matrix(self, data: Dataset, index, spec: EstimandSpec) -> np.ndarray:
        d1 = spec.counterfactual(self.builder, data, index, 1).values
        d0 = spec.counterfactual(self.builder, data, index, 0).values
        return self.beta @ (d1 - d0).T

    def draw(self, b: int) -> "BlmDraws":
        return BlmDraws(self.builder, self.beta[b:b + 1], self.sigma2[b:b + 1])


@dataclass(frozen=True, eq=False)
class BartDraws:
    builder: DesignBuilder
    ensembles: Sequence[bart.TreeEnsembleDraw]
    transform: OutcomeTransform

    def __len__(self) -> int:
        return len(self.ensembles)

    def cate_matrix(self, data: Dataset, index, spec: EstimandSpec) -> np.ndarray:
        x1 = spec.counterfactual(self.builder, data, index, 1)
        x0 = spec.counterfactual(self.builder, data, index, 0)
        out = np.empty((len(self.ensembles), x1.n))
        for b, e in enumerate(self.ensembles):
            out[b] = self.transform.scale * (e.raw_predict(x1.values) - e.raw_predict(x0.values))
        return out

    def draw(self, b: int) -> "BartDraws":
        return BartDraws(self.builder, [self.ensembles[b]], self.transform)


# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class BLMModel:
    """Conjugate linear model.

    ``hyper_source="block"`` rebuilds empirical-Bayes hyperparameters from
    each block being fit; ``"primary"`` freezes them at the primary source's.
    """

    formula: tuple[str, ...] | None = None
    include_compliance: bool = False
    hyper_source: str = "block"
    name: str = "blm"

    def __post_init__(self):
        if self.hyper_source not in ("block", "primary"):
            raise ConfigError("hyper_source must be 'block' or 'primary'")
        if self.formula is not None:
            object.__setattr__(self, "formula", tuple(self.formula))

    def builder(self, data: Dataset) -> DesignBuilder:
        return design_builder(data.covariate_names, self.formula, include_compliance=self.include_compliance)

    def predictor_count(self, data: Dataset) -> int:
        return self.builder(data).d

    def hyperparams(self, data: Dataset, index) -> blm.NIGHyperparams:
        builder = self.builder(data)
        if self.hyper_source == "primary":
            index = data.source_index(data.primary)
        return blm.default_hyperparams(builder.build(data, index), data.y[index])

    def block_log_marginal(self, data: Dataset, index, rng=None) -> float:
        D = self.builder(data).build(data, index)
        return blm.marginal_log_likelihood(D, data.y[index], self.hyperparams(data, index))

    def fit(self, data: Dataset, index, k: int, rng: np.random.Generator) -> BlmDraws:
        builder = self.builder(data)
        post = blm.posterior(builder.build(data, index), data.y[index], self.hyperparams(data, index))
        beta, sigma2 = blm.sample_coefficients(post, k, rng)
        return BlmDraws(builder, beta, sigma2)


@dataclass(frozen=True)
class BartModel:
    """Sum-of-trees model on the intercept-free predictors ``A, [C], X``.

    Outcomes are standardized per block.  Block marginals are reported on
    the original outcome scale (standardized log density minus
    ``n log(scale)``) so pooled and separate blocks are comparable.
    """

    overrides: dict = field(default_factory=dict)
    n_prior_draws: int = 100
    include_compliance: bool = False
    name: str = "bart"

    def builder(self, data: Dataset) -> DesignBuilder:
        return predictor_builder(data, include_compliance=self.include_compliance)

    def predictor_count(self, data: Dataset) -> int:
        return self.builder(data).d

    def config(self, X: np.ndarray, z: np.ndarray) -> bart.BartConfig:
        return bart.default_bart_config(X, z, **self.overrides)

    def _block(self, data: Dataset, index):
        X = self.builder(data).build(data, index).values
        z, transform = standardize_outcome(data.y[index])
        return X, z, transform

    def block_log_marginal(self, data: Dataset, index, rng: np.random.Generator) -> float:
        X, z, transform = self._block(data, index)
        cfg = self.config(X, z)
        lm = bart.marginal_log_likelihood_prior_mc(X, z, cfg, self.n_prior_draws, rng)
        return lm - z.size * math.log(transform.scale)

    def fit(self, data: Dataset, index, k: int, rng: np.random.Generator) -> BartDraws:
        X, z, transform = self._block(data, index)
        cfg = self.config(X, z)
        ensembles = bart.fit_mcmc(X, z, cfg, rng, n_keep=k)
        return BartDraws(self.builder(data), ensembles, transform)


def make_model(kind: str, **options):
    if kind == "blm":
        return BLMModel(**options)
    if kind == "bart":
        return BartModel(**options)
    raise ConfigError(f"unknown model {kind!r} (expected 'blm' or 'bart')")
