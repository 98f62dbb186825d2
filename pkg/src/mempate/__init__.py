"""Average treatment effects with borrowing from supplemental data sources.

Outcome models (a conjugate linear model and a sum-of-trees ensemble) are
combined across exchangeability patterns by Bayesian model averaging, and
the primary-source PATE is integrated with the Bayesian bootstrap.
"""

__version__ = "0.1.0"

from .data import Dataset, Schema, build_design, load_dataset, standardize_outcome
from .mem import ModelPrior, build_mem_space, enumerate_patterns, posterior_weights
from .models import BartModel, BLMModel, EstimandSpec
from .pate import pate_posterior, summarize

__all__ = ["BLMModel", "BartModel", "Dataset", "EstimandSpec", "ModelPrior", "Schema", "build_design",
           "build_mem_space", "enumerate_patterns", "load_dataset", "pate_posterior", "posterior_weights",
           "standardize_outcome", "summarize"]
