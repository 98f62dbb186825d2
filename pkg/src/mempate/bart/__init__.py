"""Sum-of-trees outcome model with compiled kernels and a numpy fallback."""

from .backend import NAME as BACKEND
from .model import (BartConfig, CutGrid, Tree, TreeEnsembleDraw, default_bart_config, default_gamma, fit_mcmc,
                    marginal_log_likelihood_prior_mc, predict, sample_prior_trees, shared_node_correlation,
                    stump_closed_form)

__all__ = ["BACKEND", "BartConfig", "CutGrid", "Tree", "TreeEnsembleDraw", "default_bart_config", "default_gamma",
           "fit_mcmc", "marginal_log_likelihood_prior_mc", "predict", "sample_prior_trees",
           "shared_node_correlation", "stump_closed_form"]
