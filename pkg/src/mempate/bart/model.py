"""Sum-of-trees regression: configuration, MCMC, prediction and the prior Monte Carlo evidence.

Outcomes are assumed standardized (mean 0, range 1).  Two terminal-node
priors are supported:

* ``"default"``: leaf values iid N(0, tau2), with ``tau = 0.5 / (k sqrt(m))``.
* ``"modified"``: leaf values iid N(0, sigma2 / gamma).  sigma2 then factors
  out of the marginal covariance, and for fixed tree structures ``y`` is
  multivariate t with ``nu`` degrees of freedom and shape ``lam * U`` where
  ``U = (m / gamma) R + I`` and ``R`` is the leaf co-occurrence matrix.

Leaf-value conditional under the modified prior: with ``n_l`` residuals
summing to ``s`` in a leaf, the posterior of the leaf value given sigma2 is
normal with precision ``(n_l + gamma) / sigma2`` and mean ``s / (n_l + gamma)``
(complete the square in ``-(sum (r_i - mu)^2 + gamma mu^2) / (2 sigma2)``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .. import mvt
from ..data import IDENTITY, DesignMatrix, OutcomeTransform
from ..errors import BartError, DegenerateFitError
from . import backend

log = logging.getLogger(__name__)

NODE_PRIORS = ("modified", "default")


def _values(design) -> np.ndarray:
    v = design.values if isinstance(design, DesignMatrix) else design
    return np.ascontiguousarray(v, dtype=float)


@dataclass(frozen=True)
class BartConfig:
    """Prior and sampler settings.

    ``alpha`` / ``beta_depth`` give the probability ``alpha (1 + d)^-beta_depth``
    that a node at depth ``d`` splits.  ``lam`` is the inverse-gamma scale:
    ``sigma2 ~ IG(nu/2, nu*lam/2)``.  ``move_probs`` are the grow / prune /
    change proposal weights; change moves are off unless ``change_moves``.
    """

    m: int = 200
    node_prior: str = "modified"
    gamma: float | None = None
    tau2: float | None = None
    nu: float = 3.0
    lam: float = 1.0
    alpha: float = 0.95
    beta_depth: float = 2.0
    n_cuts: int = 100
    n_burn: int = 100
    n_keep: int = 100
    max_depth: int = 10
    change_moves: bool = False
    move_probs: tuple[float, float, float] = (0.5, 0.5, 0.0)
    sigma2_init: float | None = None

    def __post_init__(self):
        if self.m < 1:
            raise BartError("m must be >= 1")
        if self.node_prior not in NODE_PRIORS:
            raise BartError(f"node_prior must be one of {NODE_PRIORS}")
        if self.node_prior == "modified" and not (self.gamma is not None and self.gamma > 0):
            raise BartError("modified node prior needs gamma > 0")
        if self.node_prior == "default" and not (self.tau2 is not None and self.tau2 > 0):
            raise BartError("default node prior needs tau2 > 0")
        if not (self.nu > 0 and self.lam > 0):
            raise BartError("nu and lam must be positive")
        if not (0 <= self.alpha < 1) or self.beta_depth < 0:
            raise BartError("need 0 <= alpha < 1 and beta_depth >= 0")
        if self.n_cuts < 1 or self.n_burn < 0 or self.n_keep < 0:
            raise BartError("invalid cut grid size or draw counts")
        if not 1 <= self.max_depth <= 20:
            raise BartError("max_depth must lie in [1, 20]")

    @property
    def modified(self) -> bool:
        return self.node_prior == "modified"

    @property
    def proposal_weights(self) -> tuple[float, float, float]:
        g, p, c = self.move_probs
        if self.change_moves:
            if c <= 0:
                g, p, c = 0.4, 0.4, 0.2
        else:
            c = 0.0
        return float(g), float(p), float(c)


def sigma2_hat(X: np.ndarray, y: np.ndarray) -> float:
    """Residual variance from least squares of ``y`` on ``[1, X]``."""
    n = X.shape[0]
    D = np.column_stack([np.ones(n), X])
    beta, *_ = np.linalg.lstsq(D, y, rcond=None)
    rank = np.linalg.matrix_rank(D)
    resid = y - D @ beta
    dof = n - rank
    if dof <= 0:
        return float(np.var(y, ddof=1))
    return float(resid @ resid) / dof


GAMMA_RULES = ("inverse", "matched")


def default_gamma(m: int, s2: float, rule: str = "inverse") -> float:
    """Leaf precision factor for the modified node prior.

    ``"inverse"``: ``gamma = 1 / (16 m s2)``, so ``gamma * s2 = 1/(16 m)``.
    ``"matched"``: ``gamma = 16 m s2``, so the leaf variance ``sigma2/gamma``
    at ``sigma2 = s2`` equals the default-prior leaf variance ``1/(16 m)``.
    """
    if rule == "inverse":
        return 1.0 / (16.0 * m * s2)
    if rule == "matched":
        return 16.0 * m * s2
    raise BartError(f"gamma rule must be one of {GAMMA_RULES}")


def default_bart_config(design, y, *, m: int = 200, k: float = 2.0, nu: float = 3.0, q: float = 0.9,
                        node_prior: str = "modified", gamma_rule: str = "matched", **overrides) -> BartConfig:
    """Data-informed defaults for a standardized outcome ``y``.

    ``lam`` puts prior mass ``q`` of sigma2 below the least-squares residual
    variance ``s2``; ``gamma`` follows ``gamma_rule`` (see
    :func:`default_gamma`); ``tau = 0.5 / (k sqrt(m))``.
    """
    X = _values(design)
    y = np.asarray(y, dtype=float)
    s2 = sigma2_hat(X, y)
    # relative tolerance: an exact fit leaves rounding-level residuals
    if not s2 > 1e-12 * max(float(np.var(y)), np.finfo(float).tiny):
        raise DegenerateFitError("least-squares residual variance is zero")
    # P(sigma2 < s2) = q  with  sigma2 = nu*lam / chi2_nu
    lam = float(s2 * stats.chi2.ppf(1.0 - q, nu) / nu)
    gamma = default_gamma(m, s2, gamma_rule)
    tau = 0.5 / (k * math.sqrt(m))
    cfg = dict(m=m, node_prior=node_prior, gamma=gamma, tau2=tau * tau, nu=float(nu), lam=lam, sigma2_init=s2)
    cfg.update(overrides)
    return BartConfig(**cfg)


# ---------------------------------------------------------------------------
# Cutpoint grids


@dataclass(frozen=True, eq=False)
class CutGrid:
    """Per-variable sorted cutpoints, flattened with offsets for the kernels."""

    values: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_data(cls, X: np.ndarray, n_cuts: int = 100) -> "CutGrid":
        grids = []
        for v in range(X.shape[1]):
            u = np.unique(X[:, v])
            if u.size <= n_cuts:
                grids.append(u)
            else:
                probs = np.arange(1, n_cuts + 1) / (n_cuts + 1)
                grids.append(np.unique(np.quantile(X[:, v], probs)))
        offsets = np.zeros(len(grids) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([g.size for g in grids])
        values = np.concatenate(grids) if grids else np.zeros(0)
        return cls(values, offsets)

    def grid(self, v: int) -> np.ndarray:
        return self.values[self.offsets[v]:self.offsets[v + 1]]

    def bin(self, X: np.ndarray) -> np.ndarray:
        xb = np.empty(X.shape, dtype=np.int32)
        for v in range(X.shape[1]):
            xb[:, v] = np.searchsorted(self.grid(v), X[:, v], side="left")
        return np.ascontiguousarray(xb)


# ---------------------------------------------------------------------------
# Trees


@dataclass(frozen=True, eq=False)
class Tree:
    """One binary tree in compact form; node 0 is the root.

    Interior nodes carry ``var >= 0`` and route ``x[var] <= cut`` to
    ``left``; leaves carry ``var == -1`` and a terminal ``value``.
    """

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def stump(cls, value: float = 0.0) -> "Tree":
        return cls(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32),
                   np.array([-1], np.int32), np.array([float(value)]))

    @classmethod
    def single_split(cls, var: int, cut: float, left_value: float, right_value: float) -> "Tree":
        return cls(np.array([var, -1, -1], np.int32), np.array([cut, 0.0, 0.0]),
                   np.array([1, -1, -1], np.int32), np.array([2, -1, -1], np.int32),
                   np.array([0.0, left_value, right_value]))

    @property
    def n_nodes(self) -> int:
        return self.var.size

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.var < 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.var[k] >= 0:
                depth[self.left[k]] = depth[k] + 1
                depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        ptr = np.array([0, self.n_nodes], dtype=np.int64)
        return backend.kernels.leaf_index(ptr, self.var, self.cut, self.left, self.right, X)[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]


def pack_trees(trees: Sequence[Tree]):
    sizes = [t.n_nodes for t in trees]
    ptr = np.zeros(len(trees) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(sizes)
    cat = lambda name, dt: np.ascontiguousarray(np.concatenate([getattr(t, name) for t in trees]).astype(dt))
    return ptr, cat("var", np.int32), cat("cut", float), cat("left", np.int32), cat("right", np.int32), cat("value", float)


@dataclass(frozen=True, eq=False)
class TreeEnsembleDraw:
    """One posterior draw: ``m`` packed trees and sigma2 (standardized scale)."""

    tree_ptr: np.ndarray
    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    sigma2: float
    n_vars: int | None = None

    @classmethod
    def from_trees(cls, trees: Sequence[Tree], sigma2: float = 1.0, n_vars: int | None = None):
        return cls(*pack_trees(trees), sigma2=sigma2, n_vars=n_vars)

    @property
    def m(self) -> int:
        return self.tree_ptr.size - 1

    @property
    def trees(self) -> list[Tree]:
        out = []
        for j in range(self.m):
            s = slice(self.tree_ptr[j], self.tree_ptr[j + 1])
            out.append(Tree(self.var[s], self.cut[s], self.left[s], self.right[s], self.value[s]))
        return out

    def raw_predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if self.n_vars is not None and X.shape[1] != self.n_vars:
            raise BartError(f"rows have {X.shape[1]} columns; ensemble was trained on {self.n_vars}")
        return backend.kernels.predict(self.tree_ptr, self.var, self.cut, self.left, self.right, self.value, X)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return backend.kernels.leaf_index(self.tree_ptr, self.var, self.cut, self.left, self.right, X)


def predict(draw: TreeEnsembleDraw, rows, transform: OutcomeTransform | None = None) -> np.ndarray:
    """Sum of terminal values per row, mapped back to outcome units by ``transform``."""
    z = draw.raw_predict(_values(rows))
    return (transform or IDENTITY).inverse(z)


def shared_node_correlation(trees: Sequence[Tree] | TreeEnsembleDraw, rows) -> np.ndarray:
    """Fraction of trees in which each pair of rows shares a terminal node."""
    draw = trees if isinstance(trees, TreeEnsembleDraw) else TreeEnsembleDraw.from_trees(trees)
    if draw.m < 1:
        raise BartError("need at least one tree")
    leaves = np.ascontiguousarray(draw.leaf_index(_values(rows)), dtype=np.int32)
    return backend.kernels.cooccurrence(leaves)


# ---------------------------------------------------------------------------
# MCMC


@dataclass
class ForestState:
    kind: np.ndarray
    var: np.ndarray
    cut: np.ndarray
    val: np.ndarray
    leaf_of: np.ndarray
    top: np.ndarray
    nleaves: np.ndarray
    fit: np.ndarray
    sigma2: float

    @classmethod
    def stumps(cls, m: int, n: int, max_depth: int, sigma2: float) -> "ForestState":
        C = 2 ** (max_depth + 1) - 1
        kind = np.zeros((m, C), dtype=np.int8)
        kind[:, 0] = 1
        return cls(kind, np.full((m, C), -1, np.int32), np.full((m, C), -1, np.int32),
                   np.zeros((m, C)), np.zeros((m, n), np.int32), np.ones(m, np.int32),
                   np.ones(m, np.int32), np.zeros(n), float(sigma2))

    def leaf_value_stats(self) -> tuple[int, float]:
        leaf = self.kind == 1
        v = self.val[leaf]
        return int(leaf.sum()), float(v @ v)


def check_partition(state: ForestState, xb: np.ndarray) -> None:
    """Assert every training row sits in exactly the leaf its path selects."""
    m, n = state.leaf_of.shape
    for j in range(m):
        node = np.zeros(n, dtype=np.int64)
        for _ in range(state.kind.shape[1].bit_length()):
            interior = state.kind[j, node] == 2
            if not interior.any():
                break
            v = state.var[j, node[interior]]
            go_left = xb[np.flatnonzero(interior), v] <= state.cut[j, node[interior]]
            node[interior] = 2 * node[interior] + np.where(go_left, 1, 2)
        if not np.all(state.kind[j, node] == 1):
            raise AssertionError(f"tree {j}: a row path ends outside a leaf")
        if not np.array_equal(node, state.leaf_of[j]):
            raise AssertionError(f"tree {j}: cached leaf assignment disagrees with the tree rules")
        counts = np.bincount(state.leaf_of[j], minlength=state.kind.shape[1])
        if np.any(counts[state.kind[j] == 1] == 0):
            raise AssertionError(f"tree {j}: empty leaf")
        if int((state.kind[j] == 1).sum()) != state.nleaves[j]:
            raise AssertionError(f"tree {j}: leaf count out of sync")


@dataclass
class MCMCTrace:
    sigma2: list = field(default_factory=list)
    move_counts: np.ndarray = field(default_factory=lambda: np.zeros(6, dtype=np.int64))


def fit_mcmc(design, y, config: BartConfig, rng: np.random.Generator, *, check: bool = False,
             kernels=None, trace: MCMCTrace | None = None, n_keep: int | None = None) -> list[TreeEnsembleDraw]:
    """Run ``n_burn + n_keep`` backfitting sweeps and return the kept draws.

    Each sweep updates every tree with one grow / prune (/ change) proposal,
    node values integrated out, then redraws that tree's node values; sigma2
    is redrawn from its inverse-gamma full conditional at the end of the
    sweep.  ``check=True`` verifies the partition invariant after each sweep.
    """
    K = kernels or backend.kernels
    X = _values(design)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    if n < 2 or y.shape != (n,):
        raise BartError("need n >= 2 rows and a matching outcome vector")
    grid = CutGrid.from_data(X, config.n_cuts)
    xb = grid.bin(X)
    if p == 0 or not np.any(xb.max(axis=0) > xb.min(axis=0)):
        raise BartError("all predictors are constant; no split is possible")
    keep = config.n_keep if n_keep is None else n_keep
    m = config.m
    sigma2 = config.sigma2_init if config.sigma2_init else float(np.var(y))
    state = ForestState.stumps(m, n, config.max_depth, sigma2)
    pg, pp, pc = config.proposal_weights
    gamma = config.gamma if config.gamma is not None else 1.0
    tau2 = config.tau2 if config.tau2 is not None else 1.0
    counts = np.zeros(6, dtype=np.int64)
    draws = []
    for it in range(config.n_burn + keep):
        u = rng.random((m, 5))
        z = rng.standard_normal((m, int(state.nleaves.max()) + 1))
        K.sweep(xb, y, state.fit, state.kind, state.var, state.cut, state.val, state.leaf_of,
                state.top, state.nleaves, state.sigma2, config.modified, gamma, tau2,
                config.alpha, config.beta_depth, config.max_depth, pg, pp, pc, u, z, counts)
        resid = y - state.fit
        shape = 0.5 * (config.nu + n)
        rate = 0.5 * (config.nu * config.lam + float(resid @ resid))
        if config.modified:
            n_leaves, ss_leaves = state.leaf_value_stats()
            shape += 0.5 * n_leaves
            rate += 0.5 * gamma * ss_leaves
        state.sigma2 = rate / rng.gamma(shape)
        if check:
            check_partition(state, xb)
        if trace is not None:
            trace.sigma2.append(state.sigma2)
        if it >= config.n_burn:
            packed = K.compact(state.kind, state.var, state.cut, state.val, state.top,
                               grid.values, grid.offsets)
            draws.append(TreeEnsembleDraw(*packed, sigma2=state.sigma2, n_vars=p))
    if trace is not None:
        trace.move_counts += counts
    return draws


# ---------------------------------------------------------------------------
# Tree prior and the prior Monte Carlo marginal likelihood


def _prior_forest_leaves(xb: np.ndarray, config: BartConfig, rng: np.random.Generator, K):
    size = max(64, 8 * config.m)
    while True:
        u = rng.random(size)
        out = K.sample_forest(xb, config.m, config.alpha, config.beta_depth, config.max_depth, u)
        if out is not None:
            return out
        size *= 4


def sample_prior_trees(config: BartConfig, design, rng: np.random.Generator, *, kernels=None) -> list[Tree]:
    """``m`` tree structures drawn from the tree prior (node values left at 0)."""
    K = kernels or backend.kernels
    X = _values(design)
    grid = CutGrid.from_data(X, config.n_cuts)
    xb = grid.bin(X)
    kind, var, cut, _, top, _ = _prior_forest_leaves(xb, config, rng, K)
    packed = K.compact(kind, var, cut, np.zeros(kind.shape), top, grid.values, grid.offsets)
    return TreeEnsembleDraw(*packed, sigma2=1.0, n_vars=X.shape[1]).trees


def stump_closed_form(y, config: BartConfig) -> float:
    """log t_nu(y | 0, lam [(m/gamma) 11' + I]) via the rank-one determinant and inverse identities."""
    y = np.asarray(y, dtype=float)
    n = y.size
    c = config.m / config.gamma
    nu, lam = config.nu, config.lam
    logdet_U = math.log1p(n * c)
    s = float(y.sum())
    quad = (float(y @ y) - c * s * s / (1.0 + n * c)) / lam
    return (math.lgamma(0.5 * (nu + n)) - math.lgamma(0.5 * nu) - 0.5 * n * math.log(nu * math.pi)
            - 0.5 * n * math.log(lam) - 0.5 * logdet_U - 0.5 * (nu + n) * math.log1p(quad / nu))


def marginal_log_likelihood_prior_mc(design, y, config: BartConfig, n_prior_draws: int = 100,
                                     rng: np.random.Generator | None = None, *, kernels=None,
                                     return_draws: bool = False):
    """Prior Monte Carlo estimate of log p(y) under the modified node prior.

    For each of ``n_prior_draws`` tree sets from the tree prior, evaluates
    log t_nu(y | 0, lam U) with ``U = (m/gamma) R + I``; returns the
    log-mean-exp of these values.
    """
    if not config.modified:
        raise BartError("the prior Monte Carlo marginal likelihood requires the modified node prior")
    if n_prior_draws < 1:
        raise BartError("n_prior_draws must be >= 1")
    K = kernels or backend.kernels
    rng = rng if rng is not None else np.random.default_rng()
    X = _values(design)
    y = np.asarray(y, dtype=float)
    n = y.size
    grid = CutGrid.from_data(X, config.n_cuts)
    xb = grid.bin(X)
    scale = config.m / config.gamma
    logs = np.empty(n_prior_draws)
    eye = np.eye(n)
    for b in range(n_prior_draws):
        leaf_of = _prior_forest_leaves(xb, config, rng, K)[3]
        R = K.cooccurrence(leaf_of)
        U = scale * R + eye
        logs[b] = mvt.logpdf(y, 0.0, config.lam * U, config.nu)
    est = float(logsumexp(logs) - math.log(n_prior_draws))
    return (est, logs) if return_draws else est


def with_overrides(config: BartConfig, **kw) -> BartConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
