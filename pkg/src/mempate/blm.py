"""Conjugate Bayesian linear model with a normal-inverse-gamma prior.

Model::

    y = D beta + eps,  eps ~ N(0, sigma2 I)
    sigma2 ~ IG(a, b),  beta | sigma2 ~ N(mu, sigma2 V)

Empirical-Bayes defaults set ``mu = (ybar, 0, ..., 0)``,
``V = (D'D / n)^-1`` and pick ``(a, b)`` so that sigma2 has prior mean
``s2`` and variance ``2 s2^2``, where ``s2`` is the least-squares residual
variance.  For IG(a, b) the mean is ``b/(a-1)`` and the variance is
``b^2 / ((a-1)^2 (a-2))``; dividing the variance by the squared mean gives
``1/(a-2) = 2``, hence ``a = 2.5`` and ``b = 1.5 s2``.

The marginal likelihood of ``y`` is multivariate t with ``2a`` degrees of
freedom, location ``D mu`` and shape ``(b/a)(I + D V D')``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from . import mvt
from .data import DesignMatrix
from .errors import DegenerateFitError, NumericalError, SingularDesignError

PRIOR_SHAPE = 2.5
PRIOR_RATE_FACTOR = 1.5


def _values(design) -> np.ndarray:
    return design.values if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)


def _names(design, d):
    if isinstance(design, DesignMatrix):
        return design.column_names
    return tuple(f"col{j}" for j in range(d))


@dataclass(frozen=True, eq=False)
class NIGHyperparams:
    a: float
    b: float
    mu: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a > 0 and self.b > 0):
            raise ValueError(f"a and b must be finite and positive (a={self.a}, b={self.b})")
        if V.shape != (mu.size, mu.size):
            raise ValueError("V must be d x d with d = len(mu)")
        if not np.allclose(V, V.T, rtol=0, atol=1e-10 * max(1.0, np.abs(V).max())):
            raise ValueError("V must be symmetric")
        try:
            L = np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            raise ValueError("V must be positive definite") from None
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "_chol", L)

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def precision(self) -> np.ndarray:
        return cho_solve((self._chol, True), np.eye(self.d))


@dataclass(frozen=True, eq=False)
class NIGPosterior:
    a_n: float
    b_n: float
    mu_n: np.ndarray
    V_n: np.ndarray
    n: int = 0

    @property
    def d(self) -> int:
        return self.mu_n.size

    def as_prior(self) -> NIGHyperparams:
        return NIGHyperparams(self.a_n, self.b_n, self.mu_n, self.V_n)

    def sigma2_mean(self) -> float:
        if self.a_n <= 1:
            raise ValueError("posterior mean of sigma2 requires a_n > 1")
        return self.b_n / (self.a_n - 1)


def dependent_columns(D: np.ndarray, tol: float | None = None) -> list[int]:
    """Columns that are linear combinations of earlier columns."""
    dependent = []
    kept = []
    for j in range(D.shape[1]):
        trial = D[:, kept + [j]]
        if np.linalg.matrix_rank(trial, tol=tol) == len(kept) + 1:
            kept.append(j)
        else:
            dependent.append(j)
    return dependent


def least_squares(D: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Coefficients and unbiased residual variance ``SSR/(n-d)``."""
    n, d = D.shape
    beta, *_ = np.linalg.lstsq(D, y, rcond=None)
    resid = y - D @ beta
    return beta, float(resid @ resid) / (n - d)


def default_hyperparams(design, y) -> NIGHyperparams:
    D = _values(design)
    y = np.asarray(y, dtype=float)
    n, d = D.shape
    if n <= d:
        raise SingularDesignError(f"need more rows than columns for default hyperparameters (n={n}, d={d})")
    if np.linalg.matrix_rank(D) < d:
        dep = dependent_columns(D)
        names = _names(design, d)
        raise SingularDesignError(
            "design is rank deficient; dependent column(s): " + ", ".join(names[j] for j in dep), dep)
    _, s2 = least_squares(D, y)
    if not s2 > 1e-14 * max(float(np.var(y)), np.finfo(float).tiny):
        raise DegenerateFitError("least-squares residual variance is zero")
    mu = np.zeros(d)
    mu[0] = y.mean()
    G = D.T @ D / n
    V = np.linalg.inv(G)
    V = 0.5 * (V + V.T)
    return NIGHyperparams(PRIOR_SHAPE, PRIOR_RATE_FACTOR * s2, mu, V)


def posterior(design, y, prior: NIGHyperparams) -> NIGPosterior:
    """Conjugate update of ``prior`` by the rows ``(design, y)``."""
    D = _values(design).reshape(-1, prior.d)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = D.shape[0]
    if y.shape[0] != n:
        raise ValueError("design and y are not conformable")
    if n == 0:
        return NIGPosterior(prior.a, prior.b, prior.mu.copy(), prior.V.copy(), 0)
    P0 = prior.precision()
    Pn = P0 + D.T @ D
    try:
        Ln = np.linalg.cholesky(Pn)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(Pn) / prior.d
        try:
            Ln = np.linalg.cholesky(Pn + jitter * np.eye(prior.d))
        except np.linalg.LinAlgError:
            raise NumericalError("posterior precision is not positive definite "
                                 "(consider adding jitter to V)") from None
    V_n = cho_solve((Ln, True), np.eye(prior.d))
    V_n = 0.5 * (V_n + V_n.T)
    mu_n = cho_solve((Ln, True), P0 @ prior.mu + D.T @ y)
    # Equivalent to b + (y'y + mu'V^-1 mu - mu_n'V_n^-1 mu_n)/2, without the cancellation.
    resid = y - D @ mu_n
    dmu = mu_n - prior.mu
    b_n = prior.b + 0.5 * (float(resid @ resid) + float(dmu @ P0 @ dmu))
    return NIGPosterior(prior.a + 0.5 * n, b_n, mu_n, V_n, n)


def sample_coefficients(post: NIGPosterior, B: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``B`` joint draws: ``sigma2 ~ IG(a_n, b_n)``, ``beta | sigma2 ~ N(mu_n, sigma2 V_n)``.

    Returns ``(beta, sigma2)`` with shapes ``(B, d)`` and ``(B,)``.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    sigma2 = 1.0 / rng.gamma(post.a_n, 1.0 / post.b_n, size=B)
    L = np.linalg.cholesky(post.V_n)
    z = rng.standard_normal((B, post.d))
    beta = post.mu_n + np.sqrt(sigma2)[:, None] * (z @ L.T)
    return beta, sigma2


def marginal_shape(D: np.ndarray, prior: NIGHyperparams) -> np.ndarray:
    n = D.shape[0]
    S = np.eye(n) + D @ prior.V @ D.T
    return (prior.b / prior.a) * S


def marginal_log_likelihood(design, y, prior: NIGHyperparams) -> float:
    """log p(y | D) = log t_{2a}(y | D mu, (b/a)(I + D V D'))."""
    D = _values(design).reshape(-1, prior.d)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] == 0:
        return 0.0
    S = marginal_shape(D, prior)
    S = 0.5 * (S + S.T)
    return mvt.logpdf(y, D @ prior.mu, S, 2.0 * prior.a)


def gaussian_loglik(D: np.ndarray, y: np.ndarray, beta: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Normal log likelihood of ``y`` for a batch of ``(beta, sigma2)``; used by Monte Carlo checks."""
    n = y.shape[0]
    resid = y[None, :] - beta @ D.T
    return -0.5 * n * np.log(2 * np.pi * sigma2) - 0.5 * np.sum(resid**2, axis=1) / sigma2

