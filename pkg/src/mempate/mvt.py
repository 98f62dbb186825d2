"""Log densities of multivariate t distributions, evaluated through Cholesky factors."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln

from .errors import NumericalError


def robust_cholesky(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``S``; retries once with ``1e-10 * trace/n`` jitter."""
    try:
        return cholesky(S, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        n = S.shape[0]
        jitter = 1e-10 * np.trace(S) / n
        try:
            return cholesky(S + jitter * np.eye(n), lower=True)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"Cholesky factorization failed after jitter {jitter:.3g}: {e}") from None


def logpdf_chol(y: np.ndarray, loc, L: np.ndarray, dof: float) -> float:
    """Multivariate t log density given the lower Cholesky factor ``L`` of the shape matrix."""
    r = np.asarray(y, dtype=float) - loc
    n = r.shape[0]
    if n == 0:
        return 0.0
    z = solve_triangular(L, r, lower=True, check_finite=False)
    q = float(z @ z)
    half_logdet = float(np.sum(np.log(np.diag(L))))
    return float(
        gammaln(0.5 * (dof + n)) - gammaln(0.5 * dof) - 0.5 * n * np.log(dof * np.pi)
        - half_logdet - 0.5 * (dof + n) * np.log1p(q / dof)
    )


def logpdf(y, loc, shape: np.ndarray, dof: float) -> float:
    """log t_dof(y | loc, shape) for an n-vector ``y``."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] == 0:
        return 0.0
    L = robust_cholesky(np.asarray(shape, dtype=float))
    return logpdf_chol(y, loc, L, dof)


def quad_form_inv(L: np.ndarray, r: np.ndarray) -> float:
    return float(r @ cho_solve((L, True), r))
