"""Probabilistic PCA fitted in closed form."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import FitError
from ..nn import decode_array, encode_array
from .base import FittedEstimator

LOG_2PI = np.log(2.0 * np.pi)


def ppca_closed_form(X: np.ndarray, q: int):
    """Maximum-likelihood PPCA parameters ``(mu, W, sigma2)``.

    The noise variance is the mean of the ``d - q`` smallest eigenvalues of
    the sample covariance (``n - 1`` denominator), floored at
    ``1e-6 * trace(S) / d``.  ``q == d`` is accepted and reproduces the full
    sample covariance.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise FitError("ppca needs at least 2 rows")
    if not 1 <= q <= d:
        raise FitError(f"ppca: q={q} must satisfy 1 <= q <= d={d}")
    mu = X.mean(axis=0)
    S = np.cov(X, rowvar=False, ddof=1).reshape(d, d)
    S = 0.5 * (S + S.T)
    evals, evecs = np.linalg.eigh(S)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    scale = max(float(np.trace(S)) / d, np.finfo(float).tiny)
    if evals[-1] < -1e-9 * max(scale, abs(evals[0])):
        raise FitError(f"sample covariance is not positive semi-definite (min eigenvalue {evals[-1]:.3g})")
    evals = np.maximum(evals, 0.0)
    floor = 1e-6 * scale
    sigma2 = float(evals[q:].mean()) if q < d else floor
    sigma2 = max(sigma2, floor)
    W = evecs[:, :q] * np.sqrt(np.maximum(evals[:q] - sigma2, 0.0))
    return mu, W, sigma2


def ppca_log_likelihood(X: np.ndarray, mu: np.ndarray, W: np.ndarray, sigma2: float) -> np.ndarray:
    d = mu.shape[0]
    C = W @ W.T + sigma2 * np.eye(d)
    L = np.linalg.cholesky(C)
    z = np.linalg.solve(L, (X - mu).T)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (d * LOG_2PI + logdet + np.sum(z * z, axis=0))


class FittedPPCA(FittedEstimator):
    kind = "ppca"

    def __init__(self, config, mu, W, sigma2, encoding=None):
        super().__init__(config, mu.shape[0], encoding)
        self.mu, self.W, self.sigma2 = mu, W, float(sigma2)
        d = mu.shape[0]
        C = W @ W.T + self.sigma2 * np.eye(d)
        self._chol = np.linalg.cholesky(C)
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def log_likelihood(self, X: np.ndarray) -> np.ndarray:
        z = solve_triangular(self._chol, (X - self.mu).T, lower=True, check_finite=False)
        return -0.5 * (self.dim * LOG_2PI + self._logdet + np.sum(z * z, axis=0))

    def _score(self, X):
        return -self.log_likelihood(X)

    def params_to_dict(self):
        return {"mu": encode_array(self.mu), "W": encode_array(self.W), "sigma2": self.sigma2}

    @classmethod
    def from_params(cls, config, params, encoding=None):
        return cls(config, decode_array(params["mu"]), decode_array(params["W"]), params["sigma2"], encoding)


def fit_ppca(config, X: np.ndarray, encoding=None) -> FittedPPCA:
    q = int(config.params["q"])
    d = X.shape[1]
    if q >= d:
        raise FitError(f"ppca: q={q} must be smaller than the data dimension d={d}")
    mu, W, sigma2 = ppca_closed_form(X, q)
    return FittedPPCA(config, mu, W, sigma2, encoding)
