"""Local outlier factor in novelty mode."""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import FitError
from ..nn import decode_array, encode_array
from .base import FittedEstimator

# zero mean reachability distance (duplicate rows) is replaced before inversion
MIN_REACH = 1e-12


def _lrd(knn_dist: np.ndarray, knn_idx: np.ndarray, ref_kdist: np.ndarray) -> np.ndarray:
    reach = np.maximum(ref_kdist[knn_idx], knn_dist)
    mean_reach = reach.mean(axis=1)
    return 1.0 / np.where(mean_reach == 0.0, MIN_REACH, mean_reach)


def lof_reference(reference: np.ndarray, k: int):
    """k-distance and local reachability density of every reference row."""
    n = reference.shape[0]
    if not 1 <= k < n:
        raise FitError(f"lof: k={k} must satisfy 1 <= k < n_reference={n}")
    dist, idx = _kernels.knn(reference, reference, k, exclude_self=True)
    kdist = dist[:, -1].copy()
    return kdist, _lrd(dist, idx, kdist)


def lof_score(reference: np.ndarray, k: int, X: np.ndarray, _cache=None) -> np.ndarray:
    """Outlier factor of query rows against ``reference``.

    Queries are never part of the reference, so a query never counts as its
    own neighbour even when it coincides with a reference row.
    """
    reference = np.asarray(reference, dtype=np.float64)
    kdist, lrd_ref = _cache if _cache is not None else lof_reference(reference, k)
    dist, idx = _kernels.knn(reference, X, k)
    lrd_q = _lrd(dist, idx, kdist)
    return lrd_ref[idx].mean(axis=1) / lrd_q


class FittedLOF(FittedEstimator):
    kind = "lof"

    def __init__(self, config, reference: np.ndarray, k: int, encoding=None):
        super().__init__(config, reference.shape[1], encoding)
        self.reference = np.ascontiguousarray(reference, dtype=np.float64)
        self.k = int(k)
        self._cache = lof_reference(self.reference, self.k)

    def _score(self, X):
        return lof_score(self.reference, self.k, X, self._cache)

    def params_to_dict(self):
        return {"reference": encode_array(self.reference), "k": self.k}

    @classmethod
    def from_params(cls, config, params, encoding=None):
        return cls(config, decode_array(params["reference"]), params["k"], encoding)


def fit_lof(config, X: np.ndarray, encoding=None) -> FittedLOF:
    return FittedLOF(config, X.copy(), int(config.params["k"]), encoding)
