"""Pure numpy/scipy implementations of the compiled kernels.

Semantics match ``_kernels_c`` exactly: neighbours are ordered by distance
with ties broken by the lower reference index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

_CHUNK_CELLS = 4_000_000


def knn(reference: np.ndarray, query: np.ndarray, k: int, exclude_self: bool = False):
    """k nearest reference rows (Euclidean) for every query row.

    With ``exclude_self`` the query must be the reference itself and row i
    never lists itself as a neighbour.
    """
    reference = np.ascontiguousarray(reference, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    n_ref = reference.shape[0]
    limit = n_ref - 1 if exclude_self else n_ref
    if not 1 <= k <= limit:
        raise ValueError(f"k={k} must lie in [1, {limit}]")
    n_q = query.shape[0]
    dist = np.empty((n_q, k))
    idx = np.empty((n_q, k), dtype=np.int64)
    step = max(1, _CHUNK_CELLS // max(n_ref, 1))
    for start in range(0, n_q, step):
        stop = min(n_q, start + step)
        d = cdist(query[start:stop], reference)
        if exclude_self:
            d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        dist[start:stop] = np.take_along_axis(d, order, axis=1)
        idx[start:stop] = order
    return dist, idx


def pair_counts(in_scores: np.ndarray, ood_scores: np.ndarray):
    """Return (#pairs with ood > in, #tied pairs)."""
    s = np.sort(np.asarray(in_scores, dtype=np.float64))
    o = np.asarray(ood_scores, dtype=np.float64)
    lo = np.searchsorted(s, o, side="left")
    hi = np.searchsorted(s, o, side="right")
    return int(lo.sum()), int((hi - lo).sum())
