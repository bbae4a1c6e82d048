"""KernelSHAP over novelty scores and the two interpretability tests.

Coalitions are formed over raw features: a categorical feature's one-hot
block is switched on or off as a unit.  Features outside a coalition are
imputed from background rows (interventional imputation) and the coalition
value is the mean score over those rows.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .data import Dataset, EncodedMatrix, decode, encode, fit_encoding
from .errors import GroupError, SingularCoalitionError
from .estimators import EstimatorConfig, FittedEstimator, fit
from .predicate import PredicateLike, predicate_mask, predicate_text

logger = logging.getLogger(__name__)

MAX_BACKGROUND = 100
MAX_SPLIT_ROWS = 100
_ROWS_PER_CHUNK = 20_000


def default_coalitions(n_features: int) -> int:
    return 2 * n_features + 2048


@dataclass
class ShapAttribution:
    row_id: object
    base_value: float
    phi: np.ndarray
    feature_names: list
    target: float
    n_coalitions: int = 0
    exact: bool = False

    def local_accuracy_gap(self) -> float:
        return abs(self.base_value + float(np.sum(self.phi)) - self.target)

    def to_dict(self) -> dict:
        return {
            "row_id": _jsonable(self.row_id),
            "score": float(self.target),
            "base_value": float(self.base_value),
            "features": [{"name": n, "phi": float(p)} for n, p in zip(self.feature_names, self.phi)],
        }


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def _enumerate_all(M: int):
    masks, weights = [], []
    for s in range(1, M):
        w = (M - 1) / (comb(M, s) * s * (M - s))
        for subset in itertools.combinations(range(M), s):
            z = np.zeros(M, dtype=bool)
            z[list(subset)] = True
            masks.append(z)
            weights.append(w)
    return np.array(masks), np.array(weights)


def _sample_coalitions(M: int, budget: int, rng: np.random.Generator):
    """Enumerate whole coalition sizes while the budget allows, sample the rest.

    Sizes s and M - s are handled as a pair (each subset with its
    complement).  Sampled coalitions are drawn in proportion to the Shapley
    kernel's total weight per size, so they share the leftover weight mass in
    proportion to how often they were drawn.
    """
    n_sizes = M // 2 if M % 2 == 0 else (M - 1) // 2
    n_sizes = max(n_sizes, 1)
    n_paired = (M - 1) // 2
    sizes = np.arange(1, n_sizes + 1)
    w = (M - 1) / (sizes * (M - sizes))
    w[:n_paired] *= 2.0
    w /= w.sum()

    masks, weights = [], []
    remaining = w.copy()
    left = budget
    n_full = 0
    weight_left = 1.0
    for i, s in enumerate(sizes):
        paired = s <= n_paired
        n_sub = comb(M, s) * (2 if paired else 1)
        if left * remaining[i] / n_sub < 1.0 - 1e-8:
            break
        n_full += 1
        left -= n_sub
        weight_left -= w[i]
        each = w[i] / comb(M, s) / (2.0 if paired else 1.0)
        for subset in itertools.combinations(range(M), s):
            z = np.zeros(M, dtype=bool)
            z[list(subset)] = True
            masks.append(z)
            weights.append(each)
            if paired:
                masks.append(~z)
                weights.append(each)
        if remaining[i] < 1.0:
            remaining = remaining / (1.0 - remaining[i])

    if left > 0 and n_full < n_sizes:
        probs = w[n_full:] / w[n_full:].sum()
        counts: dict[bytes, int] = {}
        order: list[np.ndarray] = []
        guard = 0
        while len(order) < left and guard < 50 * budget:
            guard += 1
            s = int(sizes[n_full + rng.choice(len(probs), p=probs)])
            z = np.zeros(M, dtype=bool)
            z[rng.permutation(M)[:s]] = True
            pair = [z, ~z] if s <= n_paired else [z]
            for cand in pair:
                key = cand.tobytes()
                if key in counts:
                    counts[key] += 1
                elif len(order) < left:
                    counts[key] = 1
                    order.append(cand)
        total = sum(counts[z.tobytes()] for z in order)
        for z in order:
            masks.append(z)
            weights.append(weight_left * counts[z.tobytes()] / total)
    return np.array(masks), np.array(weights)


def coalition_plan(M: int, n_coalitions: int, rng: np.random.Generator):
    """Coalition masks (excluding empty/full) and their regression weights."""
    budget = n_coalitions - 2
    if M <= 30 and budget >= 2**M - 2:
        Z, w = _enumerate_all(M)
        return Z, w, True
    Z, w = _sample_coalitions(M, budget, rng)
    return Z, w, False


def _coalition_values(score_fn, bg: np.ndarray, x: np.ndarray, col_masks: np.ndarray) -> np.ndarray:
    B, d = bg.shape
    K = col_masks.shape[0]
    out = np.empty(K)
    step = max(1, _ROWS_PER_CHUNK // B)
    for start in range(0, K, step):
        cm = col_masks[start : start + step]
        rows = np.where(cm[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, d)
        out[start : start + len(cm)] = np.asarray(score_fn(rows), dtype=np.float64).reshape(len(cm), B).mean(axis=1)
    return out


def _solve(Z: np.ndarray, w: np.ndarray, y: np.ndarray, delta: float) -> np.ndarray:
    """Weighted least squares with the efficiency constraint sum(phi) = delta."""
    M = Z.shape[1]
    Zf = Z.astype(np.float64)
    A = Zf[:, :-1] - Zf[:, -1:]
    b = y - Zf[:, -1] * delta
    sw = np.sqrt(w)
    sol, _, rank, _ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    if rank < M - 1:
        raise SingularCoalitionError(
            f"coalition design has rank {rank} < {M - 1}; increase n_coalitions"
        )
    return np.append(sol, delta - sol.sum())


def kernel_shap(
    score_fn: Callable[[np.ndarray], np.ndarray],
    background: Union[EncodedMatrix, np.ndarray],
    x,
    n_coalitions: Optional[int] = None,
    seed: int = 0,
    groups: Optional[Sequence[np.ndarray]] = None,
    feature_names: Optional[Sequence[str]] = None,
    row_id=None,
) -> ShapAttribution:
    """Shapley attribution of ``score_fn(x)`` to raw features.

    Parameters
    ----------
    score_fn
        Maps an (n, d) encoded matrix to n scores. Must be reentrant.
    background
        Rows used to impute absent features; at most 100 are used (seeded
        subsample).  When it is an :class:`EncodedMatrix`, the encoding's
        feature groups and names define the raw features.
    n_coalitions
        Coalition budget including the empty and full coalitions, which enter
        as constraints.  Defaults to ``2 M + 2048``.  When the budget covers
        all ``2^M`` coalitions they are enumerated and the result equals the
        exact Shapley values.
    """
    if isinstance(background, EncodedMatrix):
        enc = background.encoding
        groups = groups if groups is not None else enc.groups
        feature_names = feature_names if feature_names is not None else enc.schema.names
        bg = background.values
    else:
        bg = np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or bg.shape[0] == 0:
        raise ValueError("background must be a non-empty 2-D matrix")
    d = bg.shape[1]
    if groups is None:
        groups = [np.array([j]) for j in range(d)]
    groups = [np.asarray(g, dtype=int) for g in groups]
    M = len(groups)
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(M)]
    if n_coalitions is None:
        n_coalitions = default_coalitions(M)
    if n_coalitions < 2 * M + 2:
        raise ValueError(f"n_coalitions={n_coalitions} must be at least 2*M+2 = {2 * M + 2}")

    if isinstance(x, EncodedMatrix):
        row_id = x.row_ids[0] if row_id is None else row_id
        x = x.values[0]
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != d:
        raise ValueError(f"row has width {x.shape[0]}, background has {d}")

    rng = np.random.default_rng(seed)
    if bg.shape[0] > MAX_BACKGROUND:
        bg = bg[np.sort(rng.choice(bg.shape[0], MAX_BACKGROUND, replace=False))]

    fx = float(np.asarray(score_fn(x[None, :]), dtype=np.float64)[0])
    base = float(np.mean(score_fn(bg)))
    delta = fx - base
    if M == 1:
        return ShapAttribution(row_id, base, np.array([delta]), list(feature_names), fx, n_coalitions, True)

    Z, w, exact = coalition_plan(M, n_coalitions, rng)
    col_masks = np.zeros((Z.shape[0], d), dtype=bool)
    for j, g in enumerate(groups):
        col_masks[:, g] = Z[:, j : j + 1]
    v = _coalition_values(score_fn, bg, x, col_masks)
    phi = _solve(Z, w, v - base, delta)
    return ShapAttribution(row_id, base, phi, list(feature_names), fx, n_coalitions, exact)


# --------------------------------------------------------------------------
# interpretability test A: rank of the split feature


@dataclass
class SplitFeatureResult:
    split_feature: str
    estimator: str
    rank: int
    ranking: list  # [(feature, mean |phi|)] descending
    predicate: str = ""
    n_in: int = 0
    n_ood: int = 0
    n_explained: int = 0

    def to_dict(self) -> dict:
        return {
            "split_feature": self.split_feature,
            "estimator": self.estimator,
            "rank": self.rank,
            "predicate": self.predicate,
            "n_in": self.n_in,
            "n_ood": self.n_ood,
            "n_explained": self.n_explained,
            "ranking": [{"feature": f, "mean_abs_phi": float(v)} for f, v in self.ranking],
        }


def rank_features(names: Sequence[str], mean_abs: np.ndarray) -> list:
    order = sorted(range(len(names)), key=lambda j: (-mean_abs[j], j))
    return [(names[j], float(mean_abs[j])) for j in order]


def split_feature_rank(
    pool: Dataset,
    split_feature: str,
    threshold_predicate: PredicateLike,
    estimator_config: EstimatorConfig,
    seed: int = 0,
    n_coalitions: Optional[int] = None,
    max_rows: int = MAX_SPLIT_ROWS,
    val_fraction: float = 0.15,
) -> SplitFeatureResult:
    """Fit on rows where the predicate is false, explain the top-scoring rows
    where it is true, and report where ``split_feature`` lands in the
    mean-|phi| ranking (1 = most important)."""
    if split_feature not in pool.schema:
        raise GroupError(f"split feature {split_feature!r} is not in the schema")
    mask = predicate_mask(threshold_predicate, pool)
    if mask.all() or not mask.any():
        raise GroupError(
            f"predicate {predicate_text(threshold_predicate)!r} does not partition the pool into two non-empty cohorts"
        )
    in_dist, ood = pool.subset(~mask), pool.subset(mask)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(in_dist))
    n_val = int(round(val_fraction * len(in_dist))) if len(in_dist) >= 10 else 0
    train, val = in_dist.subset(np.sort(perm[n_val:])), in_dist.subset(np.sort(perm[:n_val]))
    enc = fit_encoding(train)
    Xtr = encode(train, enc)
    est = fit(estimator_config.with_seed(seed), Xtr, encode(val, enc) if len(val) else None)
    Xood = encode(ood, enc)
    scores = est.score(Xood)
    top = np.argsort(-scores, kind="stable")[: min(max_rows, len(ood))]
    names = enc.schema.names
    total = np.zeros(len(names))
    for i, r in enumerate(top):
        att = kernel_shap(est.score, Xtr, Xood.values[r], n_coalitions, seed + i, row_id=Xood.row_ids[r])
        total += np.abs(att.phi)
    mean_abs = total / len(top)
    ranking = rank_features(names, mean_abs)
    rank = 1 + [f for f, _ in ranking].index(split_feature)
    return SplitFeatureResult(
        split_feature, est.name, rank, ranking, predicate_text(threshold_predicate),
        len(in_dist), len(ood), len(top),
    )


# --------------------------------------------------------------------------
# interpretability test B: explanations of the strongest outliers


@dataclass
class OutlierExplanation:
    row_id: object
    score: float
    base_value: float
    features: list = field(default_factory=list)  # dicts: name, phi, value, in_dist_mean

    def to_dict(self) -> dict:
        return {
            "row_id": _jsonable(self.row_id),
            "score": float(self.score),
            "base_value": float(self.base_value),
            "features": [dict(f) for f in self.features],
        }


def _in_dist_summary(background: EncodedMatrix) -> dict:
    raw = decode(background)
    out = {}
    for f in raw.schema.features:
        col = raw.columns[f.name]
        if f.is_categorical:
            out[f.name] = {level: float(np.mean(col == level)) for level in f.levels}
        else:
            out[f.name] = float(np.mean(col))
    return out


def explain_outliers(
    est: FittedEstimator,
    test: EncodedMatrix,
    background: EncodedMatrix,
    top_n: int,
    top_k_features: int = 5,
    n_coalitions: Optional[int] = None,
    seed: int = 0,
) -> list[OutlierExplanation]:
    """Explain the ``top_n`` highest-scoring test rows.

    For each row the ``top_k_features`` raw features by |phi| are listed with
    the row's raw value and the in-distribution reference: the mean for a
    continuous feature, the background frequency of the row's level for a
    categorical one.
    """
    if top_n > len(test):
        raise ValueError(f"top_n={top_n} exceeds the {len(test)} test rows")
    if top_n <= 0:
        return []
    scores = est.score(test)
    top = np.argsort(-scores, kind="stable")[:top_n]
    summary = _in_dist_summary(background)
    raw = decode(test.subset(top))
    schema = test.encoding.schema
    out = []
    for i, r in enumerate(top):
        att = kernel_shap(est.score, background, test.values[r], n_coalitions, seed + i, row_id=test.row_ids[r])
        order = sorted(range(len(att.phi)), key=lambda j: (-abs(att.phi[j]), j))[:top_k_features]
        feats = []
        for j in order:
            f = schema.features[j]
            value = raw.columns[f.name][i]
            ref = summary[f.name][value] if f.is_categorical else summary[f.name]
            feats.append({
                "name": f.name,
                "phi": float(att.phi[j]),
                "value": value if f.is_categorical else float(value),
                "in_dist_mean": ref,
            })
        out.append(OutlierExplanation(test.row_ids[r], float(scores[r]), att.base_value, feats))
    return out


def write_rank_csv(results: Sequence[SplitFeatureResult], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "split_feature", "rank", "n_features", "mean_abs_phi"])
        for r in results:
            phi = dict(r.ranking)[r.split_feature]
            w.writerow([r.estimator, r.split_feature, r.rank, len(r.ranking), repr(float(phi))])
