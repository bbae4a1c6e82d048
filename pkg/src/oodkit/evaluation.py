"""AUC-ROC protocol, repeated-trial grids and clipped score distributions."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .data import EncodedMatrix, SplitSpec, SyntheticSpec, encode, fit_encoding, generate_synthetic, split
from .errors import OODKitError
from .estimators import EstimatorConfig, fit

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 5
DEFAULT_BINS = 20


def auc_roc(in_scores, ood_scores) -> float:
    """Probability that a random OOD row outscores a random in-distribution row.

    Ties count one half (Mann-Whitney), which equals the trapezoidal ROC area.
    """
    a = np.asarray(in_scores, dtype=np.float64).ravel()
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("auc_roc needs non-empty score arrays")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("auc_roc received non-finite scores")
    greater, ties = _kernels.pair_counts(a, b)
    return (greater + 0.5 * ties) / (a.size * b.size)


@dataclass
class AUCResult:
    estimator: str
    group: str
    aucs: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # {"trial": t, "error": msg}

    @property
    def n_trials(self) -> int:
        return len(self.aucs)

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs)) if self.aucs else math.nan

    @property
    def std(self) -> float:
        # population std across trials
        return float(np.std(self.aucs)) if self.aucs else math.nan

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "group": self.group,
            "aucs": [float(a) for a in self.aucs],
            "mean": None if not self.aucs else self.mean,
            "std": None if not self.aucs else self.std,
            "n_trials": self.n_trials,
            "status": "failed" if self.failed else "ok",
            "errors": list(self.errors),
        }


@dataclass
class EvaluationGrid:
    estimators: list
    groups: list
    cells: dict  # (estimator, group) -> AUCResult
    trial_seeds: list
    config: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)  # estimator -> {"test": arr, group: arr} (first trial)

    def cell(self, estimator: str, group: str) -> AUCResult:
        return self.cells[(estimator, group)]

    @property
    def any_failed(self) -> bool:
        return any(c.failed for c in self.cells.values())

    def to_dict(self) -> dict:
        return {
            "estimators": list(self.estimators),
            "groups": list(self.groups),
            "trial_seeds": list(self.trial_seeds),
            "config": self.config,
            "cells": [self.cells[(e, g)].to_dict() for e in self.estimators for g in self.groups],
        }

    def rows(self):
        """Flat ``estimator,group,trial,auc`` records."""
        for e in self.estimators:
            for g in self.groups:
                for t, a in enumerate(self.cells[(e, g)].aucs):
                    yield {"estimator": e, "group": g, "trial": t, "auc": a}

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["estimator", "group", "trial", "auc"], lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({**r, "auc": repr(float(r["auc"]))})


def _as_values(m) -> np.ndarray:
    return m.values if isinstance(m, EncodedMatrix) else np.asarray(m, dtype=np.float64)


def _run_job(config: EstimatorConfig, seed: int, train, val, test, groups):
    est = fit(config.with_seed(seed), train, val)
    test_scores = est.score(test)
    group_scores = {name: est.score(g) for name, g in groups.items()}
    return test_scores, group_scores


def run_trials(
    configs: Sequence[EstimatorConfig],
    train,
    val,
    test,
    groups: Mapping[str, object],
    n_trials: int = DEFAULT_TRIALS,
    base_seed: int = 0,
    jobs: int = 1,
    config_snapshot: Optional[dict] = None,
) -> EvaluationGrid:
    """Refit every estimator ``n_trials`` times (seed ``base_seed + t``) and score all groups.

    A failing fit is recorded in the affected cells; it never aborts the grid.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ValueError(f"estimator names must be unique, got {names}")
    group_names = list(groups)
    seeds = [base_seed + t for t in range(n_trials)]
    grid = EvaluationGrid(
        names, group_names,
        {(e, g): AUCResult(e, g) for e in names for g in group_names},
        seeds, config_snapshot or {},
    )
    jobs_list = [(c, t) for c in configs for t in range(n_trials)]

    def work(item):
        c, t = item
        try:
            return item, _run_job(c, seeds[t], train, val, test, groups), None
        except (OODKitError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.warning("%s trial %d failed: %s", c.name, t, exc)
            return item, None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, jobs_list))
    else:
        results = [work(item) for item in jobs_list]

    # aggregation in job order keeps the grid independent of scheduling
    for (c, t), out, err in results:
        for g in group_names:
            cell = grid.cells[(c.name, g)]
            if err is not None:
                cell.errors.append({"trial": t, "error": err})
                continue
            test_scores, group_scores = out
            try:
                cell.aucs.append(auc_roc(test_scores, group_scores[g]))
            except ValueError as exc:
                cell.errors.append({"trial": t, "error": str(exc)})
        if out is not None and c.name not in grid.scores:
            grid.scores[c.name] = {"test": out[0], **out[1]}
    return grid


# --------------------------------------------------------------------------
# score distributions


@dataclass
class ScoreDistribution:
    estimator: str
    cohort: str
    clip: tuple
    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    def to_dict(self, include_values: bool = True) -> dict:
        d = {
            "estimator": self.estimator,
            "cohort": self.cohort,
            "clip": [float(self.clip[0]), float(self.clip[1])],
            "bin_edges": [float(x) for x in self.bin_edges],
            "counts": [int(c) for c in self.counts],
        }
        if include_values:
            d["values"] = [float(v) for v in self.values]
        return d

    def rows(self):
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            yield {"estimator": self.estimator, "cohort": self.cohort, "bin_left": lo, "bin_right": hi, "count": int(c)}


def score_distribution(
    estimator: str,
    test_scores,
    group_scores_by_name: Mapping[str, object],
    bins: int = DEFAULT_BINS,
) -> list[ScoreDistribution]:
    """Clip every cohort to the 5th-95th percentile of the in-distribution test
    scores and histogram it on ``bins`` equal-width bins over that range."""
    test_scores = np.asarray(test_scores, dtype=np.float64)
    if test_scores.size == 0:
        raise ValueError("test_scores must be non-empty")
    lo, hi = (float(v) for v in np.percentile(test_scores, [5.0, 95.0]))
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.linspace(lo - 0.5, lo + 0.5, bins + 1)
    out = []
    for cohort, scores in [("test", test_scores), *group_scores_by_name.items()]:
        clipped = np.clip(np.asarray(scores, dtype=np.float64), lo, hi)
        counts, _ = np.histogram(clipped, bins=edges)
        out.append(ScoreDistribution(estimator, cohort, (lo, hi), clipped, edges, counts))
    return out


def write_distributions_csv(dists: Sequence[ScoreDistribution], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["estimator", "cohort", "bin_left", "bin_right", "count"], lineterminator="\n")
        w.writeheader()
        for d in dists:
            for r in d.rows():
                w.writerow({**r, "bin_left": repr(float(r["bin_left"])), "bin_right": repr(float(r["bin_right"]))})


# --------------------------------------------------------------------------
# graded shifts


def shift_vector(n_continuous: int, magnitude: float, fraction: float = 0.25) -> tuple:
    """Shift the first ``ceil(fraction * n_continuous)`` continuous features by ``magnitude`` std."""
    k = math.ceil(fraction * n_continuous)
    return tuple(float(magnitude) if j < k else 0.0 for j in range(n_continuous))


def graded_shift_curve(
    configs: Sequence[EstimatorConfig],
    spec: SyntheticSpec,
    shift_magnitudes: Sequence[float],
    shifted_fraction: float = 0.25,
    split_spec: SplitSpec = SplitSpec(),
) -> dict[str, list[float]]:
    """AUC per shift magnitude for each estimator, from one fit per estimator.

    Every magnitude shifts the same underlying draws, so groups are nested
    shifts of one sample.
    """
    mags = [float(m) for m in shift_magnitudes]
    if not mags or mags[0] != 0.0 or any(b < a for a, b in zip(mags, mags[1:])):
        raise ValueError("shift magnitudes must be sorted ascending and start at 0")
    in_dist, _ = generate_synthetic(replace(spec, shift=None))
    train, val, test = split(in_dist, split_spec)
    enc = fit_encoding(train)
    Xtr, Xva, Xte = encode(train, enc), encode(val, enc), encode(test, enc)
    groups = []
    for m in mags:
        _, shifted = generate_synthetic(replace(spec, shift=shift_vector(spec.n_continuous, m, shifted_fraction)))
        groups.append(encode(shifted, enc))
    out = {}
    for c in configs:
        est = fit(c, Xtr, Xva)
        test_scores = est.score(Xte)
        out[c.name] = [auc_roc(test_scores, est.score(g)) for g in groups]
    return out
