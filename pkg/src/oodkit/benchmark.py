"""Single-sample timing of novelty inference and SHAP explanation."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .attribution import kernel_shap
from .data import EncodedMatrix
from .estimators import FittedEstimator

WARMUP = 10
DEFAULT_INFERENCE_REPS = 1000
DEFAULT_SHAP_REPS = 5

TIMING_COLUMNS = [
    "estimator",
    "metric",
    "inference_mean_s",
    "inference_std_s",
    "shap_mean_s",
    "shap_std_s",
    "n_inference",
    "n_shap",
]

CLOCK_NOTE = (
    "times are monotonic wall-clock seconds (time.perf_counter) for one sample, "
    "not user-CPU seconds"
)


@dataclass
class TimingRow:
    estimator: str
    metric: str
    inference_mean_s: float
    inference_std_s: float
    shap_mean_s: float
    shap_std_s: float
    n_inference: int
    n_shap: int

    def to_dict(self) -> dict:
        return {c: getattr(self, c) for c in TIMING_COLUMNS}


def _one_row(sample) -> np.ndarray:
    values = sample.values if isinstance(sample, EncodedMatrix) else np.asarray(sample, dtype=np.float64)
    return values.reshape(1, -1)[:1] if values.ndim == 1 else values[:1]


def _stats(times: list) -> tuple[float, float]:
    t = np.asarray(times)
    return float(t.mean()), float(t.std())


def time_inference(est: FittedEstimator, sample, n_reps: int = DEFAULT_INFERENCE_REPS) -> tuple[float, float]:
    """Mean and std seconds of scoring one row, after warm-up calls."""
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    x = _one_row(sample)
    for _ in range(WARMUP):
        est.score(x)
    times = []
    for _ in range(n_reps):
        t0 = time.perf_counter()
        est.score(x)
        times.append(time.perf_counter() - t0)
    return _stats(times)


def time_shap(
    est: FittedEstimator, sample, background: EncodedMatrix, n_reps: int = DEFAULT_SHAP_REPS, seed: int = 0
) -> tuple[float, float]:
    """Mean and std seconds of one full KernelSHAP explanation of one row."""
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    x = _one_row(sample)[0]
    times = []
    for _ in range(n_reps):
        t0 = time.perf_counter()
        kernel_shap(est.score, background, x, seed=seed)
        times.append(time.perf_counter() - t0)
    return _stats(times)


def benchmark(
    estimators: Sequence[FittedEstimator],
    sample,
    background: EncodedMatrix,
    n_inference: int = DEFAULT_INFERENCE_REPS,
    n_shap: int = DEFAULT_SHAP_REPS,
    seed: int = 0,
) -> list[TimingRow]:
    """One timing row per estimator, run strictly one after another."""
    rows = []
    for est in estimators:
        inf = time_inference(est, sample, n_inference)
        shp = time_shap(est, sample, background, n_shap, seed)
        rows.append(TimingRow(est.name, est.metric, inf[0], inf[1], shp[0], shp[1], n_inference, n_shap))
    return rows


def write_timing_csv(rows: Sequence[TimingRow], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, TIMING_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r.to_dict())
