from __future__ import annotations

import csv

import numpy as np
import pytest

from oodkit.benchmark import TIMING_COLUMNS, benchmark, time_inference, time_shap, write_timing_csv
from oodkit.estimators import EstimatorConfig, fit


@pytest.fixture(scope="module")
def fitted(small_encoded):
    Xtr, Xva, Xte, _ = small_encoded
    ests = [fit(EstimatorConfig("ppca", {"q": 3}), Xtr), fit(EstimatorConfig("ae", epochs=2), Xtr, Xva)]
    return ests, Xtr, Xte


def test_inference_positive_and_stable(fitted):
    ests, _, Xte = fitted
    a = time_inference(ests[0], Xte.values[:1], n_reps=200)
    b = time_inference(ests[0], Xte.values[:1], n_reps=200)
    assert 0 < a[0] < np.inf and a[1] >= 0
    assert 1 / 3 <= a[0] / b[0] <= 3


def test_timing_does_not_change_scores(fitted):
    ests, Xtr, Xte = fitted
    before = [e.score(Xte) for e in ests]
    benchmark(ests, Xte.values[:1], Xtr, n_inference=20, n_shap=1)
    for e, s in zip(ests, before):
        np.testing.assert_array_equal(e.score(Xte), s)


def test_rows_and_csv(fitted, tmp_path):
    ests, Xtr, Xte = fitted
    rows = benchmark(ests, Xte.values[:1], Xtr, n_inference=30, n_shap=2)
    assert [r.estimator for r in rows] == ["PPCA", "AE"]
    assert [r.metric for r in rows] == ["log_prob", "reconstr_err"]
    for r in rows:
        assert r.n_shap == 2 and r.n_inference == 30
        assert r.shap_mean_s > r.inference_mean_s > 0
    write_timing_csv(rows, tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == TIMING_COLUMNS
        assert len(list(reader)) == 2


def test_shap_reps(fitted):
    ests, Xtr, Xte = fitted
    mean, std = time_shap(ests[0], Xte.values[0], Xtr, n_reps=2)
    assert mean > 0 and std >= 0
    with pytest.raises(ValueError):
        time_shap(ests[0], Xte.values[0], Xtr, n_reps=0)
