from __future__ import annotations

import csv
import hashlib
import json

import pytest

from oodkit.cli import main
from oodkit.data import Feature, FeatureSchema
from oodkit.experiment import ExperimentConfig, load_config, strip_volatile, validate_advisories

SYNTH = {"n_rows": 600, "n_continuous": 6, "categorical_levels": [3], "latent_rank": 2,
         "shift": [3, 3, 0, 0, 0, 0], "seed": 3, "n_shifted": 150}


def _config(tmp_path, **extra):
    cfg = {
        "synthetic": SYNTH,
        "estimators": [{"kind": "ppca", "params": {"q": 3}}, {"kind": "lof"}],
        "groups": [{"name": "shifted", "source": "shifted"}],
        "n_trials": 5,
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _report(tmp_path):
    return json.loads((tmp_path / "out" / "report.json").read_text())


def test_synth_files(tmp_path, capsys):
    path = _config(tmp_path, synthetic={**SYNTH, "n_rows": 1000})
    assert main(["synth", "--config", str(path)]) == 0
    out = tmp_path / "out"
    assert len((out / "synthetic.csv").read_text().splitlines()) == 1001
    assert (out / "synthetic_shifted.csv").exists()
    first = (out / "synthetic.csv").read_bytes()
    assert main(["synth", "--config", str(path)]) == 0
    assert (out / "synthetic.csv").read_bytes() == first
    schema = json.loads((out / "synthetic_schema.json").read_text())
    assert [f["name"] for f in schema["features"]][:2] == ["x0", "x1"]


def test_evaluate_structure(tmp_path):
    assert main(["evaluate", "--config", str(_config(tmp_path))]) == 0
    rep = _report(tmp_path)
    assert set(rep) == {"config", "dataset", "grid", "distributions", "interpretability", "timing",
                        "warnings", "version"}
    cells = rep["grid"]["cells"]
    assert len(cells) == 2 and all(len(c["aucs"]) == 5 for c in cells)
    assert all(c["mean"] >= 0.95 for c in cells)
    assert {d["cohort"] for d in rep["distributions"]} == {"test", "shifted"}
    assert (tmp_path / "out" / "grid.csv").exists() and (tmp_path / "out" / "distributions.csv").exists()
    # the snapshot re-parses into an equal config
    assert ExperimentConfig.from_dict(rep["config"]) == load_config(tmp_path / "cfg.json")


def test_evaluate_reproducible(tmp_path):
    path = _config(tmp_path, estimators=[{"kind": "ppca", "params": {"q": 3}}, {"kind": "ae", "epochs": 2}],
                   n_trials=2)
    digests = []
    for _ in range(2):
        assert main(["evaluate", "--config", str(path)]) == 0
        blob = json.dumps(strip_volatile(_report(tmp_path)), sort_keys=True)
        digests.append(hashlib.sha256(blob.encode()).hexdigest())
    assert digests[0] == digests[1]


def test_withheld_and_predicate_groups(tmp_path):
    path = _config(tmp_path, groups=[
        {"name": "lvl2", "predicate": "c0 == 'L2'"},
        {"name": "low_x2", "withhold": "x2 < -1.0"},
    ], n_trials=1)
    code = main(["evaluate", "--config", str(path)])
    assert code == 0
    rep = _report(tmp_path)
    groups = {g["name"]: g for g in rep["dataset"]["groups"]}
    assert groups["lvl2"]["n"] > 0 and groups["low_x2"]["n"] > 0


def test_failed_cell_exit_code(tmp_path):
    path = _config(tmp_path, estimators=[{"kind": "ppca", "params": {"q": 40}}], n_trials=1)
    assert main(["evaluate", "--config", str(path)]) == 2
    assert _report(tmp_path)["grid"]["cells"][0]["status"] == "failed"


@pytest.mark.parametrize("extra", [
    {"estimators": []},
    {"groups": []},
    {"groups": [{"name": "g", "predicate": "nope > 1"}]},
    {"groups": [{"name": "g", "predicate": "x0 > 1", "withhold": "x0 > 1"}]},
    {"estimators": [{"kind": "bogus"}]},
    {"unexpected": 1},
])
def test_config_errors(tmp_path, extra, capsys):
    assert main(["evaluate", "--config", str(_config(tmp_path, **extra))]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["evaluate", "--config", str(tmp_path / "missing.json")]) == 1


def test_flag_overrides(tmp_path):
    path = _config(tmp_path, n_trials=2)
    assert main(["evaluate", "--config", str(path), "--out", str(tmp_path / "o2"), "--seed", "7",
                 "--jobs", "2"]) == 0
    rep = json.loads((tmp_path / "o2" / "report.json").read_text())
    assert rep["grid"]["trial_seeds"] == [7, 8] and rep["config"]["jobs"] == 2


def test_fit_score_round_trip(tmp_path):
    path = _config(tmp_path)
    assert main(["fit", "--config", str(path)]) == 0
    assert main(["score", "--config", str(path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "scores.csv")))
    assert set(rows[0]) == {"cohort", "row_id", "PPCA", "LOF"}
    assert {r["cohort"] for r in rows} == {"test", "shifted"}
    assert main(["synth", "--config", str(path)]) == 0
    assert main(["score", "--config", str(path), "--input", str(tmp_path / "out" / "synthetic.csv")]) == 0


def test_explain(tmp_path):
    path = _config(tmp_path, attribution={
        "split_tests": [{"split_feature": "x1", "predicate": "x1 > -1.5"}],
        "estimators": ["PPCA"], "max_rows": 5, "top_n": 2, "top_k_features": 3,
    })
    assert main(["explain", "--config", str(path)]) == 0
    rep = _report(tmp_path)
    interp = rep["interpretability"]
    assert interp["split_feature_rank"][0]["estimator"] == "PPCA"
    assert len(interp["outliers"]["PPCA"]) == 2
    assert (tmp_path / "out" / "split_feature_rank.csv").exists()
    first = (tmp_path / "out" / "explanations.json").read_text()
    assert main(["explain", "--config", str(path)]) == 0
    assert (tmp_path / "out" / "explanations.json").read_text() == first
    bad = _config(tmp_path, attribution={"split_tests": [{"split_feature": "zz", "predicate": "x1 > 1"}]})
    assert main(["explain", "--config", str(bad)]) == 1


def test_bench(tmp_path):
    path = _config(tmp_path, bench={"n_inference": 20, "n_shap": 2})
    assert main(["bench", "--config", str(path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "timing.csv")))
    assert [r["estimator"] for r in rows] == ["PPCA", "LOF"]
    assert all(float(r["shap_mean_s"]) > float(r["inference_mean_s"]) for r in rows)
    assert "wall-clock" in _report(tmp_path)["timing"]["clock"]


def test_csv_data_source(tmp_path):
    assert main(["synth", "--config", str(_config(tmp_path))]) == 0
    cfg = {
        "data": "out/synthetic.csv", "schema": "out/synthetic_schema.json",
        "estimators": [{"kind": "ppca", "params": {"q": 3}}],
        "groups": [{"name": "ext", "csv": "out/synthetic_shifted.csv"}],
        "n_trials": 1, "output_dir": str(tmp_path / "o3"),
    }
    (tmp_path / "c2.json").write_text(json.dumps(cfg))
    assert main(["evaluate", "--config", str(tmp_path / "c2.json")]) == 0
    rep = json.loads((tmp_path / "o3" / "report.json").read_text())
    assert rep["dataset"]["source"] == "csv" and rep["grid"]["cells"][0]["mean"] >= 0.95


def test_label_column_minority(tmp_path):
    synth = {**SYNTH, "categorical_levels": [3, 2], "seed": 11}
    path = _config(tmp_path, synthetic=synth, label_column="c1", n_trials=1)
    cfg = load_config(path)
    from oodkit.experiment import advisory_stats, prepare

    prep = prepare(cfg)
    assert "c1" not in prep.train.schema
    stats = advisory_stats(prep)
    assert main(["evaluate", "--config", str(path)]) == 0
    rep = _report(tmp_path)
    has_minority = stats["minority_fraction"] < 0.10
    assert any(w["code"] == "minority_class" for w in rep["warnings"]) == has_minority
    assert ("per_class_distributions" in rep) == has_minority


def _schema(n_cat, n_cont):
    feats = [Feature(f"c{i}", "categorical", ("a", "b")) for i in range(n_cat)]
    feats += [Feature(f"x{i}") for i in range(n_cont)]
    return FeatureSchema(tuple(feats))


def _advisory_config(kinds):
    return ExperimentConfig.from_dict({"synthetic": {}, "estimators": [{"kind": k} for k in kinds]})


class TestAdvisories:
    def test_categorical_heavy(self):
        w = validate_advisories(_advisory_config(["ppca"]), _schema(84, 66), {})
        assert "categorical_fraction" in {x["code"] for x in w}

    def test_categorical_light(self):
        w = validate_advisories(_advisory_config(["ppca"]), _schema(7, 49), {})
        assert "categorical_fraction" not in {x["code"] for x in w}

    def test_dimensionality(self):
        assert {x["code"] for x in validate_advisories(_advisory_config(["lof"]), _schema(0, 51), {})} == {"dimensionality"}
        assert validate_advisories(_advisory_config(["ppca", "ae"]), _schema(0, 51), {}) == []

    def test_lof_rows(self):
        cfg = _advisory_config(["lof"])
        assert validate_advisories(cfg, _schema(0, 5), {"n_train": 1000}) == []
        assert [x["code"] for x in validate_advisories(cfg, _schema(0, 5), {"n_train": 200_000})] == ["lof_rows"]

    def test_minority(self):
        cfg = _advisory_config(["ppca"])
        assert [x["code"] for x in validate_advisories(cfg, _schema(0, 5), {"minority_fraction": 0.05})] == ["minority_class"]
