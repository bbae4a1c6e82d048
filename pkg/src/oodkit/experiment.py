"""Configuration-driven experiments: config parsing, data preparation, the
``evaluate``/``explain``/``bench``/``fit``/``score`` commands and the report."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, _kernels
from .attribution import explain_outliers, split_feature_rank, write_rank_csv
from .benchmark import CLOCK_NOTE, benchmark, write_timing_csv
from .data import (
    Dataset,
    SplitSpec,
    SyntheticSpec,
    encode,
    fit_encoding,
    generate_synthetic,
    load_dataset,
    load_schema,
    save_schema,
    split,
    withhold_group,
    write_dataset,
)
from .errors import ConfigError, GroupError
from .estimators import EstimatorConfig, fit, load_estimator, save_estimator
from .evaluation import (
    DEFAULT_BINS,
    DEFAULT_TRIALS,
    run_trials,
    score_distribution,
    write_distributions_csv,
)
from .predicate import Predicate, predicate_mask

logger = logging.getLogger(__name__)

REPORT_KEYS = ("config", "dataset", "grid", "distributions", "interpretability", "timing", "warnings", "version")

CATEGORICAL_FRACTION_LIMIT = 0.5
DIMENSION_LIMIT = 50
LOF_ROW_LIMIT = 100_000
MINORITY_LIMIT = 0.10
FULL_DIMENSIONAL_KINDS = ("lof", "maf")


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


@dataclass
class GroupSpec:
    """One OOD group. Exactly one source is set.

    ``predicate`` selects rows of the loaded data (they leave the
    in-distribution pool), ``withhold`` removes matching rows from training,
    ``csv`` loads an external file with the same schema, and
    ``source="shifted"`` uses the synthetic shifted companion.
    """

    name: str
    predicate: Optional[str] = None
    withhold: Optional[str] = None
    csv: Optional[str] = None
    source: Optional[str] = None

    def __post_init__(self):
        if not self.name:
            raise ConfigError("every group needs a name")
        set_fields = [k for k in ("predicate", "withhold", "csv", "source") if getattr(self, k) is not None]
        if len(set_fields) != 1:
            raise ConfigError(f"group {self.name!r}: set exactly one of predicate, withhold, csv, source")
        if self.source is not None and self.source != "shifted":
            raise ConfigError(f"group {self.name!r}: source must be 'shifted'")

    @property
    def kind(self) -> str:
        return next(k for k in ("predicate", "withhold", "csv", "source") if getattr(self, k) is not None)

    def to_dict(self) -> dict:
        return {"name": self.name, self.kind: getattr(self, self.kind)}

    @classmethod
    def from_dict(cls, d: dict) -> GroupSpec:
        _check_keys(d, {"name", "predicate", "withhold", "csv", "source"}, "group")
        return cls(**d)


@dataclass
class SplitTest:
    split_feature: str
    predicate: str

    def to_dict(self) -> dict:
        return {"split_feature": self.split_feature, "predicate": self.predicate}


@dataclass
class AttributionConfig:
    split_tests: list = field(default_factory=list)
    estimators: Optional[list] = None  # names; None means every configured estimator
    top_n: int = 5
    top_k_features: int = 5
    n_coalitions: Optional[int] = None
    max_rows: int = 100
    cohort: str = "test"

    def to_dict(self) -> dict:
        return {
            "split_tests": [t.to_dict() for t in self.split_tests],
            "estimators": self.estimators,
            "top_n": self.top_n,
            "top_k_features": self.top_k_features,
            "n_coalitions": self.n_coalitions,
            "max_rows": self.max_rows,
            "cohort": self.cohort,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AttributionConfig:
        d = dict(d)
        _check_keys(d, set(cls().to_dict()), "attribution")
        tests = []
        for t in d.pop("split_tests", []) or []:
            _check_keys(t, {"split_feature", "predicate"}, "split test")
            if "split_feature" not in t or "predicate" not in t:
                raise ConfigError("split test needs split_feature and predicate")
            tests.append(SplitTest(t["split_feature"], t["predicate"]))
        return cls(split_tests=tests, **d)


@dataclass
class BenchConfig:
    n_inference: int = 1000
    n_shap: int = 5
    estimators: Optional[list] = None

    def to_dict(self) -> dict:
        return {"n_inference": self.n_inference, "n_shap": self.n_shap, "estimators": self.estimators}

    @classmethod
    def from_dict(cls, d: dict) -> BenchConfig:
        _check_keys(d, {"n_inference", "n_shap", "estimators"}, "bench")
        return cls(**d)


@dataclass
class ExperimentConfig:
    estimators: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    data: Optional[str] = None
    schema: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    name: str = "synthetic"
    split: SplitSpec = field(default_factory=SplitSpec)
    n_trials: int = DEFAULT_TRIALS
    seed: int = 0
    jobs: int = 1
    label_column: Optional[str] = None
    bins: int = DEFAULT_BINS
    attribution: AttributionConfig = field(default_factory=AttributionConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    output_dir: str = "out"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("configure exactly one of 'data' (with 'schema') or 'synthetic'")
        if self.data is not None and self.schema is None:
            raise ConfigError("'data' needs a 'schema' file")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ConfigError(f"estimator names must be unique, got {names}")
        gnames = [g.name for g in self.groups]
        if len(set(gnames)) != len(gnames) or "test" in gnames:
            raise ConfigError(f"group names must be unique and not 'test', got {gnames}")
        for sel in (self.attribution.estimators, self.bench.estimators):
            missing = set(sel or []) - set(names)
            if missing:
                raise ConfigError(f"unknown estimator names {sorted(missing)}")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        return {
            "estimators": [e.to_dict() for e in self.estimators],
            "groups": [g.to_dict() for g in self.groups],
            "data": self.data,
            "schema": self.schema,
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "name": self.name,
            "split": {"fractions": list(self.split.fractions), "seed": self.split.seed},
            "n_trials": self.n_trials,
            "seed": self.seed,
            "jobs": self.jobs,
            "label_column": self.label_column,
            "bins": self.bins,
            "attribution": self.attribution.to_dict(),
            "bench": self.bench.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        _check_keys(d, set(cls.__dataclass_fields__) - {"base_dir"}, "config")
        try:
            if d.get("synthetic") is not None:
                d["synthetic"] = SyntheticSpec.from_dict(d["synthetic"])
            if "split" in d:
                s = dict(d["split"])
                _check_keys(s, {"fractions", "seed"}, "split")
                d["split"] = SplitSpec(tuple(float(f) for f in s.get("fractions", (0.7, 0.15, 0.15))), int(s.get("seed", 0)))
            d["estimators"] = [EstimatorConfig.from_dict(e) for e in d.get("estimators", [])]
            d["groups"] = [GroupSpec.from_dict(g) for g in d.get("groups", [])]
            d["attribution"] = AttributionConfig.from_dict(d.get("attribution") or {})
            d["bench"] = BenchConfig.from_dict(d.get("bench") or {})
            return cls(base_dir=base_dir, **d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw, base_dir=str(path.parent))


# --------------------------------------------------------------------------
# advisories


def validate_advisories(config: ExperimentConfig, schema, stats: dict) -> list[dict]:
    """Non-fatal warnings about detector choice for this data.

    ``stats`` may carry ``n_train`` and ``minority_fraction`` (of the label
    column).
    """
    warnings = []
    n_feat = len(schema)
    frac = schema.n_categorical / n_feat if n_feat else 0.0
    if frac > CATEGORICAL_FRACTION_LIMIT:
        warnings.append({
            "code": "categorical_fraction",
            "message": (
                f"{schema.n_categorical} of {n_feat} features are categorical; continuous density "
                "estimators may model one-hot columns poorly, weigh this when choosing a detector"
            ),
        })
    kinds = {e.kind for e in config.estimators}
    if n_feat > DIMENSION_LIMIT and kinds & set(FULL_DIMENSIONAL_KINDS):
        which = sorted(e.name for e in config.estimators if e.kind in FULL_DIMENSIONAL_KINDS)
        warnings.append({
            "code": "dimensionality",
            "message": (
                f"{n_feat} features with estimators that model the full input space ({', '.join(which)}); "
                "their performance can degrade quickly as dimension grows"
            ),
        })
    n_train = stats.get("n_train")
    if n_train is not None and n_train > LOF_ROW_LIMIT and "lof" in kinds:
        warnings.append({
            "code": "lof_rows",
            "message": f"LOF with {n_train} training rows; its time and memory grow with the sample count",
        })
    minority = stats.get("minority_fraction")
    if minority is not None and minority < MINORITY_LIMIT:
        warnings.append({
            "code": "minority_class",
            "message": (
                f"label minority fraction {minority:.3f} < {MINORITY_LIMIT}; monitor scores of the "
                "under-represented class (per-class distributions added to the report)"
            ),
        })
    return warnings


# --------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    pool: Dataset  # loaded data with the label column removed, before any group removal
    train: Dataset
    val: Dataset
    test: Dataset
    groups: dict  # name -> Dataset
    group_info: list
    labels: dict  # cohort -> label array (only with label_column)
    label_levels: tuple = ()
    encoding: object = None

    def encoded(self):
        enc = self.encoding
        return (
            encode(self.train, enc),
            encode(self.val, enc),
            encode(self.test, enc),
            {name: encode(g, enc) for name, g in self.groups.items()},
        )

    def cohort(self, name: str) -> Dataset:
        return self.test if name == "test" else self.groups[name]


def _load_source(config: ExperimentConfig):
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    schema = load_schema(config.resolve(config.schema))
    return load_dataset(config.resolve(config.data), schema), None


def _minority_fraction(labels: np.ndarray) -> Optional[float]:
    _, counts = np.unique(labels, return_counts=True)
    if len(counts) != 2:
        return None
    return float(counts.min() / counts.sum())


def prepare(config: ExperimentConfig) -> Prepared:
    data, shifted = _load_source(config)
    schema = data.schema
    for g in config.groups:
        text = g.predicate or g.withhold
        if text is not None:
            Predicate(text).validate(schema)
        if g.source == "shifted" and shifted is None:
            raise ConfigError(f"group {g.name!r}: source 'shifted' needs a synthetic dataset")
    for t in config.attribution.split_tests:
        if t.split_feature not in schema or t.split_feature == config.label_column:
            raise ConfigError(f"split feature {t.split_feature!r} is not a feature of the data")
        Predicate(t.predicate).validate(schema)

    label_col = config.label_column
    if label_col is not None:
        if label_col not in schema or not schema[label_col].is_categorical:
            raise ConfigError(f"label_column {label_col!r} must be a categorical feature")
        if len(schema) < 2:
            raise ConfigError("no features left after removing the label column")

    # rows matched by predicate groups are OOD and leave the pool
    pool = data
    groups: dict = {}
    info = []
    taken = np.zeros(len(data), dtype=bool)
    for g in config.groups:
        if g.predicate is None:
            continue
        mask = predicate_mask(g.predicate, data)
        if not mask.any():
            raise GroupError(f"OOD group {g.name!r}: predicate {g.predicate!r} selects no rows")
        groups[g.name] = data.subset(mask)
        taken |= mask
    pool = data.subset(~taken)
    if len(pool) < 3:
        raise GroupError("fewer than 3 in-distribution rows remain after removing predicate groups")
    train, val, test = split(pool, config.split)

    withheld = np.zeros(len(train), dtype=bool)
    for g in config.groups:
        if g.withhold is None:
            continue
        _, grp = withhold_group(train, g.withhold, g.name)
        groups[g.name] = grp.data
        withheld |= predicate_mask(g.withhold, train)
        # val/test rows of a withheld group are not in-distribution either
        val = val.subset(~predicate_mask(g.withhold, val))
        test = test.subset(~predicate_mask(g.withhold, test))
    train = train.subset(~withheld)
    if len(train) == 0 or len(test) == 0:
        raise GroupError("withheld groups leave an empty train or test split")

    for g in config.groups:
        if g.csv is not None:
            groups[g.name] = load_dataset(config.resolve(g.csv), schema)
        elif g.source == "shifted":
            groups[g.name] = shifted
    groups = {g.name: groups[g.name] for g in config.groups}
    for g in config.groups:
        info.append({**g.to_dict(), "kind": g.kind, "n": len(groups[g.name])})

    labels: dict = {}
    levels: tuple = ()
    if label_col is not None:
        levels = schema[label_col].levels
        labels = {"train": train.columns[label_col], "test": test.columns[label_col]}
        labels.update({n: d.columns[label_col] for n, d in groups.items()})
        train, val, test = (d.drop_feature(label_col) for d in (train, val, test))
        groups = {n: d.drop_feature(label_col) for n, d in groups.items()}
        data = data.drop_feature(label_col)

    return Prepared(data, train, val, test, groups, info, labels, levels, fit_encoding(train))


def dataset_section(config: ExperimentConfig, prep: Prepared) -> dict:
    return {
        "source": "synthetic" if config.synthetic is not None else "csv",
        "fingerprint": prep.pool.fingerprint(),
        "encoded_dim": prep.encoding.dim,
        "splits": {"train": len(prep.train), "val": len(prep.val), "test": len(prep.test)},
        "groups": prep.group_info,
    }


def advisory_stats(prep: Prepared) -> dict:
    stats = {"n_train": len(prep.train)}
    if prep.labels:
        stats["minority_fraction"] = _minority_fraction(prep.labels["train"])
    return stats


# --------------------------------------------------------------------------
# report


def version_section() -> dict:
    return {
        "oodkit": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "kernel_backend": _kernels.BACKEND,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def empty_report(config: ExperimentConfig) -> dict:
    return {
        "config": config.to_dict(),
        "dataset": {},
        "grid": None,
        "distributions": [],
        "interpretability": {},
        "timing": None,
        "warnings": [],
        "version": version_section(),
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dump_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(_clean(report), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def strip_volatile(report: dict) -> dict:
    """Copy of a report without timing results and timestamps."""
    out = json.loads(json.dumps(_clean(report)))
    out["timing"] = None
    out.get("version", {}).pop("timestamp", None)
    return out


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_synth(config: ExperimentConfig) -> dict:
    if config.synthetic is None:
        raise ConfigError("synth needs a 'synthetic' section")
    out = _out_dir(config)
    in_dist, shifted = generate_synthetic(config.synthetic)
    paths = {"data": out / f"{config.name}.csv", "schema": out / f"{config.name}_schema.json"}
    write_dataset(in_dist, paths["data"])
    save_schema(in_dist.schema, paths["schema"])
    spec = config.synthetic
    if spec.shift is not None or spec.flip_prob > 0:
        paths["shifted"] = out / f"{config.name}_shifted.csv"
        write_dataset(shifted, paths["shifted"])
    return {k: str(v) for k, v in paths.items()}


def _per_class(prep: Prepared, grid, bins: int) -> list:
    out = []
    for est, scores in grid.scores.items():
        test_scores = scores["test"]
        cohorts = {}
        for cohort in ["test", *prep.groups]:
            lab = prep.labels[cohort]
            for level in prep.label_levels:
                sel = lab == level
                if sel.any():
                    cohorts[f"{cohort}|label={level}"] = scores[cohort][sel]
        out.extend(d.to_dict(include_values=False) for d in score_distribution(est, test_scores, cohorts, bins)[1:])
    return out


def cmd_evaluate(config: ExperimentConfig) -> tuple[dict, int]:
    if not config.estimators:
        raise ConfigError("evaluate needs at least one estimator")
    if not config.groups:
        raise ConfigError("evaluate needs at least one OOD group")
    prep = prepare(config)
    report = empty_report(config)
    report["dataset"] = dataset_section(config, prep)
    warnings = validate_advisories(config, prep.encoding.schema, advisory_stats(prep))
    report["warnings"] = warnings

    Xtr, Xva, Xte, groups = prep.encoded()
    grid = run_trials(
        config.estimators, Xtr, Xva, Xte, groups, config.n_trials, config.seed, config.jobs,
        config_snapshot={"n_trials": config.n_trials, "base_seed": config.seed},
    )
    report["grid"] = grid.to_dict()
    dists = []
    for est in grid.estimators:
        if est not in grid.scores:
            continue
        s = grid.scores[est]
        dists.extend(score_distribution(est, s["test"], {g: s[g] for g in grid.groups}, config.bins))
    report["distributions"] = [d.to_dict(include_values=False) for d in dists]
    if any(w["code"] == "minority_class" for w in warnings):
        report["per_class_distributions"] = _per_class(prep, grid, config.bins)

    out = _out_dir(config)
    grid.write_csv(out / "grid.csv")
    write_distributions_csv(dists, out / "distributions.csv")
    dump_report(report, out / "report.json")
    return report, (2 if grid.any_failed else 0)


def _selected(config: ExperimentConfig, names: Optional[list]) -> list:
    return [e for e in config.estimators if names is None or e.name in names]


def cmd_explain(config: ExperimentConfig) -> dict:
    if not config.estimators:
        raise ConfigError("explain needs at least one estimator")
    att = config.attribution
    prep = prepare(config)
    if att.cohort != "test" and att.cohort not in prep.groups:
        raise ConfigError(f"attribution cohort {att.cohort!r} is neither 'test' nor a group")
    report = empty_report(config)
    report["dataset"] = dataset_section(config, prep)
    report["warnings"] = validate_advisories(config, prep.encoding.schema, advisory_stats(prep))
    configs = _selected(config, att.estimators)

    ranks = []
    for t in att.split_tests:
        for c in configs:
            ranks.append(split_feature_rank(
                prep.pool, t.split_feature, t.predicate, c, config.seed, att.n_coalitions, att.max_rows,
            ))
    Xtr = encode(prep.train, prep.encoding)
    Xva = encode(prep.val, prep.encoding)
    cohort = encode(prep.cohort(att.cohort), prep.encoding)
    explanations = {}
    for c in configs:
        est = fit(c.with_seed(config.seed), Xtr, Xva)
        top_n = min(att.top_n, len(cohort))
        exps = explain_outliers(est, cohort, Xtr, top_n, att.top_k_features, att.n_coalitions, config.seed)
        explanations[c.name] = [e.to_dict() for e in exps]
    report["interpretability"] = {
        "cohort": att.cohort,
        "split_feature_rank": [r.to_dict() for r in ranks],
        "outliers": explanations,
    }
    out = _out_dir(config)
    if ranks:
        write_rank_csv(ranks, out / "split_feature_rank.csv")
    (out / "explanations.json").write_text(
        json.dumps(_clean(explanations), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    dump_report(report, out / "report.json")
    return report


def cmd_bench(config: ExperimentConfig) -> dict:
    if not config.estimators:
        raise ConfigError("bench needs at least one estimator")
    prep = prepare(config)
    report = empty_report(config)
    report["dataset"] = dataset_section(config, prep)
    Xtr, Xva, Xte, _ = prep.encoded()
    ests = [fit(c.with_seed(config.seed), Xtr, Xva) for c in _selected(config, config.bench.estimators)]
    rows = benchmark(ests, Xte.values[:1], Xtr, config.bench.n_inference, config.bench.n_shap, config.seed)
    report["timing"] = {"clock": CLOCK_NOTE, "rows": [r.to_dict() for r in rows]}
    out = _out_dir(config)
    write_timing_csv(rows, out / "timing.csv")
    dump_report(report, out / "report.json")
    return report


def cmd_fit(config: ExperimentConfig) -> dict:
    if not config.estimators:
        raise ConfigError("fit needs at least one estimator")
    prep = prepare(config)
    Xtr, Xva, _, _ = prep.encoded()
    model_dir = _out_dir(config) / "models"
    model_dir.mkdir(exist_ok=True)
    paths = {}
    for c in config.estimators:
        est = fit(c.with_seed(config.seed), Xtr, Xva)
        paths[c.name] = str(model_dir / f"{c.name}.json")
        save_estimator(est, paths[c.name])
    return paths


def cmd_score(config: ExperimentConfig, input_csv: Optional[str] = None) -> str:
    """Score ``input_csv`` (or the test split plus groups) with the models saved by ``fit``."""
    out = _out_dir(config)
    model_dir = out / "models"
    ests = []
    for c in config.estimators:
        path = model_dir / f"{c.name}.json"
        if not path.exists():
            raise ConfigError(f"no fitted model at {path}; run 'fit' first")
        ests.append(load_estimator(path))
    if not ests:
        raise ConfigError("score needs at least one estimator")
    enc = ests[0].encoding
    if input_csv is not None:
        data = load_dataset(input_csv, enc.schema)
        cohorts = [("input", data)]
    else:
        prep = prepare(config)
        cohorts = [("test", prep.test), *prep.groups.items()]
    path = out / "scores.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cohort", "row_id", *[e.name for e in ests]])
        for name, ds in cohorts:
            X = encode(ds, enc)
            cols = [e.score(X) for e in ests]
            for i, rid in enumerate(ds.row_ids):
                w.writerow([name, rid, *[repr(float(c[i])) for c in cols]])
    return str(path)

