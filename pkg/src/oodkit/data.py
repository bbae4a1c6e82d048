"""Tabular data model: schema, ingestion, encoding, splitting and OOD groups.

Datasets are stored column-wise (one numpy array per feature) so predicates
and encodings vectorize; ``Dataset.rows()`` yields record dictionaries when a
row view is needed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .errors import DataLoadError, EncodingError, GroupError, SchemaError
from .predicate import PredicateLike, predicate_mask, predicate_text

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
ID_COLUMN = "id"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = CONTINUOUS
    levels: tuple[str, ...] = ()

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["levels"] = list(self.levels)
        return d


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if any(not n for n in names):
            raise SchemaError("feature names must be non-empty")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dup}")
        if ID_COLUMN in names:
            raise SchemaError(f"'{ID_COLUMN}' is reserved for row identifiers")
        for f in self.features:
            if f.kind not in (CONTINUOUS, CATEGORICAL):
                raise SchemaError(f"feature {f.name!r}: unknown kind {f.kind!r}")
            if f.is_categorical:
                if len(f.levels) < 2:
                    raise SchemaError(f"categorical feature {f.name!r} needs at least 2 levels")
                if len(set(f.levels)) != len(f.levels):
                    raise SchemaError(f"categorical feature {f.name!r} has repeated levels")
            elif f.levels:
                raise SchemaError(f"continuous feature {f.name!r} cannot declare levels")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def n_categorical(self) -> int:
        return sum(f.is_categorical for f in self.features)

    def __len__(self) -> int:
        return len(self.features)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.features)

    def __getitem__(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def without(self, name: str) -> FeatureSchema:
        return FeatureSchema(tuple(f for f in self.features if f.name != name))

    def to_dict(self) -> dict:
        return {"features": [f.to_dict() for f in self.features]}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        try:
            feats = tuple(
                Feature(
                    str(f["name"]),
                    f.get("kind", CONTINUOUS),
                    tuple(str(level) for level in f.get("levels", ())),
                )
                for f in d["features"]
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from None
        return cls(feats)


def load_schema(path: Union[str, Path]) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def save_schema(schema: FeatureSchema, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated tabular data. Categorical columns hold level strings."""

    schema: FeatureSchema
    columns: dict[str, np.ndarray]
    row_ids: np.ndarray

    def __post_init__(self):
        n = len(self.row_ids)
        for f in self.schema.features:
            col = self.columns.get(f.name)
            if col is None:
                raise SchemaError(f"dataset is missing column {f.name!r}")
            if len(col) != n:
                raise SchemaError(f"column {f.name!r} has {len(col)} values, expected {n}")
            if f.is_categorical:
                bad = ~np.isin(col, np.asarray(f.levels, dtype=object))
                if bad.any():
                    i = int(np.argmax(bad))
                    raise DataLoadError(
                        f"row {i + 1}, column {f.name}: level {col[i]!r} not in {{{','.join(f.levels)}}}"
                    )
            elif not np.all(np.isfinite(col)):
                raise DataLoadError(f"column {f.name}: non-finite value")
        if len(set(self.row_ids.tolist())) != n:
            raise SchemaError("row ids must be unique")

    def __len__(self) -> int:
        return len(self.row_ids)

    @property
    def n_features(self) -> int:
        return len(self.schema)

    def rows(self) -> Iterator[dict]:
        names = self.schema.names
        for i in range(len(self)):
            yield {name: _py(self.columns[name][i]) for name in names}

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(
            self.schema,
            {k: v[index] for k, v in self.columns.items()},
            self.row_ids[index],
        )

    def drop_feature(self, name: str) -> Dataset:
        cols = {k: v for k, v in self.columns.items() if k != name}
        return Dataset(self.schema.without(name), cols, self.row_ids)

    def id_set(self) -> set:
        return set(self.row_ids.tolist())

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([ID_COLUMN] + self.schema.names)
        cols = [self.columns[n] for n in self.schema.names]
        for i, rid in enumerate(self.row_ids):
            writer.writerow([rid] + [_fmt(c[i]) for c in cols])
        return buf.getvalue().encode("utf-8")

    def fingerprint(self) -> dict:
        return {
            "n_rows": len(self),
            "n_features": self.n_features,
            "n_categorical": self.schema.n_categorical,
            "sha256": hashlib.sha256(self.to_csv_bytes()).hexdigest(),
        }


def _py(v):
    return v.item() if isinstance(v, np.generic) else v


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    schema = datasets[0].schema
    for d in datasets[1:]:
        if d.schema != schema:
            raise SchemaError("cannot concatenate datasets with different schemas")
    return Dataset(
        schema,
        {n: np.concatenate([d.columns[n] for d in datasets]) for n in schema.names},
        np.concatenate([d.row_ids for d in datasets]),
    )


def make_dataset(schema: FeatureSchema, records: Sequence[dict], row_ids=None) -> Dataset:
    """Build a Dataset from a list of record dictionaries."""
    cols = {}
    for f in schema.features:
        vals = [r[f.name] for r in records]
        if f.is_categorical:
            cols[f.name] = np.asarray([str(v) for v in vals], dtype=object)
        else:
            cols[f.name] = np.asarray(vals, dtype=np.float64)
    if row_ids is None:
        row_ids = [str(i) for i in range(len(records))]
    return Dataset(schema, cols, np.asarray([str(r) for r in row_ids], dtype=object))


def load_dataset(csv_path: Union[str, Path], schema_path: Union[str, Path, FeatureSchema]) -> Dataset:
    """Read a CSV and validate every cell against the schema.

    Row numbers in error messages are 1-based data rows (the header is not
    counted).
    """
    schema = schema_path if isinstance(schema_path, FeatureSchema) else load_schema(schema_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataLoadError(f"{csv_path}: empty file") from None
        names = set(schema.names)
        for col in header:
            if col != ID_COLUMN and col not in names:
                raise DataLoadError(f"unknown column {col!r}")
        if len(set(header)) != len(header):
            raise DataLoadError("duplicate column in header")
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataLoadError(f"missing column {missing[0]!r}")
        pos = {name: header.index(name) for name in header}
        raw: dict[str, list] = {n: [] for n in schema.names}
        ids = []
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataLoadError(f"row {rowno}: expected {len(header)} cells, got {len(row)}")
            for f in schema.features:
                cell = row[pos[f.name]].strip()
                if cell == "":
                    raise DataLoadError(f"row {rowno}, column {f.name}: missing value")
                if f.is_categorical:
                    if cell not in f.levels:
                        raise DataLoadError(
                            f"row {rowno}, column {f.name}: level {cell!r} not in {{{','.join(f.levels)}}}"
                        )
                    raw[f.name].append(cell)
                else:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise DataLoadError(
                            f"row {rowno}, column {f.name}: cannot parse {cell!r} as a number"
                        ) from None
                    if not math.isfinite(v):
                        raise DataLoadError(f"row {rowno}, column {f.name}: non-finite value {cell!r}")
                    raw[f.name].append(v)
            ids.append(row[pos[ID_COLUMN]] if ID_COLUMN in pos else str(rowno - 1))
    cols = {
        f.name: np.asarray(raw[f.name], dtype=object if f.is_categorical else np.float64)
        for f in schema.features
    }
    if len(set(ids)) != len(ids):
        raise DataLoadError("duplicate values in id column")
    return Dataset(schema, cols, np.asarray(ids, dtype=object))


def write_dataset(dataset: Dataset, csv_path: Union[str, Path]) -> None:
    Path(csv_path).write_bytes(dataset.to_csv_bytes())


# --------------------------------------------------------------------------
# encoding


@dataclass(frozen=True, eq=False)
class Encoding:
    """Standardization statistics and one-hot layout fitted on a training set."""

    schema: FeatureSchema
    means: dict[str, float]
    stds: dict[str, float]

    @property
    def groups(self) -> list[np.ndarray]:
        """Encoded column indices for each raw feature, in schema order."""
        out, start = [], 0
        for f in self.schema.features:
            width = len(f.levels) if f.is_categorical else 1
            out.append(np.arange(start, start + width))
            start += width
        return out

    @property
    def dim(self) -> int:
        return sum(len(f.levels) if f.is_categorical else 1 for f in self.schema.features)

    @property
    def column_names(self) -> list[str]:
        cols = []
        for f in self.schema.features:
            if f.is_categorical:
                cols.extend(f"{f.name}={level}" for level in f.levels)
            else:
                cols.append(f.name)
        return cols

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "means": dict(self.means),
            "stds": dict(self.stds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Encoding:
        return cls(
            FeatureSchema.from_dict(d["schema"]),
            {k: float(v) for k, v in d["means"].items()},
            {k: float(v) for k, v in d["stds"].items()},
        )


@dataclass(frozen=True, eq=False)
class EncodedMatrix:
    values: np.ndarray
    encoding: Encoding
    row_ids: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def subset(self, index) -> EncodedMatrix:
        return EncodedMatrix(self.values[index], self.encoding, self.row_ids[index])


def fit_encoding(train: Dataset) -> Encoding:
    if len(train) == 0:
        raise EncodingError("cannot fit an encoding on an empty dataset")
    means, stds = {}, {}
    for f in train.schema.features:
        if f.is_categorical:
            continue
        col = train.columns[f.name]
        mu = float(np.mean(col))
        sd = float(np.std(col))
        if not sd > 0:
            raise EncodingError(f"constant feature {f.name!r} (std = 0) cannot be standardized")
        means[f.name], stds[f.name] = mu, sd
    return Encoding(train.schema, means, stds)


def encode(dataset: Dataset, enc: Encoding) -> EncodedMatrix:
    if dataset.schema != enc.schema:
        raise EncodingError("dataset schema does not match the encoding's schema")
    n = len(dataset)
    out = np.zeros((n, enc.dim), dtype=np.float64)
    for f, cols in zip(enc.schema.features, enc.groups):
        col = dataset.columns[f.name]
        if f.is_categorical:
            lookup = {level: j for j, level in enumerate(f.levels)}
            idx = np.fromiter((lookup[v] for v in col), dtype=np.int64, count=n)
            out[np.arange(n), cols[0] + idx] = 1.0
        else:
            out[:, cols[0]] = (col - enc.means[f.name]) / enc.stds[f.name]
    return EncodedMatrix(out, enc, dataset.row_ids)


def decode(matrix: EncodedMatrix) -> Dataset:
    """Inverse of :func:`encode`; one-hot blocks decode by argmax."""
    enc = matrix.encoding
    cols = {}
    for f, idx in zip(enc.schema.features, enc.groups):
        block = matrix.values[:, idx]
        if f.is_categorical:
            cols[f.name] = np.asarray(f.levels, dtype=object)[np.argmax(block, axis=1)]
        else:
            cols[f.name] = block[:, 0] * enc.stds[f.name] + enc.means[f.name]
    return Dataset(enc.schema, cols, matrix.row_ids)


# --------------------------------------------------------------------------
# splitting and OOD groups


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(not f > 0 for f in self.fractions):
            raise ValueError("split fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(self.fractions)}, not 1")


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    left = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:left]:
        sizes[i] += 1
    return sizes


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    n = len(dataset)
    if n < 3:
        raise ValueError("need at least 3 rows to split")
    n_train, n_val, _ = largest_remainder(n, spec.fractions)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train : n_train + n_val]),
        dataset.subset(perm[n_train + n_val :]),
    )


@dataclass(frozen=True, eq=False)
class OODGroup:
    name: str
    provenance: str  # "predicate" | "withheld" | "external"
    text: str
    data: Dataset

    def __len__(self) -> int:
        return len(self.data)

    def describe(self) -> dict:
        return {"name": self.name, "provenance": self.provenance, "text": self.text, "n": len(self)}


def build_ood_group(pool: Dataset, predicate: PredicateLike, name: str) -> OODGroup:
    mask = predicate_mask(predicate, pool)
    if not mask.any():
        raise GroupError(f"OOD group {name!r}: predicate {predicate_text(predicate)!r} selects no rows")
    return OODGroup(name, "predicate", predicate_text(predicate), pool.subset(mask))


def withhold_group(train: Dataset, predicate: PredicateLike, name: str) -> tuple[Dataset, OODGroup]:
    mask = predicate_mask(predicate, train)
    if not mask.any():
        raise GroupError(f"withheld group {name!r} selects no training rows")
    if mask.all():
        raise GroupError(f"withheld group {name!r} selects every training row")
    group = OODGroup(name, "withheld", predicate_text(predicate), train.subset(mask))
    return train.subset(~mask), group


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Mixed-type synthetic law plus a shifted companion.

    ``shift`` is measured in units of each continuous feature's std.
    """

    n_rows: int = 1000
    n_continuous: int = 8
    categorical_levels: tuple[int, ...] = ()
    latent_rank: int = 2
    shift: Optional[tuple[float, ...]] = None
    flip_prob: float = 0.0
    seed: int = 0
    n_shifted: Optional[int] = None

    def __post_init__(self):
        if self.n_rows < 1:
            raise ValueError("n_rows must be >= 1")
        if self.n_continuous < 0 or self.latent_rank < 0:
            raise ValueError("n_continuous and latent_rank must be >= 0")
        if self.shift is not None and len(self.shift) != self.n_continuous:
            raise ValueError(f"shift has length {len(self.shift)}, expected {self.n_continuous}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        if any(k < 2 for k in self.categorical_levels):
            raise ValueError("categorical features need at least 2 levels")
        if self.n_shifted is not None and self.n_shifted < 1:
            raise ValueError("n_shifted must be >= 1")

    def schema(self) -> FeatureSchema:
        feats = [Feature(f"x{j}") for j in range(self.n_continuous)]
        feats += [
            Feature(f"c{j}", CATEGORICAL, tuple(f"L{i}" for i in range(k)))
            for j, k in enumerate(self.categorical_levels)
        ]
        return FeatureSchema(tuple(feats))

    def to_dict(self) -> dict:
        d = {
            "n_rows": self.n_rows,
            "n_continuous": self.n_continuous,
            "categorical_levels": list(self.categorical_levels),
            "latent_rank": self.latent_rank,
            "shift": None if self.shift is None else list(self.shift),
            "flip_prob": self.flip_prob,
            "seed": self.seed,
            "n_shifted": self.n_shifted,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        d = dict(d)
        if d.get("shift") is not None:
            d["shift"] = tuple(float(s) for s in d["shift"])
        d["categorical_levels"] = tuple(int(k) for k in d.get("categorical_levels", ()))
        return cls(**d)


@dataclass(frozen=True)
class SyntheticLaw:
    means: np.ndarray
    stds: np.ndarray
    loadings: np.ndarray
    level_probs: list = field(default_factory=list)


def _synthetic_law(spec: SyntheticSpec, rng: np.random.Generator) -> SyntheticLaw:
    means = rng.uniform(-5.0, 5.0, spec.n_continuous)
    stds = rng.uniform(0.5, 3.0, spec.n_continuous)
    loadings = rng.normal(size=(spec.n_continuous, spec.latent_rank))
    probs = [rng.dirichlet(np.full(k, 4.0)) for k in spec.categorical_levels]
    return SyntheticLaw(means, stds, loadings, probs)


def _draw(spec: SyntheticSpec, law: SyntheticLaw, n: int, rng: np.random.Generator):
    h = rng.normal(size=(n, spec.latent_rank))
    e = rng.normal(size=(n, spec.n_continuous))
    # unit-variance correlated block: (L h + e) / sqrt(diag(L L^T) + 1)
    norm = np.sqrt((law.loadings**2).sum(axis=1) + 1.0)
    z = (h @ law.loadings.T + e) / norm
    cont = law.means + law.stds * z
    cats = [rng.choice(len(p), size=n, p=p) for p in law.level_probs]
    return cont, cats


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Draw the in-distribution set and a shifted companion.

    The random stream does not depend on ``shift`` or ``flip_prob``, so specs
    that differ only in those fields produce nested shifts of the same draws.
    """
    rng = np.random.default_rng(spec.seed)
    law = _synthetic_law(spec, rng)
    schema = spec.schema()
    n_shift = spec.n_shifted or spec.n_rows

    cont, cats = _draw(spec, law, spec.n_rows, rng)
    s_cont, s_cats = _draw(spec, law, n_shift, rng)
    flips_u = [rng.random(n_shift) for _ in spec.categorical_levels]
    flips_r = [rng.integers(0, k - 1, n_shift) for k in spec.categorical_levels]

    shift = np.zeros(spec.n_continuous) if spec.shift is None else np.asarray(spec.shift, dtype=float)
    s_cont = s_cont + shift * law.stds
    for j, k in enumerate(spec.categorical_levels):
        flip = flips_u[j] < spec.flip_prob
        r = flips_r[j]
        other = np.where(r < s_cats[j], r, r + 1)
        s_cats[j] = np.where(flip, other, s_cats[j])

    def build(c, cs, prefix, n):
        cols = {f"x{j}": c[:, j].copy() for j in range(spec.n_continuous)}
        for j, k in enumerate(spec.categorical_levels):
            levels = np.asarray([f"L{i}" for i in range(k)], dtype=object)
            cols[f"c{j}"] = levels[cs[j]]
        ids = np.asarray([f"{prefix}{i}" for i in range(n)], dtype=object)
        return Dataset(schema, cols, ids)

    return build(cont, cats, "in-", spec.n_rows), build(s_cont, s_cats, "shift-", n_shift)


def synthetic_law(spec: SyntheticSpec) -> SyntheticLaw:
    """Population parameters of the law behind :func:`generate_synthetic`."""
    return _synthetic_law(spec, np.random.default_rng(spec.seed))
