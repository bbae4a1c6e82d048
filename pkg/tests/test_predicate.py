from __future__ import annotations

import pytest

from oodkit.data import Feature, FeatureSchema, make_dataset
from oodkit.errors import PredicateError
from oodkit.predicate import Predicate, predicate_mask


@pytest.fixture
def ds():
    schema = FeatureSchema((Feature("age"), Feature("los"), Feature("g", "categorical", ("M", "V"))))
    recs = [
        {"age": 95, "los": 2, "g": "M"},
        {"age": 60, "los": 9, "g": "V"},
        {"age": 91, "los": 12, "g": "V"},
        {"age": 30, "los": 1, "g": "M"},
    ]
    return make_dataset(schema, recs)


@pytest.mark.parametrize("text,expected", [
    ("age > 90", [True, False, True, False]),
    ("age >= 91", [True, False, True, False]),
    ("age < 60", [False, False, False, True]),
    ("age <= 60", [False, True, False, True]),
    ("age == 30", [False, False, False, True]),
    ("age != 30", [True, True, True, False]),
    ("g == 'V'", [False, True, True, False]),
    ('g != "V"', [True, False, False, True]),
    ("age > 90 and g == 'V'", [False, False, True, False]),
    ("age < 40 or los > 10", [False, False, True, True]),
    ("(age < 40 or los > 10) and g == 'M'", [False, False, False, True]),
    ("age < 40 or los > 10 and g == 'M'", [False, False, False, True]),
    ("los >= 1e1", [False, False, True, False]),
])
def test_masks(ds, text, expected):
    assert predicate_mask(text, ds).tolist() == expected
    # the row-wise evaluator agrees with the column-wise one
    p = Predicate(text)
    assert [p(r) for r in ds.rows()] == expected


@pytest.mark.parametrize("text", ["age >", "age > 1 and", "(age > 1", "age ~ 3", "> 3", "age > 1 )"])
def test_syntax_errors(text):
    with pytest.raises(PredicateError):
        Predicate(text)


@pytest.mark.parametrize("text", ["weight > 3", "g > 'M'", "g == 3", "age == 'x'"])
def test_schema_errors(ds, text):
    with pytest.raises(PredicateError):
        Predicate(text).validate(ds.schema)


def test_callable_predicate(ds):
    assert predicate_mask(lambda r: r["los"] > 5, ds).tolist() == [False, True, True, False]


def test_features_and_equality():
    p = Predicate("age > 1 and (g == 'M' or los < 3)")
    assert p.features == {"age", "g", "los"}
    assert p == Predicate("age>1 and (g=='M' or los<3)")
