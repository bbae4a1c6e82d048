"""Comparison predicates over raw feature values.

Grammar::

    expr       := conj ("or" conj)*
    conj       := atom ("and" atom)*
    atom       := "(" expr ")" | comparison
    comparison := FEATURE OP literal
    OP         := == | != | < | <= | > | >=
    literal    := number | 'string' | "string"

Predicates evaluate either on a single row mapping or column-wise on a
:class:`~oodkit.data.Dataset`, returning a boolean mask.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Mapping, Union

import numpy as np

from .errors import PredicateError

if TYPE_CHECKING:
    from .data import Dataset, FeatureSchema

_OPS: dict[str, Callable[[Any, Any], Any]] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
      | (?P<str>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
      | (?P<op>==|!=|<=|>=|<|>)
      | (?P<paren>[()])
      | (?P<word>[A-Za-z_][A-Za-z0-9_.]*)
    )""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class Comparison:
    feature: str
    op: str
    value: Union[float, str]


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    args: tuple


Node = Union[Comparison, BoolOp]


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise PredicateError(f"cannot parse predicate at offset {pos}: {text[pos:]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        if tok[0] is None:
            raise PredicateError(f"unexpected end of predicate: {self.text!r}")
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        if self.i != len(self.tokens):
            raise PredicateError(f"trailing tokens in predicate: {self.text!r}")
        return node

    def expr(self) -> Node:
        args = [self.conj()]
        while self.peek() == ("word", "or"):
            self.take()
            args.append(self.conj())
        return args[0] if len(args) == 1 else BoolOp("or", tuple(args))

    def conj(self) -> Node:
        args = [self.atom()]
        while self.peek() == ("word", "and"):
            self.take()
            args.append(self.atom())
        return args[0] if len(args) == 1 else BoolOp("and", tuple(args))

    def atom(self) -> Node:
        kind, val = self.take()
        if (kind, val) == ("paren", "("):
            node = self.expr()
            if self.take() != ("paren", ")"):
                raise PredicateError(f"unbalanced parentheses in {self.text!r}")
            return node
        if kind != "word" or val in ("and", "or"):
            raise PredicateError(f"expected feature name, got {val!r} in {self.text!r}")
        op_kind, op = self.take()
        if op_kind != "op":
            raise PredicateError(f"expected comparison operator after {val!r}, got {op!r}")
        lit_kind, lit = self.take()
        if lit_kind == "num":
            value: Union[float, str] = float(lit)
        elif lit_kind == "str":
            value = bytes(lit[1:-1], "utf-8").decode("unicode_escape")
        else:
            raise PredicateError(f"expected literal after {val} {op}, got {lit!r}")
        return Comparison(val, op, value)


def _features(node: Node) -> set[str]:
    if isinstance(node, Comparison):
        return {node.feature}
    out: set[str] = set()
    for a in node.args:
        out |= _features(a)
    return out


class Predicate:
    """Parsed predicate; callable on a row mapping.

    >>> p = Predicate("age > 90 and gender == 'M'")
    >>> p({"age": 95.0, "gender": "M"})
    True
    """

    def __init__(self, text: str):
        self.text = text.strip()
        self.tree = _Parser(self.text).parse()

    @property
    def features(self) -> set[str]:
        return _features(self.tree)

    def validate(self, schema: FeatureSchema) -> None:
        for cmp in _comparisons(self.tree):
            if cmp.feature not in schema:
                raise PredicateError(f"predicate references unknown feature {cmp.feature!r}")
            feat = schema[cmp.feature]
            if feat.is_categorical:
                if not isinstance(cmp.value, str):
                    raise PredicateError(
                        f"categorical feature {cmp.feature!r} must be compared with a quoted level"
                    )
                if cmp.op not in ("==", "!="):
                    raise PredicateError(f"operator {cmp.op} not defined for categorical {cmp.feature!r}")
            elif isinstance(cmp.value, str):
                raise PredicateError(f"continuous feature {cmp.feature!r} compared with string")

    def __call__(self, row: Mapping[str, Any]) -> bool:
        return bool(_eval_row(self.tree, row))

    def mask(self, dataset: Dataset) -> np.ndarray:
        self.validate(dataset.schema)
        return _eval_cols(self.tree, dataset.columns, len(dataset))

    def __repr__(self) -> str:
        return f"Predicate({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Predicate) and other.tree == self.tree

    def __hash__(self) -> int:
        return hash(self.tree)


def _comparisons(node: Node):
    if isinstance(node, Comparison):
        yield node
    else:
        for a in node.args:
            yield from _comparisons(a)


def _eval_row(node: Node, row: Mapping[str, Any]) -> bool:
    if isinstance(node, Comparison):
        try:
            v = row[node.feature]
        except KeyError:
            raise PredicateError(f"row has no feature {node.feature!r}") from None
        return _OPS[node.op](v, node.value)
    if node.op == "and":
        return all(_eval_row(a, row) for a in node.args)
    return any(_eval_row(a, row) for a in node.args)


def _eval_cols(node: Node, cols: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    if isinstance(node, Comparison):
        return np.asarray(_OPS[node.op](cols[node.feature], node.value), dtype=bool).reshape(n)
    masks = [_eval_cols(a, cols, n) for a in node.args]
    reduce = np.logical_and if node.op == "and" else np.logical_or
    out = masks[0]
    for m in masks[1:]:
        out = reduce(out, m)
    return out


PredicateLike = Union[str, Predicate, Callable[[Mapping[str, Any]], bool]]


def as_predicate(pred: PredicateLike) -> Union[Predicate, Callable]:
    if isinstance(pred, str):
        return Predicate(pred)
    return pred


def predicate_text(pred) -> str:
    if isinstance(pred, str):
        return pred.strip()
    if isinstance(pred, Predicate):
        return pred.text
    return getattr(pred, "text", None) or getattr(pred, "__name__", repr(pred))


def predicate_mask(pred, dataset: Dataset) -> np.ndarray:
    """Boolean mask of rows selected by ``pred`` (a Predicate or row callable)."""
    pred = as_predicate(pred)
    if isinstance(pred, Predicate):
        return pred.mask(dataset)
    return np.fromiter((bool(pred(r)) for r in dataset.rows()), dtype=bool, count=len(dataset))
