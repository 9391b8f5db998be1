"""Nested boolean expressions over T/F with ! & | and mandatory parentheses."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .sampling import balanced_labels

ALPHABET = "TF&|!()"


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    child: "Expr"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Not, And, Or]


def serialize(e: Expr) -> str:
    if isinstance(e, Const):
        return "T" if e.value else "F"
    if isinstance(e, Not):
        return "!" + serialize(e.child)
    op = "&" if isinstance(e, And) else "|"
    return f"({serialize(e.left)}{op}{serialize(e.right)})"


class ParseError(ValueError):
    pass


def parse(src: str) -> Expr:
    expr, pos = _parse(src, 0)
    if pos != len(src):
        raise ParseError(f"trailing input at {pos}: {src[pos:]!r}")
    return expr


def _parse(src: str, pos: int) -> tuple[Expr, int]:
    if pos >= len(src):
        raise ParseError("unexpected end of expression")
    c = src[pos]
    if c in "TF":
        return Const(c == "T"), pos + 1
    if c == "!":
        child, pos = _parse(src, pos + 1)
        return Not(child), pos
    if c == "(":
        left, pos = _parse(src, pos + 1)
        if pos < len(src) and src[pos] == ")":
            # redundant grouping such as "(!T)"; adds no nesting
            return left, pos + 1
        if pos >= len(src) or src[pos] not in "&|":
            raise ParseError(f"expected operator at {pos}")
        op = src[pos]
        right, pos = _parse(src, pos + 1)
        if pos >= len(src) or src[pos] != ")":
            raise ParseError(f"expected ')' at {pos}")
        return (And if op == "&" else Or)(left, right), pos + 1
    raise ParseError(f"unexpected {c!r} at {pos}")


def eval_oracle(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Not):
        return not eval_oracle(e.child)
    if isinstance(e, And):
        return eval_oracle(e.left) and eval_oracle(e.right)
    return eval_oracle(e.left) or eval_oracle(e.right)


def depth_oracle(e: Expr) -> int:
    if isinstance(e, Const):
        return 0
    if isinstance(e, Not):
        return 1 + depth_oracle(e.child)
    return 1 + max(depth_oracle(e.left), depth_oracle(e.right))


@dataclass
class BoolExprInstance:
    ast: Expr
    src: str
    depth: int
    label: int

    @property
    def complexity(self) -> int:
        return self.depth

    def to_json(self) -> str:
        return json.dumps({"src": self.src, "depth": self.depth, "label": self.label})

    @classmethod
    def from_dict(cls, rec: dict) -> "BoolExprInstance":
        return cls(parse(rec["src"]), rec["src"], int(rec["depth"]), int(rec["label"]))


def _build(depth: int, rng: np.random.Generator) -> Expr:
    if depth == 0:
        return Const(bool(rng.integers(2)))
    kind = int(rng.integers(3))
    if kind == 0:
        return Not(_build(depth - 1, rng))
    deep = _build(depth - 1, rng)
    other = _build(int(rng.integers(depth)), rng)
    left, right = (deep, other) if rng.integers(2) else (other, deep)
    return (And if kind == 1 else Or)(left, right)


def gen_expr(depth: int, rng: np.random.Generator | int | None = None,
             label: Optional[int] = None) -> BoolExprInstance:
    """Random expression whose operator nesting is exactly ``depth``.

    With ``label`` given, draws are rejected until the expression evaluates to it.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    while True:
        ast = _build(depth, rng)
        value = int(eval_oracle(ast))
        if label is None or value == label:
            return BoolExprInstance(ast, serialize(ast), depth, value)


def gen_expr_batch(depths: Iterable[int], rng: np.random.Generator) -> list[BoolExprInstance]:
    depths = list(depths)
    labels = balanced_labels(len(depths), rng)
    return [gen_expr(d, rng, lab) for d, lab in zip(depths, labels)]
