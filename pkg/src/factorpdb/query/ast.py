"""Relational-algebra expression trees.

Column references are strings, either qualified (``"T1.STRING"``) or bare
(``"STRING"``); they are resolved against input schemas when a query is
compiled. Every scan qualifies its columns with its alias, which defaults
to the relation name.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union


@dataclass(frozen=True)
class Col:
    name: str


@dataclass(frozen=True)
class Const:
    value: Any


Operand = Union[Col, Const]


@dataclass(frozen=True)
class Cmp:
    left: Operand
    op: str  # "=" or "!="
    right: Operand

    def __post_init__(self):
        if self.op not in ("=", "!="):
            raise ValueError(f"unsupported comparison {self.op!r}")


@dataclass(frozen=True)
class And:
    terms: tuple


Predicate = Union[Cmp, And]


def eq(column, value):
    """``column = value``; a value given as ``Col`` compares two columns."""
    return Cmp(Col(column), "=", value if isinstance(value, (Col, Const)) else Const(value))


def ne(column, value):
    return Cmp(Col(column), "!=", value if isinstance(value, (Col, Const)) else Const(value))


def conj(*terms):
    flat = []
    for t in terms:
        flat.extend(t.terms if isinstance(t, And) else (t,))
    return flat[0] if len(flat) == 1 else And(tuple(flat))


class Query:
    """Base for plan-tree nodes."""


@dataclass(frozen=True)
class Scan(Query):
    relation: str
    alias: str | None = None


@dataclass(frozen=True)
class Select(Query):
    child: Query
    predicate: Predicate


@dataclass(frozen=True)
class Project(Query):
    child: Query
    columns: tuple


@dataclass(frozen=True)
class Product(Query):
    left: Query
    right: Query


@dataclass(frozen=True)
class Join(Query):
    """Product filtered by ``predicate``; column equalities across sides hash-join."""

    left: Query
    right: Query
    predicate: Predicate


@dataclass(frozen=True)
class CountAll(Query):
    child: Query


@dataclass(frozen=True)
class GroupCount(Query):
    child: Query
    group: tuple


@dataclass(frozen=True)
class CountEqFilter(Query):
    """Rows of ``child`` whose group has as many ``left`` matches as ``right`` matches.

    Expresses a correlated ``(SELECT COUNT(*) ...) = (SELECT COUNT(*) ...)``
    over the same relation. With ``distinct`` one ``(group,)`` row is emitted
    per qualifying group instead of every qualifying source row.
    """

    child: Query
    group: str
    left: Predicate
    right: Predicate
    distinct: bool = False
