"""Relational algebra with bag semantics: AST, parser, plans."""
from .ast import (
    And, Cmp, Col, Const, CountAll, CountEqFilter, GroupCount, Join, Product, Project, Query, Scan,
    Select, conj, eq, ne,
)
from .multiset import AnswerDelta, MultisetAnswer, maintain
from .plan import CompiledQuery, DeltaContext, compile_query, validate
from .sql import parse_query


def execute(query, world) -> MultisetAnswer:
    """Evaluate ``query`` (text, AST or compiled) from scratch on ``world``."""
    return compile_query(query, world.schemas).execute(world)


__all__ = [
    "And", "AnswerDelta", "Cmp", "Col", "CompiledQuery", "Const", "CountAll", "CountEqFilter",
    "DeltaContext", "GroupCount", "Join", "MultisetAnswer", "Product", "Project", "Query", "Scan",
    "Select", "compile_query", "conj", "eq", "execute", "maintain", "ne", "parse_query", "validate",
]
