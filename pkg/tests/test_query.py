import random

import pytest

from conftest import QUERY1, QUERY2, QUERY3, QUERY4
from factorpdb.errors import ParseError, QueryValidationError
from factorpdb.query import (
    Col, CountAll, GroupCount, MultisetAnswer, Project, Scan, Select, compile_query, eq, execute, parse_query,
    validate,
)
from factorpdb.query.ast import CountEqFilter, Join
from factorpdb.tokens import TOKEN, TOKEN_SCHEMA, token_world
from factorpdb.world import VariableRef
from gen import QUERY_KINDS, random_query, random_token_world
from oracles import reference_answer

SCHEMAS = {TOKEN: TOKEN_SCHEMA}


def labelled(records):
    """Token world with LABEL set from the TRUTH column."""
    w = token_world(records)
    for tok, _, _, truth in records:
        w.update_field(VariableRef(TOKEN, tok, "LABEL"), truth)
    return w


EIGHT_TOKENS = [
    (1, 1, "Boston", "B-ORG"), (2, 1, "Ortiz", "B-PER"), (3, 1, "Bill", "B-PER"), (4, 1, "the", "O"),
    (5, 2, "Boston", "B-LOC"), (6, 2, "Ann", "B-PER"), (7, 2, "Boston", "B-ORG"), (8, 2, "Ortiz", "B-PER"),
]


def test_query1_multiset_projection(six_tokens):
    w = labelled([(1, 1, "Bill", "B-PER"), (2, 1, "met", "O"), (3, 1, "Ann", "B-ORG"),
                  (4, 2, "Bill", "B-PER"), (5, 2, "at", "O"), (6, 2, "IBM", "B-ORG")])
    assert execute(QUERY1, w) == {("Bill",): 2}


def test_query2_on_initial_world(six_tokens):
    assert execute(QUERY2, six_tokens) == {(0,): 1}


def test_query4_matches_nested_loops():
    w = labelled(EIGHT_TOKENS)
    ans = execute(QUERY4, w)
    assert ans == reference_answer(parse_query(QUERY4), w)
    # doc 1: one Boston/B-ORG x two persons; doc 2: one Boston/B-ORG x two persons
    assert ans == {("Ortiz",): 2, ("Bill",): 1, ("Ann",): 1}


def test_query3_literal_and_distinct():
    w = labelled(EIGHT_TOKENS)
    # doc 1: 2 B-PER vs 1 B-ORG; doc 2: 2 B-PER vs 1 B-ORG -> none qualify
    assert execute(QUERY3, w) == {}
    w.update_field(VariableRef(TOKEN, 5, "LABEL"), "B-ORG")
    assert execute(QUERY3, w) == {(2,): 4}
    distinct = QUERY3.replace("SELECT T.doc_id", "SELECT DISTINCT T.doc_id")
    assert execute(distinct, w) == {(2,): 1}


def test_count_all_and_group_count(six_tokens):
    assert execute(CountAll(Scan(TOKEN)), six_tokens) == {(6,): 1}
    assert execute("SELECT DOC_ID, COUNT(*) FROM TOKEN GROUP BY DOC_ID", six_tokens) == {(1, 3): 1, (2, 3): 1}


def test_empty_relation_answers():
    w = token_world()
    assert execute(QUERY1, w) == {}
    assert execute(QUERY2, w) == {(0,): 1}
    assert execute(QUERY3, w) == {}


def test_validate_errors_are_collected():
    with pytest.raises(QueryValidationError) as e:
        validate(Project(Select(Scan(TOKEN), eq("NOPE", "x")), ("MISSING",)), SCHEMAS)
    assert len(e.value.errors) == 2
    assert any("NOPE" in m for m in e.value.errors)
    assert any("MISSING" in m for m in e.value.errors)


def test_validate_query3_gives_plan():
    plan = validate(parse_query(QUERY3), SCHEMAS)
    assert plan.columns == ("T.DOC_ID",)


def test_validate_type_mismatch():
    with pytest.raises(QueryValidationError):
        validate(Select(Scan(TOKEN), eq("DOC_ID", "one")), SCHEMAS)


def test_validate_unknown_relation():
    with pytest.raises(QueryValidationError):
        compile_query("SELECT STRING FROM NOPE", SCHEMAS)


def test_ambiguous_bare_column():
    with pytest.raises(QueryValidationError, match="ambiguous"):
        compile_query("SELECT STRING FROM TOKEN T1, TOKEN T2 WHERE T1.DOC_ID = T2.DOC_ID", SCHEMAS)


@pytest.mark.parametrize("text, pos", [
    ("SELECT FROM TOKEN", 7),
    ("SELECT STRING FROM TOKEN WHERE LABEL = ", 39),
    ("SELECT STRING FROM TOKEN WHERE LABEL ~ 'x'", 37),
    ("SELECT STRING TOKEN", 14),
])
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(ParseError) as e:
        parse_query(text)
    assert e.value.position == pos
    assert "^" in str(e.value)


def test_parser_builds_join_and_pushdown():
    q = parse_query(QUERY4)
    assert isinstance(q, Project)
    assert isinstance(q.child, Join)
    assert isinstance(q.child.left, Select) and isinstance(q.child.right, Select)


def test_parser_countequal_shape():
    q = parse_query(QUERY3)
    assert isinstance(q, Project)
    assert isinstance(q.child, CountEqFilter)
    assert q.child.group == "T.DOC_ID"


def test_ast_builder_matches_text(six_tokens):
    ast = Project(Select(Scan(TOKEN), eq("LABEL", "O")), ("STRING",))
    assert execute(ast, six_tokens) == execute("SELECT STRING FROM TOKEN WHERE LABEL = 'O'", six_tokens)
    assert execute(GroupCount(Scan(TOKEN), ("DOC_ID",)), six_tokens).total() == 2
    assert Col("x") == Col("x")


def test_multiset_counter_rules():
    a = MultisetAnswer({("t",): 2})
    a.remove(("t",))
    assert a.count(("t",)) == 1
    a.remove(("t",))
    assert ("t",) not in a and len(a) == 0


@pytest.mark.parametrize("kind", QUERY_KINDS)
def test_execute_matches_reference_evaluator(kind):
    rng = random.Random(QUERY_KINDS.index(kind))
    for _ in range(80):
        w = random_token_world(rng, max_tuples=100)
        q = random_query(rng, kind)
        assert execute(q, w) == reference_answer(q, w), q
