import random

import pytest

from conftest import FIXTURE_QUERIES, QUERY1, QUERY2, QUERY3, QUERY4
from factorpdb.errors import CorruptionError
from factorpdb.incremental import IncrementalQuery, delta_aggregate, delta_execute
from factorpdb.query import AnswerDelta, DeltaContext, MultisetAnswer, compile_query, execute, maintain
from factorpdb.tokens import TOKEN, token_world
from factorpdb.world import Delta, VariableRef
from gen import QUERY_KINDS, random_delta, random_query, random_token_world


def flip(world, key, label):
    """Delta setting ``key``'s label, leaving ``world`` as it was."""
    return world.clone().update_field(VariableRef(TOKEN, key, "LABEL"), label)


def check(query, world, delta):
    after = world.clone().apply_delta(delta)
    got = maintain(execute(query, world), delta_execute(query, world, delta))
    assert got == execute(query, after), query


def test_empty_delta_gives_empty_answer_delta(six_tokens):
    for q in FIXTURE_QUERIES:
        assert delta_execute(q, six_tokens, Delta()).is_empty()


def test_query1_single_flip(six_tokens):
    d = delta_execute(QUERY1, six_tokens, flip(six_tokens, 4, "B-PER"))
    assert d.removals == {}
    assert d.additions == {("Bill",): 1}


def test_query2_count_swap(six_tokens):
    six_tokens.update_field(VariableRef(TOKEN, 1, "LABEL"), "B-PER")
    d = delta_execute(QUERY2, six_tokens, flip(six_tokens, 3, "B-PER"))
    assert d.removals == {(1,): 1}
    assert d.additions == {(2,): 1}


def test_query4_random_three_tuple_deltas():
    rng = random.Random(4)
    for _ in range(100):
        w = random_token_world(rng, max_tuples=60, max_docs=3)
        if len(w.rows[TOKEN]) < 3:
            continue
        scratch = w.clone()
        d = Delta()
        for key in rng.sample(list(w.rows[TOKEN]), 3):
            d.absorb(scratch.update_field(VariableRef(TOKEN, key, "LABEL"), rng.choice(("B-PER", "B-ORG", "O"))))
        check(QUERY4, w, d)


def test_query3_random_deltas():
    rng = random.Random(3)
    for _ in range(100):
        w = random_token_world(rng, max_tuples=80, max_docs=4)
        check(QUERY3, w, random_delta(rng, w))


def test_maintain_examples():
    t, u = ("t",), ("u",)
    assert maintain(MultisetAnswer({t: 2}), AnswerDelta(MultisetAnswer({t: 1}), MultisetAnswer({u: 1}))) \
        == {t: 1, u: 1}
    gone = maintain(MultisetAnswer({t: 1}), AnswerDelta(MultisetAnswer({t: 1}), MultisetAnswer()))
    assert gone == {} and t not in gone
    base = MultisetAnswer({t: 3, u: 1})
    d = AnswerDelta(MultisetAnswer({t: 2, u: 1}), MultisetAnswer({("v",): 4}))
    assert maintain(maintain(base, d), d.inverse()) == base


def test_maintain_does_not_mutate_input():
    a = MultisetAnswer({("t",): 1})
    maintain(a, AnswerDelta(MultisetAnswer({("t",): 1}), MultisetAnswer()))
    assert a == {("t",): 1}


def test_over_removal_is_corruption():
    with pytest.raises(CorruptionError):
        maintain(MultisetAnswer({("t",): 1}), AnswerDelta(MultisetAnswer({("t",): 2}), MultisetAnswer()))


def test_inconsistent_delta_is_corruption(six_tokens):
    bogus = Delta.update(TOKEN, 1, (1, 1, "Bill", "B-PER", "B-PER"), (1, 1, "Bill", "O", "B-PER"))
    session = IncrementalQuery(QUERY1, six_tokens)
    with pytest.raises(CorruptionError):
        session.advance(six_tokens, bogus)
        six_tokens.apply_delta(bogus)


@pytest.mark.parametrize("kind", QUERY_KINDS)
def test_equivalence_fuzz(kind):
    rng = random.Random(100 + QUERY_KINDS.index(kind))
    for _ in range(300):
        w = random_token_world(rng, max_tuples=rng.choice((20, 200)))
        check(random_query(rng, kind), w, random_delta(rng, w))


@pytest.mark.parametrize("query", FIXTURE_QUERIES, ids=["q1", "q2", "q3", "q4"])
def test_chained_deltas_equal_final_execution(query):
    rng = random.Random(50)
    w = random_token_world(rng, max_tuples=150, max_docs=5)
    session = IncrementalQuery(query, w)
    for _ in range(50):
        d = random_delta(rng, w)
        session.advance(w, d)
        w.apply_delta(d)
    assert session.answer == execute(query, w)
    session.verify(w)


def test_verify_catches_drift(six_tokens):
    session = IncrementalQuery(QUERY1, six_tokens)
    session.answer.add(("ghost",))
    with pytest.raises(CorruptionError, match="diverged"):
        session.verify(six_tokens)
    session.reset(six_tokens)
    session.verify(six_tokens)


def test_query1_work_bound():
    def reads_for(n):
        w = token_world([(i, i // 50, f"s{i % 7}", "O") for i in range(n)])
        d = flip(w, 3, "B-PER")
        d.absorb(w.clone().apply_delta(d).update_field(VariableRef(TOKEN, 9, "LABEL"), "B-PER"))
        w.reads = 0
        delta_execute(QUERY1, w, d)
        delta_reads = w.reads
        w.reads = 0
        execute(QUERY1, w)
        return delta_reads, w.reads

    small, full_small = reads_for(1_000)
    large, full_large = reads_for(50_000)
    assert small == large <= 4
    assert full_small >= 1_000 and full_large >= 50_000


def test_delta_aggregate_query2_swap(six_tokens):
    groups = compile_query(QUERY2, six_tokens.schemas).build_cache(six_tokens)
    d = delta_aggregate(QUERY2, six_tokens, flip(six_tokens, 2, "B-PER"), groups)
    assert d.removals == {(0,): 1} and d.additions == {(1,): 1}


def test_delta_aggregate_recomputes_only_touched_groups():
    records = [(i, 1 + i // 10, f"s{i % 3}", "O") for i in range(100)]
    w = token_world(records)
    plan = compile_query(QUERY3, w.schemas)
    groups = plan.build_cache(w)
    scratch = w.clone()
    d = Delta()
    for key in (31, 33, 38):
        d.absorb(scratch.update_field(VariableRef(TOKEN, key, "LABEL"), "B-PER"))
    ctx = DeltaContext()
    ad = delta_aggregate(QUERY3, w, d, groups, ctx)
    assert ctx.groups_touched == 1
    # doc 4 had 0 = 0 and now 3 != 0
    assert ad.removals == {(4,): 10} and ad.additions == {}
    assert plan.execute(scratch) == maintain(plan.execute(w), ad)


def test_session_counts_groups_touched():
    w = token_world([(i, 1 + i // 10, "x", "O") for i in range(100)])
    session = IncrementalQuery("SELECT DOC_ID, COUNT(*) FROM TOKEN WHERE LABEL='B-PER' GROUP BY DOC_ID", w)
    d = flip(w, 55, "B-PER")
    session.advance(w, d)
    w.apply_delta(d)
    assert session.groups_touched == 1
    assert session.answer == {(6, 1): 1}
    session.verify(w)


@pytest.mark.parametrize("query", [QUERY2, QUERY3], ids=["q2", "q3"])
def test_cached_and_uncached_aggregate_deltas_agree(query):
    rng = random.Random(8)
    w = random_token_world(rng, max_tuples=120, max_docs=6)
    plan = compile_query(query, w.schemas)
    cache = plan.build_cache(w)
    for _ in range(30):
        d = random_delta(rng, w)
        assert plan.delta(w, d, cache) == delta_execute(query, w, d)
        w.apply_delta(d)
