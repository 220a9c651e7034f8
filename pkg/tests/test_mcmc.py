import math

import pytest

import factorpdb.factors as factors_mod
from conftest import agreement_model, unary_model, var_world
from factorpdb.errors import ContractViolation
from factorpdb.factors import FactorGraphSpec, UnaryTemplate, exact_distribution
from factorpdb.mcmc import (
    Proposal, UniformFlipProposer, acceptance_probability, chain_marginals, make_rng, mh_step, random_walk,
    world_frequencies,
)
from factorpdb.world import Delta, VariableRef


class FixedProposer:
    """Always proposes setting variable ``key`` to ``value``."""

    def __init__(self, key, value, attribute="VAL"):
        self.key, self.value, self.attribute = key, value, attribute

    def propose(self, world, rng):
        old = world.rows["V"][self.key]
        i = world.schemas["V"].pos[self.attribute]
        return Proposal(Delta.update("V", self.key, old, old[:i] + (self.value,) + old[i + 1:]))


class CountingRng:
    def __init__(self, rng):
        self.rng, self.draws = rng, 0

    def random(self):
        self.draws += 1
        return self.rng.random()

    def randrange(self, n):
        return self.rng.randrange(n)


def forbid_b(n=1):
    t = UnaryTemplate("no_b", "V", ("VAL",), hard=True, predicate="forbid", params={("b",)})
    spec = FactorGraphSpec([t], {("V", "VAL"): ("a", "b")})
    w = var_world(n)
    spec.bind(w)
    return w, spec


def test_acceptance_probability_values():
    assert acceptance_probability(0.0) == 1.0
    assert acceptance_probability(math.log(0.5)) == pytest.approx(0.5, abs=1e-15)
    assert acceptance_probability(float("-inf")) == 0.0
    assert acceptance_probability(3.0) == 1.0
    assert acceptance_probability(0.0, log_q_forward=math.log(2)) == pytest.approx(0.5)


def test_ratio_one_always_accepts():
    w, spec = unary_model(1, {})
    rng = make_rng(1)
    for _ in range(200):
        target = "b" if w.value(VariableRef("V", 1, "VAL")) == "a" else "a"
        assert mh_step(w, spec, FixedProposer(1, target), rng).accepted


def test_half_ratio_accepts_half_the_time():
    w, spec = unary_model(1, {"a": 0.0, "b": math.log(0.5)})
    rng = make_rng(2)
    n, acc = 20_000, 0
    back = FixedProposer(1, "a")
    for _ in range(n):
        r = mh_step(w, spec, FixedProposer(1, "b"), rng)
        if r.accepted:
            acc += 1
            w.apply_delta(back.propose(w, rng).delta)
    assert abs(acc / n - 0.5) < 4 * math.sqrt(0.25 / n)


def test_impossible_world_never_accepted():
    w, spec = forbid_b()
    rng = make_rng(3)
    h = w.digest()
    for _ in range(500):
        assert not mh_step(w, spec, FixedProposer(1, "b"), rng).accepted
    assert w.digest() == h


def test_observed_change_is_contract_violation():
    w, spec = unary_model(1, {})
    with pytest.raises(ContractViolation):
        mh_step(w, spec, FixedProposer(1, 5, attribute="ID"), make_rng(0))


def test_one_uniform_draw_per_proposal():
    w, spec = unary_model(1, {})
    rng = CountingRng(make_rng(4))
    for i in range(1, 51):
        mh_step(w, spec, FixedProposer(1, "b"), rng)
        assert rng.draws == i


def test_walk_all_rejected_gives_empty_delta():
    w, spec = forbid_b()
    res = random_walk(w, spec, FixedProposer(1, "b"), make_rng(0), 100)
    assert res.delta.is_empty()
    assert (res.accepted, res.proposed) == (0, 100)


def test_walk_single_accepted_flip():
    w, spec = unary_model(1, {})
    res = random_walk(w, spec, FixedProposer(1, "b"), make_rng(0), 1)
    assert res.accepted == 1
    assert res.delta.minus == {("V", 1): (1, "a")}
    assert res.delta.plus == {("V", 1): (1, "b")}


def test_walk_delta_links_entry_and_exit():
    w, spec = agreement_model(n=6, values=("a", "b", "c"))
    entry = w.clone()
    res = random_walk(w, spec, UniformFlipProposer(), make_rng(9), 500)
    assert res.accepted <= res.proposed == 500
    assert entry.apply_delta(res.delta).same_contents(w)


def test_walk_needs_a_step():
    w, spec = unary_model(1, {})
    with pytest.raises(ValueError):
        random_walk(w, spec, UniformFlipProposer(), make_rng(0), 0)


def test_same_seed_same_walk():
    results = []
    for _ in range(2):
        w, spec = agreement_model(n=5)
        results.append(random_walk(w, spec, UniformFlipProposer(), make_rng(42), 1000))
    assert results[0] == results[1]


def test_chain_streams_differ():
    a, b = make_rng(7, 0), make_rng(7, 1)
    assert [a.random() for _ in range(5)] != [b.random() for _ in range(5)]
    assert make_rng(7, 1).random() == make_rng(7, 1).random()


def test_agreement_world_frequencies_match_oracle(agreement):
    w, spec = agreement
    truth = exact_distribution(spec, w).probs
    freq = world_frequencies(w, spec, UniformFlipProposer(), make_rng(5), 100_000, 1)
    assert max(abs(freq.get(a, 0.0) - p) for a, p in truth.items()) <= 0.01


def test_no_factor_marginal_is_half():
    w, spec = unary_model(1, {})
    m = chain_marginals(w, spec, UniformFlipProposer(), make_rng(6), 10_000, 1)
    assert abs(m[VariableRef("V", 1, "VAL")]["a"] - 0.5) <= 0.02


def test_agreement_marginals_match_oracle():
    w, spec = agreement_model(n=4, log_psi=0.8)
    exact = exact_distribution(spec, w).marginals()
    est = chain_marginals(w, spec, UniformFlipProposer(), make_rng(8), 20_000, 3)
    err = max(abs(est[r].get(v, 0.0) - p) for r in exact for v, p in exact[r].items())
    assert err < 0.02


def test_forbidden_value_never_sampled():
    w, spec = forbid_b(3)
    m = chain_marginals(w, spec, UniformFlipProposer(), make_rng(1), 2000, 5)
    assert all(d.get("b", 0.0) == 0.0 for d in m.values())


def test_detailed_balance_counts(agreement):
    w, spec = agreement
    refs = w.hidden_refs()
    rng = make_rng(11)
    prop = UniformFlipProposer()
    moves, visits = {}, {}
    state = tuple(w.value(r) for r in refs)
    for _ in range(1_000_000):
        mh_step(w, spec, prop, rng)
        new = tuple(w.value(r) for r in refs)
        visits[new] = visits.get(new, 0) + 1
        if new != state:
            moves[(state, new)] = moves.get((state, new), 0) + 1
        state = new
    for (a, b), n_ab in moves.items():
        n_ba = moves.get((b, a), 0)
        assert abs(n_ab - n_ba) <= 0.05 * max(n_ab, n_ba)


def test_accept_path_never_normalises(monkeypatch, agreement):
    def boom(*a, **k):
        raise AssertionError("normaliser computed on the accept path")

    monkeypatch.setattr(factors_mod, "logsumexp", boom)
    monkeypatch.setattr(factors_mod, "exact_distribution", boom)
    w, spec = agreement
    random_walk(w, spec, UniformFlipProposer(), make_rng(0), 1000)


def test_uniform_proposer_needs_variables():
    w, spec = unary_model(0, {})
    with pytest.raises(ValueError):
        UniformFlipProposer().propose(w, make_rng(0))
