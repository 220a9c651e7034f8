import collections
import math

import pytest

from conftest import synthetic_world
from factorpdb.mcmc import make_rng
from factorpdb.ner import (
    BatchState, SkipChainProposer, TruthModel, Vocabulary, bio_validate, build_skip_chain_spec,
    default_model_text, generate_synthetic_corpus, log_q_symmetric, mentions, refresh_batch,
    uniform_flip_proposal,
)
from factorpdb.tokens import BIO_LABELS, TOKEN, token_world
from factorpdb.world import Delta, VariableRef

WEIGHTS = {"emission": {("IBM", "B-ORG"): 2.0}, "transition": {("O", "O"): 0.5},
           "bias": {("O",): 1.0}, "skip": {("agree",): 1.5}}

# Two sentences, three IBM mentions; the middle one has a neighbour on each side.
IBM_DOC = [
    (1, 1, "IBM", "B-ORG"), (2, 1, "hired", "O"), (3, 1, "Ann", "B-PER"), (4, 1, "at", "O"),
    (5, 1, "IBM", "B-ORG"), (6, 1, "and", "O"), (7, 1, "IBM", "B-ORG"), (8, 1, "grew", "O"),
]


def spec_for(records, **kw):
    spec = build_skip_chain_spec(WEIGHTS, **kw)
    return spec, spec.bind(token_world(records))


def flip(world, key, label):
    old = world.rows[TOKEN][key]
    return Delta.update(TOKEN, key, old, old[:3] + (label,) + old[4:])


def by_template(instances):
    return collections.Counter(i.template.name for i in instances)


def test_nine_labels():
    assert len(BIO_LABELS) == 9 and "O" in BIO_LABELS


def test_single_token_document():
    spec, w = spec_for([(1, 1, "IBM", "O")])
    touched = spec.touched_factors(w, [VariableRef(TOKEN, 1, "LABEL")])
    assert by_template(touched) == {"emission": 1, "bias": 1}


def test_middle_ibm_flip_scores_twelve_factors():
    spec, w = spec_for(IBM_DOC)
    w.update_field(VariableRef(TOKEN, 5, "LABEL"), "B-LOC")
    touched = spec.touched_factors(w, [VariableRef(TOKEN, 5, "LABEL")])
    assert by_template(touched) == {"emission": 1, "transition": 2, "bias": 1, "skip": 2}
    _, nfactors = spec.local_transition(w, flip(w, 5, "B-ORG"))
    assert nfactors == 12


def test_no_repeated_strings_no_skip_factors():
    spec, w = spec_for([(i, 1, f"Word{i}", "O") for i in range(1, 30)])
    assert not [i for i in spec.instances(w) if i.template.name == "skip"]


def test_lowercase_repeats_are_not_linked_by_default():
    records = [(1, 1, "the", "O"), (2, 1, "the", "O")]
    spec, w = spec_for(records)
    assert not by_template(spec.instances(w))["skip"]
    spec, w = spec_for(records, capitalized_only=False)
    assert by_template(spec.instances(w))["skip"] == 1


def test_corpus_scope_links_across_documents():
    records = [(1, 1, "IBM", "O"), (2, 2, "IBM", "O"), (3, 2, "IBM", "O")]
    spec, w = spec_for(records)
    assert by_template(spec.instances(w))["skip"] == 1
    spec, w = spec_for(records, scope="corpus")
    assert by_template(spec.instances(w))["skip"] == 3


def test_missing_weights_warn_and_unknown_templates_fail():
    with pytest.warns(UserWarning, match="skip"):
        build_skip_chain_spec({"emission": {("a", "O"): 1.0}, "transition": {("O", "O"): 1.0},
                               "bias": {("O",): 1.0}})
    with pytest.raises(ValueError):
        build_skip_chain_spec({"emision": {}})
    with pytest.raises(ValueError):
        build_skip_chain_spec(WEIGHTS, scope="sentence")


def test_shipped_weights_favour_planted_labels(skip_model):
    emission = skip_model.template("emission").weights
    assert emission[("IBM", "B-ORG")] > 0
    assert skip_model.template("skip").weights[("agree",)] > 0


def test_default_model_text_is_loadable(tmp_path):
    p = tmp_path / "m.model"
    p.write_text(default_model_text(Vocabulary(["the"], {"ORG": [("IBM",)]})))
    spec = build_skip_chain_spec(p)
    assert spec.template("emission").weights == {("IBM", "B-ORG"): 1.5, ("the", "O"): 2.0}


# -- proposer -----------------------------------------------------------------------------

def frozen_batch(world):
    return BatchState([1], [VariableRef(TOKEN, k, "LABEL") for k in sorted(world.rows[TOKEN])])


def proposed(world, delta):
    (key, old), = delta.minus.items()
    return key[1], old[3], delta.plus[key][3]


def test_single_variable_noop_rate():
    w = token_world([(1, 1, "IBM", "O")])
    batch, rng = frozen_batch(w), make_rng(1)
    n = 90_000
    noop = sum(proposed(w, uniform_flip_proposal(batch, w, rng).delta)[2] == "O" for _ in range(n))
    assert abs(noop / n - 1 / 9) < 4 * math.sqrt((1 / 9) * (8 / 9) / n)
    assert batch.proposals_since_load == n


def test_variables_chosen_uniformly():
    w = token_world([(i, 1, "x", "O") for i in range(1, 5)])
    batch, rng = frozen_batch(w), make_rng(2)
    hits = collections.Counter(proposed(w, uniform_flip_proposal(batch, w, rng).delta)[0]
                               for _ in range(100_000))
    sigma = math.sqrt(100_000 * 0.25 * 0.75)
    assert all(abs(hits[k] - 25_000) <= 3 * sigma for k in range(1, 5))


def test_proposer_symmetry_chi_square():
    # nine variables, one per label, so every ordered label pair is proposable
    w = token_world([(i, 1, "x", "O") for i in range(1, 10)])
    for key, lab in enumerate(BIO_LABELS, start=1):
        w.update_field(VariableRef(TOKEN, key, "LABEL"), lab)
    batch, rng = frozen_batch(w), make_rng(3)
    moves = collections.Counter(proposed(w, uniform_flip_proposal(batch, w, rng).delta)[1:]
                                for _ in range(100_000))
    stat = 0.0
    for i, a in enumerate(BIO_LABELS):
        for b in BIO_LABELS[i + 1:]:
            ab, ba = moves[(a, b)], moves[(b, a)]
            stat += (ab - ba) ** 2 / (ab + ba)
    # 36 unordered pairs; 0.999 quantile of chi-square(36)
    assert stat < 67.985


def test_log_q_is_symmetric():
    assert log_q_symmetric(4) == pytest.approx(-math.log(36))
    assert log_q_symmetric(4) - log_q_symmetric(4) == 0.0


def test_refresh_batch_small_corpus_loads_everything():
    w = synthetic_world(3, 10)
    b = refresh_batch(w, make_rng(0))
    assert sorted(b.docs) == [1, 2, 3]
    assert len(b.variables) == 30


def test_refresh_batch_picks_five_distinct():
    w = synthetic_world(20, 5)
    b = refresh_batch(w, make_rng(0))
    assert len(set(b.docs)) == 5
    assert {w.rows[TOKEN][v.key][1] for v in b.variables} == set(b.docs)


def test_refresh_batch_empty_corpus():
    with pytest.raises(ValueError):
        refresh_batch(token_world(), make_rng(0))


def test_proposer_refreshes_every_2000():
    w = synthetic_world(20, 5)
    p = SkipChainProposer()
    rng = make_rng(0)
    for _ in range(4001):
        p.propose(w, rng)
    assert p.refreshes == 3


# -- BIO ----------------------------------------------------------------------------------

@pytest.mark.parametrize("labels, bad", [
    (["B-PER", "I-PER", "O"], []),
    (["O", "I-ORG"], [1]),
    ([], []),
    (["B-PER", "I-ORG", "I-ORG"], [1]),
    (["I-LOC", "I-LOC"], [0]),
])
def test_bio_validate(labels, bad):
    assert bio_validate(labels) == bad


def test_mentions():
    assert mentions(["B-PER", "I-PER", "O", "B-ORG", "I-LOC"]) == [(0, 2, "PER"), (3, 4, "ORG"), (4, 5, "LOC")]


# -- synthetic corpus -------------------------------------------------------------------------

def test_generator_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    generate_synthetic_corpus(5, 40, seed=3, path=a)
    generate_synthetic_corpus(5, 40, seed=3, path=b)
    assert a.read_bytes() == b.read_bytes()
    generate_synthetic_corpus(5, 40, seed=4, path=b)
    assert a.read_bytes() != b.read_bytes()


def test_one_string_vocabulary_links_every_token():
    recs = generate_synthetic_corpus(2, 6, vocab="Boston", seed=0)
    spec, w = spec_for(recs)
    # C(6,2) pairs per document
    assert by_template(spec.instances(w))["skip"] == 2 * 15


def test_zero_docs_is_header_only(tmp_path):
    p = tmp_path / "c.tsv"
    assert generate_synthetic_corpus(0, 10, path=p) == []
    assert p.read_text() == "TOK_ID\tDOC_ID\tSTRING\tTRUTH\n"


def test_planted_truth_is_valid_bio():
    recs = generate_synthetic_corpus(40, 50, seed=9, truth_model=TruthModel(mention_rate=0.5))
    for doc in {r[1] for r in recs}:
        assert bio_validate([r[3] for r in recs if r[1] == doc]) == []


def test_planted_strings_repeat_within_documents():
    recs = generate_synthetic_corpus(10, 100, seed=1)
    per_doc = collections.Counter((r[1], r[2]) for r in recs if r[2][:1].isupper())
    assert sum(c > 1 for c in per_doc.values()) >= 10


def test_generator_rejects_bad_sizes():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(-1, 5)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(1, 5, vocab=Vocabulary([], {}))


def test_factor_count_per_step_independent_of_size(skip_model):
    def mean_factors(docs):
        w = skip_model.bind(synthetic_world(docs, 100, seed=2))
        rng, p = make_rng(0), SkipChainProposer()
        total = 0
        for _ in range(3000):
            d = p.propose(w, rng).delta
            total += skip_model.local_transition(w, d)[1]
            w.revert_delta(d)
        return total / 3000

    small, large = mean_factors(10), mean_factors(100)
    assert abs(large / small - 1) <= 0.1
