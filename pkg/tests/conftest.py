import math

import pytest

from factorpdb.factors import ChainTemplate, FactorGraphSpec, UnaryTemplate
from factorpdb.modelfile import load_model
from factorpdb.ner import default_model_path, generate_synthetic_corpus
from factorpdb.tokens import token_world
from factorpdb.world import Attribute, Schema, World

QUERY1 = "SELECT STRING FROM TOKEN WHERE LABEL='B-PER'"
QUERY2 = "SELECT COUNT(*) FROM TOKEN WHERE LABEL='B-PER'"
QUERY3 = ("SELECT T.doc_id FROM Token T WHERE (SELECT COUNT(*) FROM Token T1 "
          "WHERE T1.label=`B-PER' AND T.doc_id=T1.doc_id) = (SELECT COUNT(*) FROM Token T1 "
          "WHERE T1.label=`B-ORG' AND T.doc_id=T1.doc_id)")
QUERY4 = ("SELECT T2.STRING FROM TOKEN T1, TOKEN T2 WHERE T1.STRING='Boston' AND T1.LABEL='B-ORG' "
          "AND T1.DOC_ID=T2.DOC_ID AND T2.LABEL='B-PER'")
FIXTURE_QUERIES = (QUERY1, QUERY2, QUERY3, QUERY4)

VAR_SCHEMA = Schema("V", [Attribute("ID", "int"), Attribute("VAL")], "ID")


def var_world(n, values=("a", "b"), init=None):
    """``n`` hidden variables ``V.VAL`` keyed 1..n."""
    w = World([VAR_SCHEMA])
    w.declare_hidden("V", "VAL", values)
    for i in range(1, n + 1):
        w.insert("V", (i, init or values[0]))
    return w


def agreement_model(n=2, log_psi=math.log(2), values=("a", "b")):
    """Chain of agreement factors over ``n`` variables with weight ``log_psi`` on equal pairs."""
    t = ChainTemplate("agree", "V", "VAL", feature="agreement", weights={("agree",): log_psi})
    spec = FactorGraphSpec([t], {("V", "VAL"): values})
    w = var_world(n, values)
    spec.bind(w)
    return w, spec


def unary_model(n, weights, values=("a", "b")):
    t = UnaryTemplate("prior", "V", ("VAL",), weights={(v,): x for v, x in weights.items()})
    spec = FactorGraphSpec([t], {("V", "VAL"): values})
    w = var_world(n, values)
    spec.bind(w)
    return w, spec


@pytest.fixture
def agreement():
    return agreement_model()


@pytest.fixture(scope="session")
def skip_model():
    return load_model(default_model_path())


def synthetic_world(docs, tokens_per_doc, seed=0):
    return token_world(generate_synthetic_corpus(docs, tokens_per_doc, seed=seed))


# Six tokens in two documents; Bill appears twice.
SIX_TOKENS = [
    (1, 1, "Bill", "B-PER"), (2, 1, "met", "O"), (3, 1, "Ann", "B-PER"),
    (4, 2, "Bill", "B-PER"), (5, 2, "at", "O"), (6, 2, "IBM", "B-ORG"),
]


@pytest.fixture
def six_tokens():
    return token_world(SIX_TOKENS)
