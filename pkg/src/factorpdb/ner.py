"""Skip-chain named-entity model over the TOKEN relation.

The factor graph has four templates: emission (string and label of one
token), transition (labels of consecutive tokens in a document), bias (one
label) and skip (labels of two tokens with the same capitalised string in
the same document, scored by an agreement feature). The proposer flips one
label at a time among the tokens of a small batch of documents.

Also here: BIO checks and a seeded synthetic corpus generator.
"""
from __future__ import annotations

import math
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .factors import ChainTemplate, FactorGraphSpec, SkipTemplate, UnaryTemplate
from .mcmc import Proposal
from .modelfile import parse_weights
from .tokens import BIO_LABELS, TOKEN, write_corpus
from .world import Delta, VariableRef

BATCH_DOCS = 5
REFRESH_EVERY = 2000

TEMPLATE_NAMES = ("emission", "transition", "bias", "skip")


# -- BIO ----------------------------------------------------------------------------

def bio_validate(labels) -> list[int]:
    """Positions holding an ``I-T`` that does not follow ``B-T`` or ``I-T``."""
    bad = []
    prev = "O"
    for i, lab in enumerate(labels):
        if lab.startswith("I-"):
            kind = lab[2:]
            if prev not in ("B-" + kind, "I-" + kind):
                bad.append(i)
        prev = lab
    return bad


def mentions(labels) -> list[tuple[int, int, str]]:
    """``(start, end, type)`` spans of BIO mentions; a stray ``I-T`` opens a new one."""
    out = []
    start = kind = None
    for i, lab in enumerate(list(labels) + ["O"]):
        cont = lab.startswith("I-") and kind == lab[2:]
        if not cont and kind is not None:
            out.append((start, i, kind))
            kind = None
        if lab != "O" and not cont:
            start, kind = i, lab[2:]
    return out


# -- model --------------------------------------------------------------------------

def build_skip_chain_spec(weights=None, scope="document", capitalized_only=True,
                          labels=BIO_LABELS) -> FactorGraphSpec:
    """The four-template model over ``TOKEN``.

    ``weights`` is a path to a file of ``weight`` lines (a full model file
    works too; other lines are ignored), or a ``{template: {key: w}}`` dict.
    Templates without any weight score zero, with a warning. ``scope`` is
    ``"document"`` or ``"corpus"`` for skip edges.
    """
    if scope not in ("document", "corpus"):
        raise ValueError(f"scope must be 'document' or 'corpus', not {scope!r}")
    if weights is None:
        table = {}
    elif isinstance(weights, dict):
        table = weights
    else:
        path = Path(weights)
        table = parse_weights(path.read_text(encoding="utf-8"), source=str(path))
    unknown = set(table) - set(TEMPLATE_NAMES)
    if unknown:
        raise ValueError(f"weights for unknown templates: {sorted(unknown)}")
    for name in TEMPLATE_NAMES:
        if not table.get(name):
            warnings.warn(f"no weights for template {name!r}; its factors score 0", stacklevel=2)
    group = "DOC_ID" if scope == "document" else None
    templates = [
        UnaryTemplate("emission", TOKEN, ("STRING", "LABEL"), weights=table.get("emission")),
        ChainTemplate("transition", TOKEN, "LABEL", group="DOC_ID", weights=table.get("transition")),
        UnaryTemplate("bias", TOKEN, ("LABEL",), weights=table.get("bias")),
        SkipTemplate("skip", TOKEN, "LABEL", "STRING", group=group, capitalized=capitalized_only,
                     feature="agreement", weights=table.get("skip")),
    ]
    return FactorGraphSpec(templates, {(TOKEN, "LABEL"): labels})


# -- proposer -----------------------------------------------------------------------

@dataclass
class BatchState:
    """Label variables of the currently loaded documents."""

    docs: list = field(default_factory=list)
    variables: list = field(default_factory=list)
    proposals_since_load: int = 0


def _doc_keys(world):
    return world.ordered_groups(TOKEN, "DOC_ID")


def refresh_batch(world, rng, max_docs: int = BATCH_DOCS) -> BatchState:
    """Pick up to ``max_docs`` documents uniformly without replacement."""
    og = _doc_keys(world)
    docs = og.group_values
    if not docs:
        raise ValueError("cannot load a batch from an empty corpus")
    chosen = rng.sample(docs, min(max_docs, len(docs)))
    variables = [VariableRef(TOKEN, k, "LABEL") for d in chosen for k in og.groups[d]]
    return BatchState(chosen, variables, 0)


def uniform_flip_proposal(batch: BatchState, world, rng, labels=BIO_LABELS) -> Proposal:
    """Flip one batch label to a uniform choice of all labels (possibly unchanged)."""
    if not batch.variables:
        raise ValueError("empty batch")
    ref = batch.variables[rng.randrange(len(batch.variables))]
    value = labels[rng.randrange(len(labels))]
    batch.proposals_since_load += 1
    i = world.schemas[TOKEN].pos[ref.attribute]
    old = world.rows[TOKEN][ref.key]
    new = old[:i] + (value,) + old[i + 1:]
    return Proposal(Delta.update(TOKEN, ref.key, old, new))


class SkipChainProposer:
    """Batch-of-documents label flipper.

    A new batch is loaded before the first proposal and after every
    ``refresh_every`` proposals, whatever the thinning interval. Forward and
    backward proposal probabilities are equal, so the q-ratio is zero.
    """

    def __init__(self, max_docs: int = BATCH_DOCS, refresh_every: int = REFRESH_EVERY, labels=BIO_LABELS):
        self.max_docs = max_docs
        self.refresh_every = refresh_every
        self.labels = tuple(labels)
        self.batch: BatchState | None = None
        self.refreshes = 0

    def propose(self, world, rng) -> Proposal:
        batch = self.batch
        if batch is None or batch.proposals_since_load >= self.refresh_every:
            batch = self.batch = refresh_batch(world, rng, self.max_docs)
            self.refreshes += 1
        return uniform_flip_proposal(batch, world, rng, self.labels)


# -- synthetic corpus --------------------------------------------------------------------

ENTITY_TYPES = ("PER", "ORG", "LOC", "MISC")


@dataclass
class Vocabulary:
    """Filler words (truth ``O``) and multi-token entity names per type."""

    fillers: list
    entities: dict = field(default_factory=dict)  # type -> list of name tuples

    @classmethod
    def of(cls, vocab):
        if isinstance(vocab, Vocabulary):
            return vocab
        if isinstance(vocab, str):
            vocab = [vocab]
        return cls(list(vocab), {})

    def names(self):
        return [(t, name) for t in ENTITY_TYPES for name in self.entities.get(t, ())]


@dataclass
class TruthModel:
    """How often mentions occur and how many distinct entities a document uses."""

    mention_rate: float = 0.15
    entities_per_doc: int = 4


DEFAULT_VOCABULARY = Vocabulary(
    fillers=[
        "the", "a", "of", "and", "to", "in", "said", "on", "for", "with", "at", "by", "from",
        "that", "was", "is", "has", "will", "his", "her", "their", "new", "after", "before",
        "team", "game", "city", "company", "deal", "market", "season", "report", "officials",
        "week", "year", "plan", "told", "visit", "meeting", "share", "price", "win", "loss",
        "coach", "players", "fans", "board", "court", "election", "campaign",
    ],
    entities={
        "PER": [("Bill", "Clinton"), ("Hillary", "Clinton"), ("Ann", "Lee"), ("David", "Ortiz"),
                ("Curt", "Schilling"), ("John", "Kerry"), ("Maria", "Lopez"), ("Clinton",),
                ("Kerry",), ("Ortiz",), ("Jordan",), ("Washington",)],
        "ORG": [("IBM",), ("Boston", "Red", "Sox"), ("Boston",), ("United", "Nations"), ("Acme", "Corp"),
                ("Yankees",), ("Senate",), ("Jordan", "Motors")],
        "LOC": [("Boston",), ("New", "York"), ("Paris",), ("Jordan",), ("Washington",), ("Iraq",),
                ("Fenway", "Park")],
        "MISC": [("Olympics",), ("English",), ("World", "Series"), ("Democrat",), ("Red",)],
    },
)


def generate_synthetic_corpus(num_docs: int, tokens_per_doc: int, vocab=None, truth_model=None,
                              seed: int = 0, path=None) -> list:
    """Seeded token records ``(tok_id, doc_id, string, truth)``; written as TSV when ``path`` is set.

    Each document draws a few entities and mentions them repeatedly, so
    identical capitalised strings recur within a document and skip factors
    fire. Truth labels are valid BIO; a mention cut short by the document
    end keeps its prefix.
    """
    if num_docs < 0 or tokens_per_doc < 0:
        raise ValueError("document and token counts must be non-negative")
    vocab = Vocabulary.of(DEFAULT_VOCABULARY if vocab is None else vocab)
    truth = truth_model or TruthModel()
    if not vocab.fillers and not vocab.names():
        raise ValueError("vocabulary is empty")
    rng = random.Random(seed)
    names = vocab.names()
    records = []
    tok_id = 1
    for doc in range(1, num_docs + 1):
        cast = rng.sample(names, min(truth.entities_per_doc, len(names))) if names else []
        emitted = 0
        while emitted < tokens_per_doc:
            if cast and (not vocab.fillers or rng.random() < truth.mention_rate):
                kind, name = cast[rng.randrange(len(cast))]
                span = [(w, ("B-" if j == 0 else "I-") + kind) for j, w in enumerate(name)]
            else:
                span = [(vocab.fillers[rng.randrange(len(vocab.fillers))], "O")]
            for string, label in span[:tokens_per_doc - emitted]:
                records.append((tok_id, doc, string, label))
                tok_id += 1
                emitted += 1
    if path is not None:
        write_corpus(records, path)
    return records


# -- default weights -------------------------------------------------------------------------

def default_model_text(vocab=None) -> str:
    """Model file for the skip-chain model with hand-set weights.

    Emission favours each name's planted labels, transitions favour valid
    BIO, the bias favours ``O`` and the skip agreement pulls repeated
    strings toward one label.
    """
    vocab = DEFAULT_VOCABULARY if vocab is None else Vocabulary.of(vocab)
    lines = [
        "# Skip-chain model over TOKEN(TOK_ID, DOC_ID, STRING, LABEL, TRUTH).",
        "hidden TOKEN.LABEL " + " ".join(BIO_LABELS),
        "template emission unary TOKEN STRING LABEL",
        "template transition chain TOKEN LABEL group=DOC_ID",
        "template bias unary TOKEN LABEL",
        "template skip skip TOKEN LABEL match=STRING group=DOC_ID capitalized=yes feature=agreement",
        "",
        "weight skip 1.5 agree",
        "weight bias 1.0 O",
    ]
    for lab in BIO_LABELS:
        if lab != "O":
            lines.append(f"weight bias -0.5 {lab}")
    for prev in BIO_LABELS:
        for cur in BIO_LABELS:
            if cur.startswith("I-"):
                ok = prev in ("B-" + cur[2:], "I-" + cur[2:])
                lines.append(f"weight transition {1.0 if ok else -2.0} {prev} {cur}")
    emission: dict = {}
    for kind, name in vocab.names():
        for j, w in enumerate(name):
            lab = ("B-" if j == 0 else "I-") + kind
            emission[(w, lab)] = 1.5
    for w in vocab.fillers:
        emission[(w, "O")] = 2.0
    for (w, lab), v in sorted(emission.items()):
        lines.append(f"weight emission {v} {w} {lab}")
    return "\n".join(lines) + "\n"


def default_model_path() -> Path:
    return Path(__file__).with_name("data") / "skipchain.model"


def log_q_symmetric(batch_size: int, num_labels: int = len(BIO_LABELS)) -> float:
    """``log q`` of any single flip under the batch proposer, same in both directions."""
    return -math.log(batch_size) - math.log(num_labels)
