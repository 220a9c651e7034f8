"""The TOKEN relation and its tab-separated corpus format.

Corpus files hold one token per line: ``TOK_ID, DOC_ID, STRING, TRUTH``.
An optional first line naming those columns is skipped. ``LABEL`` is not
read from the file; every token starts labelled ``O``.
"""
from __future__ import annotations

from pathlib import Path

from .errors import CorpusFormatError
from .world import Attribute, Schema, World

TOKEN = "TOKEN"

BIO_LABELS = ("B-PER", "I-PER", "B-ORG", "I-ORG", "B-LOC", "I-LOC", "B-MISC", "I-MISC", "O")

CORPUS_COLUMNS = ("TOK_ID", "DOC_ID", "STRING", "TRUTH")

TOKEN_SCHEMA = Schema(
    TOKEN,
    [Attribute("TOK_ID", "int"), Attribute("DOC_ID", "int"), Attribute("STRING"),
     Attribute("LABEL"), Attribute("TRUTH")],
    key="TOK_ID",
)


def token_world(rows=(), labels=BIO_LABELS) -> World:
    """World with one TOKEN relation; ``rows`` are (tok_id, doc_id, string, truth)."""
    world = World([TOKEN_SCHEMA])
    world.declare_hidden(TOKEN, "LABEL", labels)
    for tok_id, doc_id, string, truth in rows:
        world.insert(TOKEN, (tok_id, doc_id, string, "O", truth))
    return world


def read_corpus(path):
    """Yield ``(tok_id, doc_id, string, truth)`` records from a corpus file."""
    path = Path(path)
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if lineno == 1 and tuple(f.upper() for f in fields) == CORPUS_COLUMNS:
                continue
            if len(fields) != 4:
                raise CorpusFormatError(f"expected 4 tab-separated fields, got {len(fields)}", lineno, path)
            try:
                tok_id, doc_id = int(fields[0]), int(fields[1])
            except ValueError:
                raise CorpusFormatError("TOK_ID and DOC_ID must be integers", lineno, path) from None
            if tok_id in seen:
                raise CorpusFormatError(f"duplicate TOK_ID {tok_id}", lineno, path)
            seen.add(tok_id)
            string, truth = fields[2], fields[3]
            if not string:
                raise CorpusFormatError("empty STRING", lineno, path)
            yield tok_id, doc_id, string, truth


def ingest_tokens(path, labels=BIO_LABELS) -> World:
    return token_world(read_corpus(path), labels)


def write_corpus(records, path):
    lines = ["\t".join(CORPUS_COLUMNS)]
    for tok_id, doc_id, string, truth in records:
        lines.append(f"{tok_id}\t{doc_id}\t{string}\t{truth}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
