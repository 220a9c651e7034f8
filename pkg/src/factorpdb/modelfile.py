"""Declarative model files.

One directive per line; ``#`` starts a comment. Fields are separated by
whitespace and may be quoted. A bare integer is read as an ``int``; quote
it (``'7'``) to keep it a string.

::

    hidden     REL.ATTR VALUE...
    template   NAME unary REL ATTR... [feature=FN]
    template   NAME chain REL ATTR [group=ATTR] [feature=FN]
    template   NAME skip  REL ATTR match=ATTR [group=ATTR] [capitalized=yes|no] [feature=FN]
    constraint NAME KIND ARGS... predicate=PRED
    forbid     NAME VALUE...
    weight     NAME WEIGHT KEY...

``feature`` defaults to ``indicator``, whose feature key is the tuple of the
factor's argument values, so ``weight emission 2.5 IBM B-ORG`` weights the
emission factor for string ``IBM`` with label ``B-ORG``. The ``agreement``
feature has the single key ``agree``. ``constraint`` declares a hard
template using the same KIND and ARGS as ``template``; ``forbid`` lines
list the assignments a ``predicate=forbid`` constraint rules out.
"""
from __future__ import annotations

import math
import re
import shlex
from pathlib import Path

from .errors import ModelFormatError
from .factors import FEATURES, PREDICATES, ChainTemplate, FactorGraphSpec, SkipTemplate, UnaryTemplate

_INT = re.compile(r"-?\d+")


def _literal(tok, quoted):
    if not quoted and _INT.fullmatch(tok):
        return int(tok)
    return tok


def _split(line):
    lex = shlex.shlex(line, posix=True)
    lex.whitespace_split = True
    lex.commenters = "#"
    out = []
    for tok in lex:
        out.append(tok)
    # shlex drops quote information, so recover it from the raw text
    quoted = set(re.findall(r"'([^']*)'|\"([^\"]*)\"", line))
    qs = {a or b for a, b in quoted}
    return [(t, t in qs) for t in out]


def _options(fields, lineno, allowed):
    pos, opts = [], {}
    for tok, quoted in fields:
        if "=" in tok and not quoted:
            k, v = tok.split("=", 1)
            if k not in allowed:
                raise ModelFormatError(f"unknown option {k!r}", lineno)
            opts[k] = v
        else:
            pos.append(_literal(tok, quoted))
    return pos, opts


def _yes(v, lineno):
    if v.lower() in ("yes", "true", "1"):
        return True
    if v.lower() in ("no", "false", "0"):
        return False
    raise ModelFormatError(f"expected yes/no, got {v!r}", lineno)


def _template(name, kind, args, opts, lineno, hard=False):
    common = {}
    if hard:
        common.update(hard=True, predicate=opts.get("predicate"))
        if common["predicate"] is None:
            raise ModelFormatError(f"constraint {name} needs predicate=", lineno)
        if common["predicate"] not in PREDICATES:
            raise ModelFormatError(f"unknown predicate {common['predicate']!r}", lineno)
    else:
        feature = opts.get("feature", "indicator")
        if feature not in FEATURES:
            raise ModelFormatError(f"unknown feature function {feature!r}", lineno)
        common["feature"] = feature
    if not args:
        raise ModelFormatError(f"{name}: missing relation", lineno)
    rel, attrs = args[0], [str(a) for a in args[1:]]
    if kind == "unary":
        if not attrs:
            raise ModelFormatError(f"{name}: unary template needs attributes", lineno)
        return UnaryTemplate(name, rel, attrs, **common)
    if kind == "chain":
        if len(attrs) != 1:
            raise ModelFormatError(f"{name}: chain template takes exactly one attribute", lineno)
        return ChainTemplate(name, rel, attrs[0], group=opts.get("group"), **common)
    if kind == "skip":
        if len(attrs) != 1 or "match" not in opts:
            raise ModelFormatError(f"{name}: skip template takes one attribute and match=", lineno)
        cap = _yes(opts.get("capitalized", "yes"), lineno)
        return SkipTemplate(name, rel, attrs[0], opts["match"], group=opts.get("group"),
                            capitalized=cap, **common)
    raise ModelFormatError(f"unknown template kind {kind!r}", lineno)


def _located(exc, source):
    if exc.source is not None or source is None:
        return exc
    return ModelFormatError(exc.message, exc.line, source)


def parse_model(text: str, source=None) -> FactorGraphSpec:
    hidden = {}
    decls = []  # (name, kind, args, opts, lineno, hard)
    weights: dict = {}
    forbids: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            fields = _split(raw)
        except ValueError as exc:
            raise ModelFormatError(str(exc), lineno, source) from None
        if not fields:
            continue
        directive = fields[0][0].lower()
        rest = fields[1:]
        try:
            if directive == "hidden":
                if len(rest) < 2 or "." not in rest[0][0]:
                    raise ModelFormatError("usage: hidden REL.ATTR VALUE...", lineno)
                rel, attr = rest[0][0].split(".", 1)
                if (rel, attr) in hidden:
                    raise ModelFormatError(f"{rel}.{attr} declared hidden twice", lineno)
                hidden[(rel, attr)] = [_literal(t, q) for t, q in rest[1:]]
            elif directive in ("template", "constraint"):
                if len(rest) < 3:
                    raise ModelFormatError(f"usage: {directive} NAME KIND REL ...", lineno)
                name, kind = rest[0][0], rest[1][0]
                allowed = {"predicate", "group", "match", "capitalized"} if directive == "constraint" \
                    else {"feature", "group", "match", "capitalized"}
                args, opts = _options(rest[2:], lineno, allowed)
                decls.append((name, kind, args, opts, lineno, directive == "constraint"))
            elif directive == "weight":
                if len(rest) < 3:
                    raise ModelFormatError("usage: weight NAME WEIGHT KEY...", lineno)
                name = rest[0][0]
                try:
                    w = float(rest[1][0])
                except ValueError:
                    raise ModelFormatError(f"bad weight {rest[1][0]!r}", lineno) from None
                if not math.isfinite(w):
                    raise ModelFormatError("weights must be finite", lineno)
                key = tuple(_literal(t, q) for t, q in rest[2:])
                weights.setdefault(name, {})[key] = w
            elif directive == "forbid":
                if len(rest) < 2:
                    raise ModelFormatError("usage: forbid NAME VALUE...", lineno)
                forbids.setdefault(rest[0][0], set()).add(tuple(_literal(t, q) for t, q in rest[1:]))
            else:
                raise ModelFormatError(f"unknown directive {directive!r}", lineno)
        except ModelFormatError as exc:
            raise _located(exc, source) from None
    templates = []
    names = set()
    for name, kind, args, opts, lineno, hard in decls:
        if name in names:
            raise ModelFormatError(f"duplicate template name {name!r}", lineno, source)
        names.add(name)
        try:
            t = _template(name, kind, args, opts, lineno, hard)
        except ModelFormatError as exc:
            raise _located(exc, source) from None
        if hard:
            t.params = forbids.pop(name, set())
        else:
            t.weights = weights.pop(name, {})
        templates.append(t)
    for name in list(weights) + list(forbids):
        raise ModelFormatError(f"weights or forbid lines for undeclared template {name!r}", None, source)
    try:
        return FactorGraphSpec(templates, hidden)
    except ValueError as exc:
        raise ModelFormatError(str(exc), None, source) from None


def parse_weights(text: str, source=None) -> dict:
    """Only the ``weight`` lines of a model file, as ``{template: {key: weight}}``."""
    weights: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            fields = _split(raw)
        except ValueError as exc:
            raise ModelFormatError(str(exc), lineno, source) from None
        if not fields or fields[0][0].lower() != "weight":
            continue
        if len(fields) < 4:
            raise ModelFormatError("usage: weight NAME WEIGHT KEY...", lineno, source)
        try:
            w = float(fields[2][0])
        except ValueError:
            raise ModelFormatError(f"bad weight {fields[2][0]!r}", lineno, source) from None
        if not math.isfinite(w):
            raise ModelFormatError("weights must be finite", lineno, source)
        weights.setdefault(fields[1][0], {})[tuple(_literal(t, q) for t, q in fields[3:])] = w
    return weights


def load_model(path) -> FactorGraphSpec:
    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), source=str(path))
