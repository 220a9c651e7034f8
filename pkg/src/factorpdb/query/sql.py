"""A small SQL-like surface grammar.

::

    query     := SELECT [DISTINCT] items FROM source ("," source)*
                 [WHERE condition] [GROUP BY column ("," column)*]
    items     := "*" | COUNT "(" "*" ")" | item ("," item)*
    item      := column | COUNT "(" "*" ")"
    source    := relation [[AS] alias]
    condition := term (AND term)*
    term      := operand ("=" | "!=" | "<>") operand
               | "(" subcount ")" "=" "(" subcount ")"
               | "(" condition ")"
    subcount  := SELECT COUNT "(" "*" ")" FROM relation [alias] WHERE condition
    operand   := column | 'string' | integer
    column    := name | alias "." name

Keywords, relation and column names are case-insensitive; string literals
are not. A string may also open with a backtick (```B-PER'``).

Single-source conditions are pushed onto their scan, equalities between
two sources become join keys, and the paired correlated-count form becomes
a :class:`CountEqFilter` (``DISTINCT`` asks for one row per group).
"""
from __future__ import annotations

import re

from ..errors import ParseError
from .ast import (
    And, Cmp, Col, Const, CountAll, CountEqFilter, GroupCount, Join, Product, Project, Scan, Select,
)

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<string>['`][^']*')
  | (?P<number>-?\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)?)
  | (?P<op>!=|<>|=)
  | (?P<punct>[(),*])
""", re.VERBOSE)

KEYWORDS = {"SELECT", "DISTINCT", "FROM", "WHERE", "AND", "GROUP", "BY", "COUNT", "AS"}


class _Tok:
    __slots__ = ("kind", "value", "pos")

    def __init__(self, kind, value, pos):
        self.kind, self.value, self.pos = kind, value, pos

    def __repr__(self):
        return f"{self.kind}:{self.value!r}@{self.pos}"


def tokenize(text):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        val = m.group()
        if kind == "string":
            toks.append(_Tok("string", val[1:-1], pos))
        elif kind == "number":
            toks.append(_Tok("number", int(val), pos))
        elif kind == "name":
            up = val.upper()
            toks.append(_Tok("kw", up, pos) if up in KEYWORDS else _Tok("name", up, pos))
        elif kind == "op":
            toks.append(_Tok("op", "!=" if val == "<>" else val, pos))
        elif kind == "punct":
            toks.append(_Tok("punct", val, pos))
        pos = m.end()
    toks.append(_Tok("end", None, len(text)))
    return toks


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    def peek(self, offset=0):
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ParseError(message, self.text, tok.pos)

    def accept(self, kind, value=None):
        t = self.peek()
        if t.kind == kind and (value is None or t.value == value):
            self.i += 1
            return t
        return None

    def expect(self, kind, value=None, what=None):
        t = self.accept(kind, value)
        if t is None:
            got = self.peek()
            shown = "end of input" if got.kind == "end" else repr(got.value)
            raise self.error(f"expected {what or value or kind}, got {shown}")
        return t

    # -- grammar ---------------------------------------------------------
    def query(self):
        self.expect("kw", "SELECT")
        distinct = bool(self.accept("kw", "DISTINCT"))
        items = self.items()
        self.expect("kw", "FROM")
        sources = [self.source()]
        while self.accept("punct", ","):
            sources.append(self.source())
        terms = []
        if self.accept("kw", "WHERE"):
            terms = self.condition()
        group = []
        if self.accept("kw", "GROUP"):
            self.expect("kw", "BY")
            group.append(self.column())
            while self.accept("punct", ","):
                group.append(self.column())
        if self.peek().kind != "end":
            raise self.error(f"unexpected {self.peek().value!r}")
        return self.assemble(distinct, items, sources, terms, group)

    def items(self):
        if self.accept("punct", "*"):
            return ["*"]
        out = [self.item()]
        while self.accept("punct", ","):
            out.append(self.item())
        return out

    def item(self):
        if self.peek().kind == "kw" and self.peek().value == "COUNT":
            return self.count_star()
        return self.column()

    def count_star(self):
        tok = self.expect("kw", "COUNT")
        self.expect("punct", "(")
        self.expect("punct", "*")
        self.expect("punct", ")")
        return ("COUNT", tok.pos)

    def column(self):
        t = self.expect("name", what="column name")
        return (t.value, t.pos)

    def source(self):
        rel = self.expect("name", what="relation name")
        alias = rel
        self.accept("kw", "AS")
        t = self.accept("name")
        if t is not None:
            if "." in t.value:
                raise self.error("alias cannot contain '.'", t)
            alias = t
        if "." in rel.value:
            raise self.error("relation name cannot contain '.'", rel)
        return rel.value, alias.value, rel.pos

    def condition(self):
        terms = [self.term()]
        while self.accept("kw", "AND"):
            terms.append(self.term())
        out = []
        for t in terms:
            out.extend(t if isinstance(t, list) else [t])
        return out

    def term(self):
        if self.peek().kind == "punct" and self.peek().value == "(":
            if self.peek(1).kind == "kw" and self.peek(1).value == "SELECT":
                start = self.next().pos
                left = self.subcount()
                self.expect("punct", ")")
                self.expect("op", "=")
                self.expect("punct", "(")
                right = self.subcount()
                self.expect("punct", ")")
                return ("COUNTEQ", left, right, start)
            self.next()
            inner = self.condition()
            self.expect("punct", ")")
            return inner
        left = self.operand()
        op = self.expect("op", what="comparison operator")
        right = self.operand()
        return ("CMP", left, op.value, right, op.pos)

    def operand(self):
        t = self.next()
        if t.kind == "name":
            return Col(t.value)
        if t.kind == "string":
            return Const(t.value)
        if t.kind == "number":
            return Const(t.value)
        self.i -= 1
        raise self.error("expected column, string or integer")

    def subcount(self):
        pos = self.expect("kw", "SELECT").pos
        self.count_star()
        self.expect("kw", "FROM")
        source = self.source()
        self.expect("kw", "WHERE")
        return source, self.condition(), pos

    # -- assembly ------------------------------------------------------------
    def assemble(self, distinct, items, sources, terms, group):
        aliases = {}
        for rel, alias, pos in sources:
            if alias in aliases:
                raise ParseError(f"duplicate source alias {alias}", self.text, pos)
            aliases[alias] = rel
        counteq = [t for t in terms if t[0] == "COUNTEQ"]
        cmps = [t for t in terms if t[0] == "CMP"]
        if counteq and len(sources) != 1:
            raise ParseError("correlated count comparison needs a single FROM source", self.text, counteq[0][3])
        if len(counteq) > 1:
            raise ParseError("only one correlated count comparison is supported", self.text, counteq[1][3])

        local = {alias: [] for alias in aliases}
        cross = []
        for t in cmps:
            _, left, op, right, pos = t
            owners = {self._owner(o, aliases, pos) for o in (left, right) if isinstance(o, Col)}
            owners.discard(None)
            cmp = Cmp(left, op, right)
            if len(owners) == 1:
                local[owners.pop()].append(cmp)
            elif len(sources) == 1:
                local[sources[0][1]].append(cmp)
            else:
                cross.append(cmp)

        plan = None
        for rel, alias, _ in sources:
            node = Scan(rel, alias)
            if local[alias]:
                node = Select(node, _and(local[alias]))
            if plan is None:
                plan = node
            else:
                here = [c for c in cross if self._touches(c, alias, aliases)]
                cross = [c for c in cross if c not in here]
                plan = Join(plan, node, _and(here)) if here else Product(plan, node)
        if cross:
            plan = Select(plan, _and(cross))

        if counteq:
            plan = self._count_eq(plan, sources[0], counteq[0], distinct)
        elif distinct:
            raise ParseError("DISTINCT is only supported with a correlated count comparison", self.text, 0)

        has_count = any(isinstance(i, tuple) and i[0] == "COUNT" for i in items)
        if group:
            cols = [c for c, _ in group]
            chosen = [i for i in items if not (isinstance(i, tuple) and i[0] == "COUNT")]
            if [c for c, _ in chosen] != cols:
                raise ParseError("with GROUP BY the select list must be the grouping columns"
                                 " followed by COUNT(*)", self.text, group[0][1])
            return GroupCount(plan, tuple(cols))
        if has_count:
            if len(items) != 1:
                raise ParseError("COUNT(*) cannot be mixed with columns without GROUP BY",
                                 self.text, items[0][1] if items[0] != "*" else 0)
            return CountAll(plan)
        if items == ["*"]:
            return plan
        if counteq and distinct:
            if len(items) != 1:
                raise ParseError("DISTINCT selects exactly the correlated column", self.text, items[0][1])
            return Project(plan, (items[0][0],))
        return Project(plan, tuple(c for c, _ in items))

    def _owner(self, col, aliases, pos):
        if "." in col.name:
            alias = col.name.split(".", 1)[0]
            if alias not in aliases:
                raise ParseError(f"unknown source alias {alias}", self.text, pos)
            return alias
        return None

    def _touches(self, cmp, alias, aliases):
        return any(isinstance(o, Col) and "." in o.name and o.name.split(".", 1)[0] == alias
                   for o in (cmp.left, cmp.right))

    def _count_eq(self, plan, outer, counteq, distinct):
        _, left, right, pos = counteq
        orel, oalias, _ = outer
        preds, groups = [], []
        for (rel, alias, rpos), terms, spos in (left, right):
            if rel != orel:
                raise ParseError("correlated subquery must count the outer relation", self.text, rpos)
            local, corr = [], []
            for t in terms:
                if t[0] != "CMP":
                    raise ParseError("nested correlated counts are not supported", self.text, spos)
                _, l, op, r, tpos = t
                owners = {o.name.split(".", 1)[0] if "." in o.name else alias
                          for o in (l, r) if isinstance(o, Col)}
                if oalias in owners and alias in owners and oalias != alias:
                    if op != "=" or not (isinstance(l, Col) and isinstance(r, Col)):
                        raise ParseError("correlation must be a column equality", self.text, tpos)
                    corr.append((l, r, tpos))
                elif owners <= {alias}:
                    local.append(Cmp(_rebase(l, alias, oalias), op, _rebase(r, alias, oalias)))
                else:
                    raise ParseError("subquery may only reference its own and the outer source",
                                     self.text, tpos)
            if len(corr) != 1:
                raise ParseError("each count subquery needs exactly one correlation equality", self.text, spos)
            l, r, tpos = corr[0]
            outer_col, inner_col = (l, r) if l.name.startswith(oalias + ".") else (r, l)
            if outer_col.name.split(".", 1)[1] != inner_col.name.split(".", 1)[1]:
                raise ParseError("correlation must compare the same attribute", self.text, tpos)
            groups.append(outer_col.name)
            preds.append(_and(local) if local else And(()))
        if groups[0] != groups[1]:
            raise ParseError("both count subqueries must correlate on the same column", self.text, pos)
        return CountEqFilter(plan, groups[0], preds[0], preds[1], distinct)


def _rebase(operand, inner, outer):
    if isinstance(operand, Col):
        name = operand.name
        if "." in name and name.split(".", 1)[0] == inner:
            name = outer + "." + name.split(".", 1)[1]
        elif "." not in name:
            name = outer + "." + name
        return Col(name)
    return operand


def _and(cmps):
    return cmps[0] if len(cmps) == 1 else And(tuple(cmps))


def parse_query(text: str):
    """Parse query text into an AST; raises :class:`ParseError` with a position."""
    return _Parser(text).query()
