"""Compiled query plans: full evaluation, delta evaluation and restricted lookups.

Every plan node supports three evaluations over a :class:`World`:

``rows(world)``
    the node's full answer as a list of rows (a bag; duplicates repeat).
``delta(world, delta, ctx)``
    ``(minus, plus)`` count dicts such that the node's answer on the new
    world equals ``old - minus + plus``. ``world`` is the *old* world.
``restricted(world, cols, keys)``
    the rows of the full answer whose values at ``cols`` form a tuple in
    ``keys``. Scans answer through hash indexes, which is what keeps the
    old-side terms of a join delta proportional to the matching rows.
"""
from __future__ import annotations

from operator import itemgetter

from ..errors import CorruptionError, QueryValidationError
from .ast import (
    And, Cmp, Col, Const, CountAll, CountEqFilter, GroupCount, Join, Product, Project, Query, Scan, Select,
)
from .multiset import AnswerDelta, MultisetAnswer


# -- counting helpers --------------------------------------------------------------

def _bag(rows):
    out = {}
    for r in rows:
        out[r] = out.get(r, 0) + 1
    return out


def _add(acc, bag, mult=1):
    for r, c in bag.items():
        acc[r] = acc.get(r, 0) + c * mult


def _net(minus, plus):
    """Cancel tuples present on both sides so the two bags are disjoint."""
    for r in [r for r in minus if r in plus]:
        m, p = minus[r], plus[r]
        if m > p:
            minus[r] = m - p
            del plus[r]
        elif p > m:
            plus[r] = p - m
            del minus[r]
        else:
            del minus[r]
            del plus[r]
    return minus, plus


def _mapped(bag, fn):
    out = {}
    for r, c in bag.items():
        k = fn(r)
        out[k] = out.get(k, 0) + c
    return out


def _getter(idxs):
    if len(idxs) == 1:
        i = idxs[0]
        return lambda r: (r[i],)
    g = itemgetter(*idxs)
    return g


class DeltaContext:
    """Per-call scratch state for delta evaluation.

    ``cache`` holds aggregate state keyed by plan node; new state is staged
    in ``pending`` and only written back by :meth:`commit`.
    """

    def __init__(self, cache=None):
        self.cache = cache
        self.pending = {}
        self.groups_touched = 0

    def lookup(self, node):
        if self.cache is None:
            return None
        return self.cache.get(node.slot)

    def commit(self):
        if self.cache is not None:
            for node, updates in self.pending.items():
                node.commit_cache(self.cache, updates)
        self.pending = {}


# -- plan nodes ----------------------------------------------------------------------

class Plan:
    columns: tuple = ()
    types: tuple = ()
    slot = None  # preorder position; aggregate caches are keyed by it

    def children(self):
        return ()

    def rows(self, world):
        raise NotImplementedError

    def delta(self, world, delta, ctx):
        raise NotImplementedError

    def restricted(self, world, cols, keys):
        get = _getter(cols)
        return [r for r in self.rows(world) if get(r) in keys]

    def build_cache(self, world, cache):
        for c in self.children():
            c.build_cache(world, cache)


class ScanPlan(Plan):
    def __init__(self, schema, alias):
        self.relation = schema.name
        self.schema = schema
        self.columns = tuple(f"{alias}.{n}" for n in schema.names)
        self.types = tuple(a.dtype for a in schema.attributes)

    def rows(self, world):
        return list(world.scan(self.relation))

    def delta(self, world, delta, ctx):
        m, p = delta.for_relation(self.relation)
        world.reads += len(m) + len(p)
        return _bag(m), _bag(p)

    def restricted(self, world, cols, keys):
        attr = self.schema.names[cols[0]]
        out = []
        if len(cols) == 1:
            for (v,) in keys:
                out.extend(world.lookup(self.relation, attr, v))
            return out
        get = _getter(cols)
        for v in {k[0] for k in keys}:
            out.extend(r for r in world.lookup(self.relation, attr, v) if get(r) in keys)
        return out


class SelectPlan(Plan):
    def __init__(self, child, pred):
        self.child = child
        self.pred = pred
        self.columns = child.columns
        self.types = child.types

    def children(self):
        return (self.child,)

    def rows(self, world):
        pred = self.pred
        return [r for r in self.child.rows(world) if pred(r)]

    def delta(self, world, delta, ctx):
        m, p = self.child.delta(world, delta, ctx)
        pred = self.pred
        return ({r: c for r, c in m.items() if pred(r)},
                {r: c for r, c in p.items() if pred(r)})

    def restricted(self, world, cols, keys):
        pred = self.pred
        return [r for r in self.child.restricted(world, cols, keys) if pred(r)]


class ProjectPlan(Plan):
    def __init__(self, child, idxs):
        self.child = child
        self.idxs = tuple(idxs)
        self.get = _getter(self.idxs)
        self.columns = tuple(child.columns[i] for i in idxs)
        self.types = tuple(child.types[i] for i in idxs)

    def children(self):
        return (self.child,)

    def rows(self, world):
        get = self.get
        return [get(r) for r in self.child.rows(world)]

    def delta(self, world, delta, ctx):
        m, p = self.child.delta(world, delta, ctx)
        return _net(_mapped(m, self.get), _mapped(p, self.get))

    def restricted(self, world, cols, keys):
        get = self.get
        return [get(r) for r in self.child.restricted(world, tuple(self.idxs[c] for c in cols), keys)]


class JoinPlan(Plan):
    """Hash equi-join on ``pairs`` with an optional residual filter; no pairs is a product."""

    def __init__(self, left, right, pairs=(), residual=None):
        self.left = left
        self.right = right
        self.pairs = tuple(pairs)
        self.residual = residual
        self.columns = left.columns + right.columns
        self.types = left.types + right.types
        self.lkey = _getter([a for a, _ in self.pairs]) if self.pairs else (lambda r: ())
        self.rkey = _getter([b for _, b in self.pairs]) if self.pairs else (lambda r: ())
        self.nleft = len(left.columns)

    def children(self):
        return (self.left, self.right)

    def _join_bags(self, lbag, rbag):
        out = {}
        if not lbag or not rbag:
            return out
        table = {}
        rkey = self.rkey
        for r, c in rbag.items():
            table.setdefault(rkey(r), []).append((r, c))
        lkey, residual = self.lkey, self.residual
        for l, lc in lbag.items():
            for r, rc in table.get(lkey(l), ()):
                row = l + r
                if residual is None or residual(row):
                    out[row] = out.get(row, 0) + lc * rc
        return out

    def rows(self, world):
        lrows = self.left.rows(world)
        if not lrows:
            return []
        table = {}
        rkey = self.rkey
        for r in self.right.rows(world):
            table.setdefault(rkey(r), []).append(r)
        lkey, residual = self.lkey, self.residual
        out = []
        for l in lrows:
            for r in table.get(lkey(l), ()):
                row = l + r
                if residual is None or residual(row):
                    out.append(row)
        return out

    def _old_side(self, world, side, other_bags, other_key, side_cols):
        keys = set()
        for bag in other_bags:
            for r in bag:
                keys.add(other_key(r))
        if not keys:
            return {}
        if not self.pairs:
            return _bag(side.rows(world))
        return _bag(side.restricted(world, side_cols, keys))

    def delta(self, world, delta, ctx):
        lm, lp = self.left.delta(world, delta, ctx)
        rm, rp = self.right.delta(world, delta, ctx)
        if not (lm or lp or rm or rp):
            return {}, {}
        lcols = tuple(a for a, _ in self.pairs)
        rcols = tuple(b for _, b in self.pairs)
        l_old = self._old_side(world, self.left, (rm, rp), self.rkey, lcols) if (rm or rp) else {}
        r_old = self._old_side(world, self.right, (lm, lp), self.lkey, rcols) if (lm or lp) else {}
        j = self._join_bags
        plus, minus = {}, {}
        # L'R' = LR - L.Rm + L.Rp - Lm.R + Lp.R + Lm.Rm - Lm.Rp - Lp.Rm + Lp.Rp
        _add(plus, j(l_old, rp))
        _add(plus, j(lp, r_old))
        _add(plus, j(lm, rm))
        _add(plus, j(lp, rp))
        _add(minus, j(l_old, rm))
        _add(minus, j(lm, r_old))
        _add(minus, j(lm, rp))
        _add(minus, j(lp, rm))
        return _net(minus, plus)

    def restricted(self, world, cols, keys):
        n = self.nleft
        if self.pairs and all(c < n for c in cols):
            lbag = _bag(self.left.restricted(world, cols, keys))
            rkeys = {self.lkey(r) for r in lbag}
            rbag = _bag(self.right.restricted(world, tuple(b for _, b in self.pairs), rkeys)) if rkeys else {}
        elif self.pairs and all(c >= n for c in cols):
            rbag = _bag(self.right.restricted(world, tuple(c - n for c in cols), keys))
            lkeys = {self.rkey(r) for r in rbag}
            lbag = _bag(self.left.restricted(world, tuple(a for a, _ in self.pairs), lkeys)) if lkeys else {}
        else:
            return super().restricted(world, cols, keys)
        out = []
        for row, c in self._join_bags(lbag, rbag).items():
            out.extend([row] * c)
        return out


class CountAllPlan(Plan):
    columns = ("COUNT",)
    types = ("int",)

    def __init__(self, child):
        self.child = child

    def children(self):
        return (self.child,)

    def rows(self, world):
        return [(len(self.child.rows(world)),)]

    def build_cache(self, world, cache):
        super().build_cache(world, cache)
        cache[self.slot] = len(self.child.rows(world))

    def commit_cache(self, cache, value):
        cache[self.slot] = value

    def delta(self, world, delta, ctx):
        m, p = self.child.delta(world, delta, ctx)
        if not m and not p:
            return {}, {}
        old = ctx.lookup(self)
        if old is None:
            old = len(self.child.rows(world))
        new = old - sum(m.values()) + sum(p.values())
        if new < 0:
            raise CorruptionError("aggregate count went negative")
        ctx.pending[self] = new
        ctx.groups_touched += 1
        if new == old:
            return {}, {}
        return {(old,): 1}, {(new,): 1}


class GroupCountPlan(Plan):
    def __init__(self, child, gidx):
        self.child = child
        self.gidx = tuple(gidx)
        self.gkey = _getter(self.gidx)
        self.columns = tuple(child.columns[i] for i in gidx) + ("COUNT",)
        self.types = tuple(child.types[i] for i in gidx) + ("int",)

    def children(self):
        return (self.child,)

    def _counts(self, rows):
        counts = {}
        gkey = self.gkey
        for r in rows:
            g = gkey(r)
            counts[g] = counts.get(g, 0) + 1
        return counts

    def rows(self, world):
        return [g + (c,) for g, c in self._counts(self.child.rows(world)).items()]

    def build_cache(self, world, cache):
        super().build_cache(world, cache)
        cache[self.slot] = self._counts(self.child.rows(world))

    def commit_cache(self, cache, updates):
        counts = cache[self.slot]
        for g, c in updates.items():
            if c:
                counts[g] = c
            else:
                counts.pop(g, None)

    def delta(self, world, delta, ctx):
        m, p = self.child.delta(world, delta, ctx)
        if not m and not p:
            return {}, {}
        gkey = self.gkey
        change = {}
        for r, c in m.items():
            g = gkey(r)
            change[g] = change.get(g, 0) - c
        for r, c in p.items():
            g = gkey(r)
            change[g] = change.get(g, 0) + c
        cached = ctx.lookup(self)
        if cached is None:
            cached = self._counts(self.child.restricted(world, self.gidx, set(change)))
        minus, plus = {}, {}
        updates = {}
        for g, d in change.items():
            ctx.groups_touched += 1
            old = cached.get(g, 0)
            new = old + d
            if new < 0:
                raise CorruptionError(f"group {g!r} count went negative")
            updates[g] = new
            if new == old:
                continue
            if old:
                minus[g + (old,)] = 1
            if new:
                plus[g + (new,)] = 1
        ctx.pending[self] = updates
        return minus, plus


class CountEqFilterPlan(Plan):
    def __init__(self, child, gi, lpred, rpred, distinct):
        self.child = child
        self.gi = gi
        self.lpred = lpred
        self.rpred = rpred
        self.distinct = distinct
        if distinct:
            self.columns = (child.columns[gi],)
            self.types = (child.types[gi],)
        else:
            self.columns = child.columns
            self.types = child.types

    def children(self):
        return (self.child,)

    def _stats(self, rows):
        stats = {}
        gi, lp, rp = self.gi, self.lpred, self.rpred
        for r in rows:
            s = stats.get(r[gi])
            if s is None:
                s = stats[r[gi]] = [0, 0, 0]
            s[0] += 1
            if lp(r):
                s[1] += 1
            if rp(r):
                s[2] += 1
        return stats

    def rows(self, world):
        rows = self.child.rows(world)
        stats = self._stats(rows)
        if self.distinct:
            return [(g,) for g, (_, a, b) in stats.items() if a == b]
        gi = self.gi
        return [r for r in rows if stats[r[gi]][1] == stats[r[gi]][2]]

    def build_cache(self, world, cache):
        super().build_cache(world, cache)
        cache[self.slot] = {g: tuple(s) for g, s in self._stats(self.child.rows(world)).items()}

    def commit_cache(self, cache, updates):
        stats = cache[self.slot]
        for g, s in updates.items():
            if s[0]:
                stats[g] = s
            else:
                stats.pop(g, None)

    def delta(self, world, delta, ctx):
        m, p = self.child.delta(world, delta, ctx)
        if not m and not p:
            return {}, {}
        gi, lp, rp = self.gi, self.lpred, self.rpred
        by_group: dict = {}
        for r, c in m.items():
            by_group.setdefault(r[gi], ({}, {}))[0][r] = c
        for r, c in p.items():
            by_group.setdefault(r[gi], ({}, {}))[1][r] = c
        cached = ctx.lookup(self)
        minus, plus = {}, {}
        updates = {}
        for g, (gm, gp) in by_group.items():
            ctx.groups_touched += 1
            old_rows = None
            if cached is not None:
                old = cached.get(g, (0, 0, 0))
            else:
                old_rows = _bag(self.child.restricted(world, (gi,), {(g,)}))
                old = tuple(self._group_stats(old_rows))
            new = list(old)
            for bag, sign in ((gm, -1), (gp, 1)):
                for r, c in bag.items():
                    new[0] += sign * c
                    if lp(r):
                        new[1] += sign * c
                    if rp(r):
                        new[2] += sign * c
            if min(new) < 0:
                raise CorruptionError(f"group {g!r} statistics went negative")
            new = tuple(new)
            updates[g] = new
            old_q = old[0] > 0 and old[1] == old[2]
            new_q = new[0] > 0 and new[1] == new[2]
            if self.distinct:
                if old_q and not new_q:
                    minus[(g,)] = 1
                elif new_q and not old_q:
                    plus[(g,)] = 1
                continue
            if old_q and new_q:
                _add(minus, gm)
                _add(plus, gp)
            elif old_q or new_q:
                if old_rows is None:
                    old_rows = _bag(self.child.restricted(world, (gi,), {(g,)}))
                if old_q:
                    _add(minus, old_rows)
                else:
                    new_rows = dict(old_rows)
                    _add(new_rows, gm, -1)
                    _add(new_rows, gp)
                    _add(plus, {r: c for r, c in new_rows.items() if c})
        ctx.pending[self] = updates
        return _net(minus, plus)

    def _group_stats(self, bag):
        s = [0, 0, 0]
        for r, c in bag.items():
            s[0] += c
            if self.lpred(r):
                s[1] += c
            if self.rpred(r):
                s[2] += c
        return s


# -- compilation ------------------------------------------------------------------------

class CompiledQuery:
    """A validated plan plus the entry points used by the evaluators."""

    def __init__(self, root: Plan, source=None):
        self.root = root
        self.source = source
        stack, n = [root], 0
        while stack:
            node = stack.pop()
            node.slot, n = n, n + 1
            stack.extend(reversed(node.children()))

    @property
    def columns(self):
        return self.root.columns

    def execute(self, world) -> MultisetAnswer:
        return MultisetAnswer.from_rows(self.root.rows(world))

    def build_cache(self, world) -> dict:
        cache = {}
        self.root.build_cache(world, cache)
        return cache

    def delta(self, world, delta, cache=None, ctx=None) -> AnswerDelta:
        for (rel, key), old in delta.minus.items():
            rows = world.rows.get(rel)
            if rows is None or rows.get(key) != old:
                raise CorruptionError(f"delta pre-image for {rel}[{key!r}] does not match the previous world")
        ctx = ctx or DeltaContext(cache)
        m, p = self.root.delta(world, delta, ctx)
        m, p = _net(dict(m), dict(p))
        ctx.commit()
        return AnswerDelta(MultisetAnswer(m), MultisetAnswer(p))

    def __repr__(self):
        return f"CompiledQuery({self.columns})"


def _upper(name):
    return name.upper()


def _resolve(columns, name, errors, where):
    target = _upper(name)
    ucols = [_upper(c) for c in columns]
    if target in ucols:
        return ucols.index(target)
    if "." not in target:
        hits = [i for i, c in enumerate(ucols) if c.rsplit(".", 1)[-1] == target]
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            errors.append(f"{where}: column {name!r} is ambiguous among {[columns[i] for i in hits]}")
            return None
    errors.append(f"{where}: unknown column {name!r} (available: {list(columns)})")
    return None


_PY_TYPES = {int: "int", str: "str", bool: "int"}


def _compile_terms(pred, columns, types, errors, where):
    """Flatten a predicate to ``[(li, op, ('col', j) | ('const', v))]``."""
    terms = pred.terms if isinstance(pred, And) else (pred,)
    out = []
    for t in terms:
        if isinstance(t, And):
            out.extend(_compile_terms(t, columns, types, errors, where))
            continue
        if not isinstance(t, Cmp):
            errors.append(f"{where}: unsupported predicate {t!r}")
            continue
        left, right = t.left, t.right
        if isinstance(left, Const) and isinstance(right, Col):
            left, right = right, left
        if not isinstance(left, Col):
            errors.append(f"{where}: comparison needs at least one column: {t!r}")
            continue
        li = _resolve(columns, left.name, errors, where)
        if isinstance(right, Col):
            ri = _resolve(columns, right.name, errors, where)
            if li is not None and ri is not None:
                if types[li] != types[ri]:
                    errors.append(f"{where}: cannot compare {columns[li]} ({types[li]}) "
                                  f"with {columns[ri]} ({types[ri]})")
                out.append((li, t.op, ("col", ri)))
        else:
            vt = _PY_TYPES.get(type(right.value))
            if li is not None:
                if vt != types[li]:
                    errors.append(f"{where}: cannot compare {columns[li]} ({types[li]}) with {right.value!r}")
                out.append((li, t.op, ("const", right.value)))
    return out


def _pred_fn(terms):
    fns = []
    for li, op, (kind, v) in terms:
        if kind == "const":
            fns.append((lambda i, c: (lambda r: r[i] == c))(li, v) if op == "="
                       else (lambda i, c: (lambda r: r[i] != c))(li, v))
        else:
            fns.append((lambda i, j: (lambda r: r[i] == r[j]))(li, v) if op == "="
                       else (lambda i, j: (lambda r: r[i] != r[j]))(li, v))
    if not fns:
        return lambda r: True
    if len(fns) == 1:
        return fns[0]
    if len(fns) == 2:
        f, g = fns
        return lambda r: f(r) and g(r)
    return lambda r: all(f(r) for f in fns)


def _relation(schemas, name, errors):
    for rel, schema in schemas.items():
        if rel.upper() == name.upper():
            return schema
    errors.append(f"unknown relation {name!r}")
    return None


def _build(node, schemas, errors):
    if isinstance(node, Scan):
        schema = _relation(schemas, node.relation, errors)
        if schema is None:
            return None
        return ScanPlan(schema, (node.alias or schema.name).upper())
    if isinstance(node, Select):
        child = _build(node.child, schemas, errors)
        if child is None:
            return None
        terms = _compile_terms(node.predicate, child.columns, child.types, errors, "WHERE")
        return SelectPlan(child, _pred_fn(terms))
    if isinstance(node, Project):
        child = _build(node.child, schemas, errors)
        if child is None:
            return None
        idxs = [_resolve(child.columns, c, errors, "SELECT") for c in node.columns]
        if not idxs:
            errors.append("SELECT: empty projection")
        if any(i is None for i in idxs) or not idxs:
            return None
        return ProjectPlan(child, idxs)
    if isinstance(node, (Product, Join)):
        left = _build(node.left, schemas, errors)
        right = _build(node.right, schemas, errors)
        if left is None or right is None:
            return None
        if isinstance(node, Product):
            return JoinPlan(left, right)
        cols = left.columns + right.columns
        n = len(left.columns)
        terms = _compile_terms(node.predicate, cols, left.types + right.types, errors, "JOIN")
        pairs, rest = [], []
        for li, op, (kind, v) in terms:
            if op == "=" and kind == "col" and (li < n) != (v < n):
                a, b = (li, v) if li < n else (v, li)
                pairs.append((a, b - n))
            else:
                rest.append((li, op, (kind, v)))
        return JoinPlan(left, right, pairs, _pred_fn(rest) if rest else None)
    if isinstance(node, CountAll):
        child = _build(node.child, schemas, errors)
        return None if child is None else CountAllPlan(child)
    if isinstance(node, GroupCount):
        child = _build(node.child, schemas, errors)
        if child is None:
            return None
        idxs = [_resolve(child.columns, c, errors, "GROUP BY") for c in node.group]
        if not idxs:
            errors.append("GROUP BY: no grouping columns")
        if any(i is None for i in idxs) or not idxs:
            return None
        return GroupCountPlan(child, idxs)
    if isinstance(node, CountEqFilter):
        child = _build(node.child, schemas, errors)
        if child is None:
            return None
        gi = _resolve(child.columns, node.group, errors, "correlation")
        lt = _compile_terms(node.left, child.columns, child.types, errors, "subquery")
        rt = _compile_terms(node.right, child.columns, child.types, errors, "subquery")
        if gi is None:
            return None
        return CountEqFilterPlan(child, gi, _pred_fn(lt), _pred_fn(rt), node.distinct)
    errors.append(f"unsupported query node {type(node).__name__}")
    return None


def validate(query, schemas) -> CompiledQuery:
    """Resolve every column and type-check predicates.

    Raises :class:`QueryValidationError` carrying the full error list.
    """
    errors: list[str] = []
    if not isinstance(query, Query):
        raise QueryValidationError([f"not a query: {query!r}"])
    root = _build(query, schemas, errors)
    if errors or root is None:
        raise QueryValidationError(errors or ["query could not be compiled"])
    return CompiledQuery(root, query)


def compile_query(query, schemas) -> CompiledQuery:
    """Accept query text, an AST or an already compiled query."""
    if isinstance(query, CompiledQuery):
        return query
    if isinstance(query, str):
        from .sql import parse_query

        query = parse_query(query)
    return validate(query, schemas)
