"""In-memory relational store holding exactly one possible world.

Rows are plain tuples aligned to their relation's attribute order and are
keyed by primary-key value. Hidden fields are declared per ``(relation,
attribute)`` with a finite :class:`Domain`; every other field is observed.

Changes between worlds are expressed as :class:`Delta` values: the pre-image
of every touched row (``minus``) and its post-image (``plus``).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from operator import itemgetter
from pathlib import Path
from typing import Any, Iterable, NamedTuple

from .errors import (
    CorruptionError,
    DomainError,
    SnapshotFormatError,
    UnknownVariableError,
)

SNAPSHOT_HEADER = "FACTORPDB-SNAPSHOT 1"

_DTYPES = {"int": int, "str": str}


class Domain:
    """Ordered finite set of values a hidden field may take."""

    __slots__ = ("values", "_pos")

    def __init__(self, values: Iterable[Any]):
        values = tuple(values)
        if not values:
            raise ValueError("domain must be non-empty")
        pos = {v: i for i, v in enumerate(values)}
        if len(pos) != len(values):
            raise ValueError(f"domain values must be unique: {values!r}")
        self.values = values
        self._pos = pos

    def __contains__(self, value):
        return value in self._pos

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def index(self, value):
        try:
            return self._pos[value]
        except KeyError:
            raise DomainError(f"{value!r} not in domain {self.values!r}") from None

    def __eq__(self, other):
        return isinstance(other, Domain) and other.values == self.values

    def __hash__(self):
        return hash(self.values)

    def __repr__(self):
        return f"Domain({list(self.values)!r})"


class VariableRef(NamedTuple):
    """Address of a single field: ``relation[key].attribute``."""

    relation: str
    key: Any
    attribute: str


@dataclass(frozen=True)
class Attribute:
    name: str
    dtype: str = "str"

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {self.dtype!r}")


class Schema:
    """Relation schema: ordered attributes plus a primary-key attribute."""

    def __init__(self, name: str, attributes, key: str):
        attrs = tuple(a if isinstance(a, Attribute) else Attribute(*a) if isinstance(a, tuple) else Attribute(a)
                      for a in attributes)
        names = [a.name for a in attrs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in {name}: {names}")
        if key not in names:
            raise ValueError(f"primary key {key!r} not among attributes of {name}")
        self.name = name
        self.attributes = attrs
        self.key = key
        self.names = tuple(names)
        self.pos = {n: i for i, n in enumerate(names)}
        self.key_pos = self.pos[key]

    def index_of(self, attribute: str) -> int:
        try:
            return self.pos[attribute]
        except KeyError:
            raise KeyError(f"relation {self.name} has no attribute {attribute!r}") from None

    def __eq__(self, other):
        return (isinstance(other, Schema) and other.name == self.name
                and other.attributes == self.attributes and other.key == self.key)

    def __repr__(self):
        return f"Schema({self.name!r}, {list(self.names)!r}, key={self.key!r})"


class Delta:
    """Coalesced difference between two worlds.

    ``minus`` maps ``(relation, key)`` to the row as it was in the old world,
    ``plus`` maps it to the row as it is in the new world. A key present in
    both is an update; a key in only one side is a delete or an insert.
    """

    __slots__ = ("minus", "plus")

    def __init__(self, minus=None, plus=None):
        self.minus = {} if minus is None else minus
        self.plus = {} if plus is None else plus

    @classmethod
    def update(cls, relation, key, old, new):
        k = (relation, key)
        return cls({k: old}, {k: new})

    def is_empty(self):
        return not self.minus and not self.plus

    def __bool__(self):
        return not self.is_empty()

    def __len__(self):
        return len(self.minus.keys() | self.plus.keys())

    def keys(self):
        return self.minus.keys() | self.plus.keys()

    def for_relation(self, relation):
        """Return ``(minus_rows, plus_rows)`` restricted to one relation."""
        m = [row for (rel, _), row in self.minus.items() if rel == relation]
        p = [row for (rel, _), row in self.plus.items() if rel == relation]
        return m, p

    def inverse(self):
        return Delta(dict(self.plus), dict(self.minus))

    def copy(self):
        return Delta(dict(self.minus), dict(self.plus))

    def absorb(self, later: "Delta"):
        """Compose ``later`` onto this delta in place (``self`` then ``later``)."""
        minus, plus = self.minus, self.plus
        for k in later.minus.keys() | later.plus.keys():
            if k in plus or k in minus:
                # the original pre-image stays; only the post-image moves forward
                orig = minus.get(k)
            else:
                orig = later.minus.get(k)
            new = later.plus.get(k)
            if orig == new:
                minus.pop(k, None)
                plus.pop(k, None)
                continue
            if orig is None:
                minus.pop(k, None)
            else:
                minus[k] = orig
            if new is None:
                plus.pop(k, None)
            else:
                plus[k] = new
        return self

    def coalesce(self):
        for k in [k for k in self.minus if k in self.plus and self.minus[k] == self.plus[k]]:
            del self.minus[k]
            del self.plus[k]
        return self

    def __eq__(self, other):
        return isinstance(other, Delta) and other.minus == self.minus and other.plus == self.plus

    def __repr__(self):
        return f"Delta(minus={self.minus!r}, plus={self.plus!r})"


def compose_deltas(d1: Delta, d2: Delta) -> Delta:
    """Delta equivalent to applying ``d1`` then ``d2``; reverted rows drop out."""
    return d1.copy().coalesce().absorb(d2)


class _OrderedGroups:
    """Keys of a relation grouped by one attribute, each group sorted by key."""

    __slots__ = ("groups", "position", "group_values")

    def __init__(self, rows, group_pos):
        buckets: dict = {}
        for key, row in rows.items():
            g = None if group_pos is None else row[group_pos]
            buckets.setdefault(g, []).append(key)
        self.groups = {g: tuple(sorted(keys)) for g, keys in buckets.items()}
        self.position = {}
        for g, keys in self.groups.items():
            for i, key in enumerate(keys):
                self.position[key] = (g, i)
        self.group_values = sorted(self.groups, key=_sort_key)


def _sort_key(v):
    return (v is None, type(v).__name__, v)


class World:
    """A single deterministic relational instance.

    ``reads`` counts base rows handed out by scans and index lookups; the
    incremental query machinery uses it to check its work bound.
    """

    def __init__(self, schemas=(), hidden=None):
        self.schemas: dict[str, Schema] = {}
        self.rows: dict[str, dict] = {}
        self.hidden: dict[tuple[str, str], Domain] = {}
        self._indexes: dict = {}
        self._index_by_rel: dict = {}
        self._ordered: dict = {}
        self.reads = 0
        for s in schemas:
            self.add_relation(s)
        for (rel, attr), dom in (hidden or {}).items():
            self.declare_hidden(rel, attr, dom)

    # -- schema ---------------------------------------------------------
    def add_relation(self, schema: Schema):
        if schema.name in self.schemas:
            raise ValueError(f"relation {schema.name} already exists")
        self.schemas[schema.name] = schema
        self.rows[schema.name] = {}

    def declare_hidden(self, relation, attribute, domain):
        schema = self.schemas[relation]
        schema.index_of(attribute)
        if attribute == schema.key:
            raise ValueError("primary key cannot be hidden")
        domain = domain if isinstance(domain, Domain) else Domain(domain)
        i = schema.pos[attribute]
        for row in self.rows[relation].values():
            if row[i] not in domain:
                raise DomainError(f"{relation}.{attribute}={row[i]!r} not in {domain!r}")
        self.hidden[(relation, attribute)] = domain

    def is_hidden(self, relation, attribute):
        return (relation, attribute) in self.hidden

    def hidden_refs(self) -> list[VariableRef]:
        """Every hidden variable, ordered by relation, key, attribute."""
        refs = []
        for (rel, attr) in sorted(self.hidden):
            for key in sorted(self.rows[rel], key=_sort_key):
                refs.append(VariableRef(rel, key, attr))
        return refs

    # -- row access -------------------------------------------------------
    def insert(self, relation, values):
        schema = self.schemas[relation]
        row = tuple(values)
        if len(row) != len(schema.names):
            raise ValueError(f"{relation}: expected {len(schema.names)} values, got {len(row)}")
        self._check_row(schema, row)
        key = row[schema.key_pos]
        if key in self.rows[relation]:
            raise ValueError(f"{relation}: duplicate primary key {key!r}")
        self._set_row(relation, key, None, row)
        return key

    def _check_row(self, schema, row):
        for attr, v in zip(schema.attributes, row):
            if not isinstance(v, _DTYPES[attr.dtype]):
                raise DomainError(f"{schema.name}.{attr.name}: {v!r} is not {attr.dtype}")
            dom = self.hidden.get((schema.name, attr.name))
            if dom is not None and v not in dom:
                raise DomainError(f"{schema.name}.{attr.name}: {v!r} not in {dom!r}")

    def get(self, relation, key):
        return self.rows[relation][key]

    def value(self, ref):
        rel, key, attr = ref
        return self.rows[rel][key][self.schemas[rel].pos[attr]]

    def scan(self, relation):
        rows = self.rows[relation]
        self.reads += len(rows)
        return rows.values()

    def __len__(self):
        return sum(len(r) for r in self.rows.values())

    # -- mutation -----------------------------------------------------------
    def update_field(self, ref, value) -> Delta:
        """Set one hidden field; return the single-row delta fragment."""
        rel, key, attr = ref
        dom = self.hidden.get((rel, attr))
        if dom is None:
            if rel not in self.schemas or attr not in self.schemas[rel].pos:
                raise UnknownVariableError(ref)
            raise UnknownVariableError(f"{rel}.{attr} is not a hidden field")
        if value not in dom:
            raise DomainError(f"{value!r} not in domain of {rel}.{attr}")
        try:
            old = self.rows[rel][key]
        except KeyError:
            raise UnknownVariableError(ref) from None
        i = self.schemas[rel].pos[attr]
        new = old[:i] + (value,) + old[i + 1:]
        self._set_row(rel, key, old, new)
        return Delta.update(rel, key, old, new)

    def apply_delta(self, delta: Delta):
        rows = self.rows
        for k, old in delta.minus.items():
            rel, key = k
            if rows[rel].get(key) != old:
                raise CorruptionError(f"delta pre-image mismatch at {rel}[{key!r}]")
        for k, new in delta.plus.items():
            rel, key = k
            if k not in delta.minus and key in rows[rel]:
                raise CorruptionError(f"delta inserts existing key {rel}[{key!r}]")
        for k, old in delta.minus.items():
            if k not in delta.plus:
                self._set_row(k[0], k[1], old, None)
        for k, new in delta.plus.items():
            self._set_row(k[0], k[1], delta.minus.get(k), new)
        return self

    def revert_delta(self, delta: Delta):
        return self.apply_delta(delta.inverse())

    def _set_row(self, rel, key, old, new):
        if new is None:
            del self.rows[rel][key]
        else:
            self.rows[rel][key] = new
        for get, index in self._index_by_rel.get(rel, ()):
            ok = None if old is None else get(old)
            nk = None if new is None else get(new)
            if ok == nk and old is not None and new is not None:
                continue
            if old is not None:
                bucket = index.get(ok)
                if bucket is not None:
                    bucket.discard(key)
                    if not bucket:
                        del index[ok]
            if new is not None:
                index.setdefault(nk, set()).add(key)
        if self._ordered:
            for (orel, gpos) in list(self._ordered):
                if orel != rel:
                    continue
                if old is None or new is None or (gpos is not None and old[gpos] != new[gpos]):
                    del self._ordered[(orel, gpos)]

    # -- indexes --------------------------------------------------------------
    def index(self, relation, attributes) -> dict:
        """Hash index ``value -> set(keys)`` over one or more attributes.

        Built on first use and maintained under every later row change. With a
        single attribute the index is keyed by the bare value, otherwise by a
        tuple of values.
        """
        if isinstance(attributes, str):
            attributes = (attributes,)
        attributes = tuple(attributes)
        ident = (relation, attributes)
        idx = self._indexes.get(ident)
        if idx is None:
            schema = self.schemas[relation]
            positions = tuple(schema.index_of(a) for a in attributes)
            if len(positions) == 1:
                positions = positions[0]
            get = itemgetter(*positions) if isinstance(positions, tuple) and len(positions) > 1 \
                else itemgetter(positions)
            idx = {}
            for key, row in self.rows[relation].items():
                idx.setdefault(get(row), set()).add(key)
            self._indexes[ident] = idx
            self._index_by_rel.setdefault(relation, []).append((get, idx))
        return idx

    def lookup(self, relation, attribute, value):
        """Rows whose ``attribute`` equals ``value``, via the hash index."""
        keys = self.index(relation, attribute).get(value, ())
        rows = self.rows[relation]
        self.reads += len(keys)
        return [rows[k] for k in keys]

    def ordered_groups(self, relation, attribute=None) -> _OrderedGroups:
        """Keys grouped by ``attribute`` (whole relation when None), key-sorted."""
        gpos = None if attribute is None else self.schemas[relation].index_of(attribute)
        og = self._ordered.get((relation, gpos))
        if og is None:
            og = _OrderedGroups(self.rows[relation], gpos)
            self._ordered[(relation, gpos)] = og
        return og

    # -- copies and comparison -----------------------------------------------
    def clone(self) -> "World":
        """Deep, independent copy. Immutable ordering caches are shared."""
        w = World.__new__(World)
        w.schemas = dict(self.schemas)
        w.rows = {rel: dict(rows) for rel, rows in self.rows.items()}
        w.hidden = dict(self.hidden)
        w._indexes = {}
        w._index_by_rel = {}
        w._ordered = dict(self._ordered)
        w.reads = 0
        return w

    def digest(self) -> str:
        h = hashlib.sha256()
        for rel in sorted(self.rows):
            h.update(rel.encode())
            for key in sorted(self.rows[rel], key=_sort_key):
                h.update(repr(self.rows[rel][key]).encode())
        return h.hexdigest()

    def same_contents(self, other: "World") -> bool:
        return self.schemas == other.schemas and self.rows == other.rows and self.hidden == other.hidden

    def __repr__(self):
        sizes = ", ".join(f"{r}:{len(v)}" for r, v in self.rows.items())
        return f"<World {sizes}>"


def clone_world(world: World) -> World:
    return world.clone()


def update_field(world: World, ref: VariableRef, value) -> Delta:
    return world.update_field(ref, value)


def apply_delta(world: World, delta: Delta) -> World:
    return world.apply_delta(delta)


def revert_delta(world: World, delta: Delta) -> World:
    return world.revert_delta(delta)


# -- snapshots ------------------------------------------------------------------
#
# Line-oriented: a version header, then one JSON object per line.
#   {"relation": NAME, "key": ATTR, "attributes": [[name, dtype], ...]}
#   {"hidden": [REL, ATTR], "domain": [...]}
#   {"row": REL, "values": [...]}


def write_snapshot(world: World, path):
    lines = [SNAPSHOT_HEADER]
    for name, schema in world.schemas.items():
        lines.append(json.dumps({
            "relation": name, "key": schema.key,
            "attributes": [[a.name, a.dtype] for a in schema.attributes],
        }))
    for (rel, attr), dom in sorted(world.hidden.items()):
        lines.append(json.dumps({"hidden": [rel, attr], "domain": list(dom.values)}))
    for name in world.schemas:
        rows = world.rows[name]
        for key in sorted(rows, key=_sort_key):
            lines.append(json.dumps({"row": name, "values": list(rows[key])}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_snapshot(path) -> World:
    path = Path(path)
    world = World()
    hidden = []
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != SNAPSHOT_HEADER:
            raise SnapshotFormatError(f"expected header {SNAPSHOT_HEADER!r}", 1, path)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "relation" in rec:
                    world.add_relation(Schema(rec["relation"],
                                              [Attribute(n, t) for n, t in rec["attributes"]],
                                              rec["key"]))
                elif "hidden" in rec:
                    hidden.append((tuple(rec["hidden"]), rec["domain"]))
                elif "row" in rec:
                    world.insert(rec["row"], rec["values"])
                else:
                    raise ValueError("unrecognised record")
            except (ValueError, KeyError, TypeError) as exc:
                raise SnapshotFormatError(str(exc), lineno, path) from exc
    for (rel, attr), dom in hidden:
        try:
            world.declare_hidden(rel, attr, dom)
        except (ValueError, KeyError) as exc:
            raise SnapshotFormatError(str(exc), None, path) from exc
    return world


__all__ = [
    "Attribute", "Delta", "Domain", "Schema", "VariableRef", "World",
    "apply_delta", "clone_world", "compose_deltas", "read_snapshot",
    "revert_delta", "update_field", "write_snapshot",
]
