"""Factor templates, log-space world scoring and local score ratios.

A factor's log value is the dot product of its feature vector with the
template's weights. Features are sparse: a feature function yields
``(feature_key, value)`` pairs and weights are a ``feature_key -> float``
mapping, so unlisted features have weight zero. Hard templates instead
evaluate a predicate and contribute ``0`` when it holds and ``-inf``
otherwise, which rules the world out.

Factors are never stored. Templates produce factor instances on demand,
either for a whole world or for the neighbourhood of some changed
variables.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, NamedTuple

from .errors import ContractViolation, DomainError, StateSpaceTooLarge
from .world import Domain, VariableRef, World

NEG_INF = float("-inf")

DEFAULT_STATE_CAP = 10**6


# -- feature functions and constraint predicates ---------------------------------

def _indicator(values):
    return ((values, 1.0),)


def _agreement(values):
    first = values[0]
    for v in values[1:]:
        if v != first:
            return ()
    return ((("agree",), 1.0),)


FEATURES: dict[str, Callable] = {
    "indicator": _indicator,
    "agreement": _agreement,
}


def _bio_ok(values, params=None):
    prev, cur = values
    if not cur.startswith("I-"):
        return True
    kind = cur[2:]
    return prev == "B-" + kind or prev == "I-" + kind


def _forbid(values, params):
    return tuple(values) not in params


def _all_equal(values, params=None):
    return all(v == values[0] for v in values)


PREDICATES: dict[str, Callable] = {
    "bio": _bio_ok,
    "forbid": _forbid,
    "equal": _all_equal,
}


def register_feature(name, fn):
    FEATURES[name] = fn


def register_predicate(name, fn):
    PREDICATES[name] = fn


class FactorInstance(NamedTuple):
    template: "FactorTemplate"
    fields: tuple  # ((relation, key, attribute), ...)


class FactorTemplate:
    """Base class; subclasses decide which fields a factor ties together."""

    kind = "abstract"

    def __init__(self, name, relation, attributes, feature="indicator", weights=None,
                 hard=False, predicate=None, params=None):
        self.name = name
        self.relation = relation
        self.attributes = tuple(attributes)
        self.feature = feature
        self.weights = dict(weights or {})
        self.hard = hard
        self.predicate = predicate
        self.params = params
        for w in self.weights.values():
            if not math.isfinite(w):
                raise ValueError(f"template {name}: weights must be finite")
        if hard:
            if predicate not in PREDICATES:
                raise ValueError(f"unknown constraint predicate {predicate!r}")
            pred = PREDICATES[predicate]
            self._pred = pred
            self.score = self._score_hard
        elif feature == "indicator":
            self.score = self._score_indicator
        else:
            if feature not in FEATURES:
                raise ValueError(f"unknown feature function {feature!r}")
            self._features = FEATURES[feature]
            self.score = self._score_sparse
        # filled in by FactorGraphSpec
        self.slot_domains: tuple = ()

    # scoring ------------------------------------------------------------
    def _score_indicator(self, values):
        return self.weights.get(values, 0.0)

    def _score_sparse(self, values):
        total = 0.0
        weights = self.weights
        for key, v in self._features(values):
            w = weights.get(key)
            if w:
                total += v * w
        return total

    def _score_hard(self, values):
        return 0.0 if self._pred(values, self.params) else NEG_INF

    def feature_vector(self, values):
        """Sparse feature vector as a dict (hard templates have none)."""
        if self.hard:
            return {}
        fn = _indicator if self.feature == "indicator" else self._features
        out = {}
        for key, v in fn(tuple(values)):
            out[key] = out.get(key, 0.0) + v
        return out

    # structure ----------------------------------------------------------
    @property
    def arity(self):
        raise NotImplementedError

    def variable_attributes(self):
        """Attributes whose value feeds the factor score."""
        return set(self.attributes)

    def structure_attributes(self):
        """Attributes that decide which fields a factor connects."""
        return set()

    def instances(self, world):
        raise NotImplementedError

    def touching(self, world, key):
        """Instances with a neighbour in row ``key`` of this template's relation."""
        raise NotImplementedError

    def slot_attributes(self):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class UnaryTemplate(FactorTemplate):
    """One factor per row over several attributes of that row (emission, bias)."""

    kind = "unary"

    @property
    def arity(self):
        return len(self.attributes)

    def slot_attributes(self):
        return self.attributes

    def _fields(self, key):
        rel = self.relation
        return tuple((rel, key, a) for a in self.attributes)

    def instances(self, world):
        for key in world.rows[self.relation]:
            yield FactorInstance(self, self._fields(key))

    def touching(self, world, key):
        return (FactorInstance(self, self._fields(key)),)


class ChainTemplate(FactorTemplate):
    """Factors between one attribute of consecutive rows, ordered by key within a group."""

    kind = "chain"

    def __init__(self, name, relation, attribute, group=None, **kw):
        super().__init__(name, relation, (attribute,), **kw)
        self.attribute = attribute
        self.group = group

    @property
    def arity(self):
        return 2

    def slot_attributes(self):
        return (self.attribute, self.attribute)

    def variable_attributes(self):
        return {self.attribute}

    def structure_attributes(self):
        return {self.group} if self.group else set()

    def _pair(self, a, b):
        rel, attr = self.relation, self.attribute
        return FactorInstance(self, ((rel, a, attr), (rel, b, attr)))

    def instances(self, world):
        og = world.ordered_groups(self.relation, self.group)
        for g in og.group_values:
            keys = og.groups[g]
            for a, b in zip(keys, keys[1:]):
                yield self._pair(a, b)

    def touching(self, world, key):
        og = world.ordered_groups(self.relation, self.group)
        g, i = og.position[key]
        keys = og.groups[g]
        out = []
        if i > 0:
            out.append(self._pair(keys[i - 1], key))
        if i + 1 < len(keys):
            out.append(self._pair(key, keys[i + 1]))
        return out


class SkipTemplate(FactorTemplate):
    """Factors between one attribute of every pair of rows sharing a ``match`` value.

    ``group`` limits pairs to rows that also share that attribute (e.g. the
    same document); ``None`` links across the whole relation. With
    ``capitalized`` only match values starting with an uppercase letter link.
    """

    kind = "skip"

    def __init__(self, name, relation, attribute, match, group=None, capitalized=True, **kw):
        super().__init__(name, relation, (attribute,), **kw)
        self.attribute = attribute
        self.match = match
        self.group = group
        self.capitalized = capitalized

    @property
    def arity(self):
        return 2

    def slot_attributes(self):
        return (self.attribute, self.attribute)

    def variable_attributes(self):
        return {self.attribute}

    def structure_attributes(self):
        return {self.match} | ({self.group} if self.group else set())

    def _index_attrs(self):
        return (self.group, self.match) if self.group else (self.match,)

    def _links(self, value):
        return not self.capitalized or (isinstance(value, str) and value[:1].isupper())

    def _pair(self, a, b):
        rel, attr = self.relation, self.attribute
        if b < a:
            a, b = b, a
        return FactorInstance(self, ((rel, a, attr), (rel, b, attr)))

    def instances(self, world):
        index = world.index(self.relation, self._index_attrs())
        for ident in sorted(index, key=repr):
            value = ident[-1] if self.group else ident
            keys = index[ident]
            if len(keys) < 2 or not self._links(value):
                continue
            for a, b in itertools.combinations(sorted(keys), 2):
                yield self._pair(a, b)

    def touching(self, world, key):
        schema = world.schemas[self.relation]
        row = world.rows[self.relation][key]
        value = row[schema.pos[self.match]]
        if not self._links(value):
            return ()
        ident = (row[schema.pos[self.group]], value) if self.group else value
        bucket = world.index(self.relation, self._index_attrs()).get(ident, ())
        return [self._pair(key, other) for other in bucket if other != key]


class FactorGraphSpec:
    """Templates plus the hidden-field declarations they range over.

    Immutable once built; any number of chains may share one instance.
    """

    def __init__(self, templates=(), hidden=None):
        self.templates = tuple(templates)
        names = [t.name for t in self.templates]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate template names: {names}")
        self.hidden: dict[tuple[str, str], Domain] = {}
        for (rel, attr), dom in (hidden or {}).items():
            self.hidden[(rel, attr)] = dom if isinstance(dom, Domain) else Domain(dom)
        self._by_attr: dict[tuple[str, str], list] = {}
        self._structural: set = set()
        for t in self.templates:
            for attr in t.variable_attributes():
                self._by_attr.setdefault((t.relation, attr), []).append(t)
            for attr in t.structure_attributes():
                self._structural.add((t.relation, attr))
            t.slot_domains = tuple(self.hidden.get((t.relation, a)) for a in t.slot_attributes())

    def template(self, name):
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(name)

    def bind(self, world: World) -> World:
        """Check the world's schemas fit the templates and declare hidden fields on it."""
        errors = []
        for t in self.templates:
            schema = world.schemas.get(t.relation)
            if schema is None:
                errors.append(f"template {t.name}: unknown relation {t.relation}")
                continue
            needed = set(t.attributes) | t.structure_attributes()
            for attr in sorted(needed):
                if attr not in schema.pos:
                    errors.append(f"template {t.name}: {t.relation} has no attribute {attr}")
        for (rel, attr) in self.hidden:
            if rel not in world.schemas or attr not in world.schemas[rel].pos:
                errors.append(f"hidden field {rel}.{attr} not in world schema")
        if errors:
            raise ValueError("; ".join(errors))
        for (rel, attr), dom in self.hidden.items():
            if world.hidden.get((rel, attr)) != dom:
                world.declare_hidden(rel, attr, dom)
        return world

    # -- instantiation --------------------------------------------------------
    def instances(self, world):
        for t in self.templates:
            yield from t.instances(world)

    def changed_variables(self, world, delta) -> list:
        """Hidden variables whose value differs between the delta's two sides."""
        changed = []
        hidden = world.hidden
        for k, old in delta.minus.items():
            new = delta.plus.get(k)
            if new is None:
                raise ContractViolation(f"delta deletes row {k}; only hidden fields may change")
            if new == old:
                continue
            rel, key = k
            names = world.schemas[rel].names
            for i, (a, b) in enumerate(zip(old, new)):
                if a != b:
                    if (rel, names[i]) not in hidden:
                        raise ContractViolation(f"delta changes observed field {rel}.{names[i]}")
                    changed.append(VariableRef(rel, key, names[i]))
        if len(delta.plus) != len(delta.minus):
            for k in delta.plus:
                if k not in delta.minus:
                    raise ContractViolation(f"delta inserts row {k}; only hidden fields may change")
        return changed

    def touched_factors(self, world, changed) -> list:
        """Factor instances with at least one neighbour among ``changed``."""
        seen = {}
        by_attr = self._by_attr
        for ref in changed:
            for t in by_attr.get((ref.relation, ref.attribute), ()):
                for inst in t.touching(world, ref.key):
                    seen[inst] = None
        return list(seen)

    def structural_change(self, changed) -> bool:
        return any((r.relation, r.attribute) in self._structural for r in changed)

    # -- scoring ---------------------------------------------------------------
    @staticmethod
    def score_instances(world, instances) -> float:
        rows = world.rows
        schemas = world.schemas
        total = 0.0
        for inst in instances:
            vals = tuple([rows[r][k][schemas[r].pos[a]] for r, k, a in inst.fields])
            total += inst.template.score(vals)
        return total

    def world_log_score(self, world) -> float:
        return self.score_instances(world, self.instances(world))

    def local_transition(self, world, delta):
        """Apply ``delta`` and return ``(log_ratio, factors_scored)``.

        Only factors touching the changed variables are scored, before and
        after. The world is left in the post-delta state.
        """
        changed = self.changed_variables(world, delta)
        if not changed:
            world.apply_delta(delta)
            return 0.0, 0
        before = self.touched_factors(world, changed)
        s0 = self.score_instances(world, before)
        world.apply_delta(delta)
        after = self.touched_factors(world, changed) if self.structural_change(changed) else before
        s1 = self.score_instances(world, after)
        return _log_ratio(s0, s1), len(before) + len(after)

    def log_score_ratio(self, world, delta) -> float:
        ratio, _ = self.local_transition(world, delta)
        world.revert_delta(delta)
        return ratio

    def __repr__(self):
        return f"FactorGraphSpec({[t.name for t in self.templates]})"


def _log_ratio(s0, s1):
    if s1 == NEG_INF:
        return NEG_INF
    if s0 == NEG_INF:
        return math.inf
    return s1 - s0


# -- spec-level operations ---------------------------------------------------------

def factor_log_score(template: FactorTemplate, assignment) -> float:
    """``phi(assignment) . theta`` for one factor, with domain checking."""
    values = tuple(assignment)
    if len(values) != template.arity:
        raise ValueError(f"{template.name} expects {template.arity} values, got {len(values)}")
    for v, dom in zip(values, template.slot_domains):
        if dom is not None and v not in dom:
            raise DomainError(f"{v!r} not in domain {dom!r} for template {template.name}")
    return template.score(values)


def world_log_score(spec: FactorGraphSpec, world: World) -> float:
    return spec.world_log_score(world)


def touched_factors(spec: FactorGraphSpec, world: World, changed) -> list:
    changed = list(changed)
    for ref in changed:
        if (ref.relation, ref.attribute) not in world.hidden:
            raise ContractViolation(f"{ref} is not a hidden variable")
    return spec.touched_factors(world, changed)


def log_score_ratio(spec: FactorGraphSpec, world: World, delta) -> float:
    return spec.log_score_ratio(world, delta)


def logsumexp(values) -> float:
    values = [v for v in values if v != NEG_INF]
    if not values:
        return NEG_INF
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


class ExactDistribution:
    """Brute-force distribution over assignments to every hidden variable.

    ``probs`` maps an assignment (values aligned with ``variables``) to its
    probability; impossible worlds are absent.
    """

    def __init__(self, variables, probs, template_world):
        self.variables = list(variables)
        self.probs = probs
        self._world = template_world

    def __len__(self):
        return len(self.probs)

    def total(self):
        return math.fsum(self.probs.values())

    def marginals(self) -> dict:
        out = {ref: {} for ref in self.variables}
        for assignment, p in self.probs.items():
            for ref, v in zip(self.variables, assignment):
                out[ref][v] = out[ref].get(v, 0.0) + p
        return out

    def worlds(self):
        """Yield ``(world, probability)``, reusing one scratch world."""
        w = self._world.clone()
        for assignment, p in self.probs.items():
            for ref, v in zip(self.variables, assignment):
                w.update_field(ref, v)
            yield w, p

    def query_marginals(self, query) -> dict:
        """Exact ``Pr[t in Q(W)]`` for every tuple that can appear in the answer."""
        from .query import compile_query

        plan = compile_query(query, self._world.schemas)
        out: dict = {}
        for w, p in self.worlds():
            for t in plan.execute(w):
                out[t] = out.get(t, 0.0) + p
        return out


def exact_distribution(spec: FactorGraphSpec, world: World, cap: int = DEFAULT_STATE_CAP) -> ExactDistribution:
    """Enumerate every assignment of the hidden variables and normalise.

    Test oracle only: refuses when the joint domain exceeds ``cap``.
    """
    template = spec.bind(world.clone())
    refs = template.hidden_refs()
    domains = [template.hidden[(r.relation, r.attribute)].values for r in refs]
    log10_size = math.fsum(math.log10(len(d)) for d in domains)
    if log10_size > math.log10(cap) + 1e-12:
        raise StateSpaceTooLarge(
            f"{len(refs)} hidden variables span about 10^{log10_size:.1f} joint assignments, "
            f"above the cap of {cap}; the oracle is for small fixtures only")
    scratch = template.clone()
    scores = {}
    for assignment in itertools.product(*domains):
        for ref, v in zip(refs, assignment):
            scratch.update_field(ref, v)
        scores[assignment] = spec.world_log_score(scratch)
    log_z = logsumexp(scores.values())
    if log_z == NEG_INF:
        raise ValueError("every world violates a hard constraint")
    probs = {a: math.exp(s - log_z) for a, s in scores.items() if s != NEG_INF}
    return ExactDistribution(refs, probs, template)
