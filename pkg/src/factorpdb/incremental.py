"""Answer maintenance across worlds.

A session runs the query once in full on the starting world, then folds
each coalesced world delta into the stored answer: the removals and
additions come from delta queries over the previous world plus the delta,
so the cost follows the delta, not the database.
"""
from __future__ import annotations

from .errors import CorruptionError
from .query import AnswerDelta, DeltaContext, MultisetAnswer, compile_query, maintain


def delta_execute(query, prev_world, delta, cache=None) -> AnswerDelta:
    """Removals and additions turning ``Q(prev_world)`` into ``Q(prev_world + delta)``.

    ``prev_world`` must be the world *before* ``delta``. Aggregate nodes
    recompute their groups from scratch unless ``cache`` (from
    :meth:`CompiledQuery.build_cache`) is passed.
    """
    plan = compile_query(query, prev_world.schemas)
    return plan.delta(prev_world, delta, cache)


def delta_aggregate(query, prev_world, delta, prev_groups, ctx=None) -> AnswerDelta:
    """:func:`delta_execute` for aggregate queries with a per-group count cache.

    Only groups holding a delta tuple are recomputed; ``prev_groups`` is
    updated in place to describe the new world. Pass a
    :class:`DeltaContext` to read how many groups were recomputed.
    """
    plan = compile_query(query, prev_world.schemas)
    ctx = ctx or DeltaContext(prev_groups)
    ctx.cache = prev_groups
    return plan.delta(prev_world, delta, prev_groups, ctx)


class IncrementalQuery:
    """A query bound to one chain's world, holding the current answer and caches.

    Call :meth:`advance` with the previous world and the delta leading away
    from it. Nothing here is shared between chains.
    """

    def __init__(self, query, world, check_every: int = 0):
        self.plan = compile_query(query, world.schemas)
        self.answer = self.plan.execute(world)
        self.cache = self.plan.build_cache(world)
        self.check_every = check_every
        self.updates = 0
        self.groups_touched = 0

    def delta(self, prev_world, delta) -> AnswerDelta:
        """Answer delta for ``delta``; the caches move to the new world."""
        ctx = DeltaContext(self.cache)
        d = self.plan.delta(prev_world, delta, self.cache, ctx)
        self.groups_touched += ctx.groups_touched
        return d

    def advance(self, prev_world, delta) -> AnswerDelta:
        d = self.delta(prev_world, delta)
        self.answer.apply(d)
        self.updates += 1
        return d

    def verify(self, world):
        """Compare the maintained answer with a full execution on ``world``."""
        full = self.plan.execute(world)
        if full != self.answer:
            raise CorruptionError(
                f"maintained answer diverged after {self.updates} updates: "
                f"maintained {self.answer!r}, full {full!r}")

    def reset(self, world):
        self.answer = self.plan.execute(world)
        self.cache = self.plan.build_cache(world)


__all__ = ["AnswerDelta", "IncrementalQuery", "MultisetAnswer", "delta_aggregate", "delta_execute",
           "maintain"]
