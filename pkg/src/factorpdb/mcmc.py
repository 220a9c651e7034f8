"""Metropolis-Hastings over possible worlds.

Proposals are deltas against the current world. Acceptance uses only the
log-ratio of the factors touching the changed variables plus the proposal's
own log-q correction; the normaliser never appears. Every proposal consumes
exactly one uniform draw for the accept test, so two evaluators fed the same
seed walk through the same worlds.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .world import Delta, VariableRef


def make_rng(seed: int, chain: int = 0) -> random.Random:
    """Independent, reproducible stream for ``(seed, chain)``."""
    state = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain),)).generate_state(4)
    return random.Random(int.from_bytes(state.astype("<u4").tobytes(), "little"))


class Proposal(NamedTuple):
    delta: Delta
    log_q_forward: float = 0.0
    log_q_backward: float = 0.0


class StepResult(NamedTuple):
    accepted: bool
    delta: Delta | None
    factors: int


@dataclass
class WalkResult:
    delta: Delta = field(default_factory=Delta)
    accepted: int = 0
    proposed: int = 0
    factors: int = 0


class UniformFlipProposer:
    """Pick one variable uniformly, then a value uniformly from its whole domain.

    The current value is a legal draw, so forward and backward proposal
    probabilities are equal and the q-ratio is zero in log space.
    """

    def __init__(self, variables=None):
        self.variables = None if variables is None else list(variables)
        self._cache = None

    def _setup(self, world):
        refs = self.variables if self.variables is not None else world.hidden_refs()
        if not refs:
            raise ValueError("no hidden variables to propose over")
        slots = []
        for ref in refs:
            schema = world.schemas[ref.relation]
            slots.append((ref.relation, ref.key, schema.pos[ref.attribute],
                          world.hidden[(ref.relation, ref.attribute)].values))
        self._cache = slots

    def propose(self, world, rng):
        if self._cache is None:
            self._setup(world)
        rel, key, i, values = self._cache[rng.randrange(len(self._cache))]
        value = values[rng.randrange(len(values))]
        old = world.rows[rel][key]
        new = old[:i] + (value,) + old[i + 1:]
        return Proposal(Delta.update(rel, key, old, new))


def _accept(log_alpha, u):
    if log_alpha >= 0.0:
        return u < 1.0
    return u < math.exp(log_alpha)


def mh_step(world, spec, proposer, rng) -> StepResult:
    """One proposal and accept/reject; the world holds the outcome afterwards."""
    prop = proposer.propose(world, rng)
    delta = prop.delta
    log_ratio, nfactors = spec.local_transition(world, delta)
    log_alpha = log_ratio + prop.log_q_backward - prop.log_q_forward
    u = rng.random()
    if log_alpha == log_alpha and _accept(log_alpha, u):
        return StepResult(True, delta, nfactors)
    world.revert_delta(delta)
    return StepResult(False, None, nfactors)


def acceptance_probability(log_ratio, log_q_forward=0.0, log_q_backward=0.0) -> float:
    a = log_ratio + log_q_backward - log_q_forward
    if a != a:
        return 0.0
    return math.exp(min(0.0, a))


def random_walk(world, spec, proposer, rng, k: int) -> WalkResult:
    """Run ``k`` MH proposals; return their coalesced delta and counters."""
    if k < 1:
        raise ValueError("a walk needs at least one step")
    result = WalkResult()
    coalesced = result.delta
    for _ in range(k):
        accepted, delta, nf = mh_step(world, spec, proposer, rng)
        result.factors += nf
        if accepted:
            result.accepted += 1
            coalesced.absorb(delta)
    result.proposed = k
    return result


def chain_marginals(world, spec, proposer, rng, n_samples: int, k: int, variables=None, burn_in: int = 0):
    """Per-variable value frequencies over ``n_samples`` thinned samples.

    One sample is recorded after each walk of ``k`` steps; ``burn_in`` walks
    are discarded first.
    """
    refs = list(variables) if variables is not None else world.hidden_refs()
    for _ in range(burn_in):
        random_walk(world, spec, proposer, rng, k)
    counts = [dict() for _ in refs]
    slots = [(r.relation, r.key, world.schemas[r.relation].pos[r.attribute]) for r in refs]
    rows = world.rows
    for _ in range(n_samples):
        random_walk(world, spec, proposer, rng, k)
        for c, (rel, key, i) in zip(counts, slots):
            v = rows[rel][key][i]
            c[v] = c.get(v, 0) + 1
    return {ref: {v: n / n_samples for v, n in c.items()} for ref, c in zip(refs, counts)}


def world_frequencies(world, spec, proposer, rng, n_samples: int, k: int, variables=None):
    """Empirical joint distribution of ``variables`` over thinned samples."""
    refs = list(variables) if variables is not None else world.hidden_refs()
    freq = {}
    for _ in range(n_samples):
        random_walk(world, spec, proposer, rng, k)
        a = tuple(world.value(r) for r in refs)
        freq[a] = freq.get(a, 0) + 1
    return {a: n / n_samples for a, n in freq.items()}


__all__ = [
    "Proposal", "StepResult", "UniformFlipProposer", "VariableRef", "WalkResult",
    "acceptance_probability", "chain_marginals", "make_rng", "mh_step", "random_walk",
    "world_frequencies",
]
