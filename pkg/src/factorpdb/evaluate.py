"""Tuple-marginal estimation by sampling worlds.

Both evaluators record the starting world as the first sample and then one
sample after every walk of ``steps_per_sample`` proposals, so ``z`` equals
``n_samples``. The naive evaluator runs the full query on every sample.
The incremental one runs it once, then maintains the answer from each
walk's delta, and counts each tuple by the sample interval it stays in the
answer, so the per-sample bookkeeping follows the answer delta too.

With equal seeds the two walk through identical worlds and return identical
counts.
"""
from __future__ import annotations

import copy
import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .incremental import IncrementalQuery
from .mcmc import make_rng, random_walk
from .query import compile_query

MODES = ("naive", "incremental")


@dataclass
class EvaluationConfig:
    n_samples: int
    steps_per_sample: int = 10_000
    chains: int = 1
    seed: int = 0
    mode: str = "incremental"
    burn_in: int = 0
    check_every: int = 0

    def __post_init__(self):
        for name in ("n_samples", "steps_per_sample", "chains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.burn_in < 0 or self.check_every < 0:
            raise ValueError("burn_in and check_every must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, not {self.mode!r}")


@dataclass
class MarginalEstimate:
    """``counts[t]`` samples contained ``t``, out of ``z``."""

    counts: dict = field(default_factory=dict)
    z: int = 0

    def probability(self, t) -> float:
        return self.counts.get(t, 0) / self.z if self.z else 0.0

    def probabilities(self) -> dict:
        z = self.z
        return {t: c / z for t, c in self.counts.items()}

    def merge(self, other: "MarginalEstimate") -> "MarginalEstimate":
        counts = dict(self.counts)
        for t, c in other.counts.items():
            counts[t] = counts.get(t, 0) + c
        return MarginalEstimate(counts, self.z + other.z)

    def __eq__(self, other):
        if not isinstance(other, MarginalEstimate):
            return NotImplemented
        return self.z == other.z and self.counts == other.counts


def _probs(x) -> dict:
    if isinstance(x, MarginalEstimate):
        return x.probabilities()
    return dict(x)


def squared_error(est, truth) -> float:
    """Sum over the union of tuples of the squared probability difference."""
    p, q = _probs(est), _probs(truth)
    return math.fsum((p.get(t, 0.0) - q.get(t, 0.0)) ** 2 for t in set(p) | set(q))


def normalized(losses) -> list:
    """Scale a loss series so its largest point is 1."""
    losses = list(losses)
    top = max(losses, default=0.0)
    return [x / top if top else 0.0 for x in losses]


# -- single chain ----------------------------------------------------------------------

class _Clock:
    """Wall clock that leaves out time spent in monitors."""

    def __init__(self):
        self.start = time.perf_counter()
        self.paused = 0.0

    def elapsed(self):
        return time.perf_counter() - self.start - self.paused

    def run(self, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        finally:
            self.paused += time.perf_counter() - t0


def _prepare(world, spec, proposer, query, config, chain, seed):
    spec.bind(world)
    plan = compile_query(query, world.schemas)
    rng = make_rng(config.seed if seed is None else seed, chain)
    for _ in range(config.burn_in):
        random_walk(world, spec, proposer, rng, config.steps_per_sample)
    return plan, rng


def evaluate_naive(world, spec, proposer, query, config: EvaluationConfig, chain: int = 0,
                   seed=None, monitor=None) -> MarginalEstimate:
    """Full query on every sampled world.

    ``monitor(samples, elapsed_s, estimate)`` is called after every sample
    (its own time is not counted) and may return true to stop early.
    """
    plan, rng = _prepare(world, spec, proposer, query, config, chain, seed)
    counts: dict = {}
    k = config.steps_per_sample
    clock = _Clock()
    z = 0
    for i in range(config.n_samples):
        if i:
            random_walk(world, spec, proposer, rng, k)
        for t in plan.execute(world):
            counts[t] = counts.get(t, 0) + 1
        z += 1
        if monitor is not None:
            if clock.run(monitor, z, clock.elapsed(), lambda: MarginalEstimate(dict(counts), z)):
                break
    return MarginalEstimate(counts, z)


def evaluate_incremental(world, spec, proposer, query, config: EvaluationConfig, chain: int = 0,
                         seed=None, monitor=None) -> MarginalEstimate:
    """Full query once, then answer maintenance from each walk's delta."""
    plan, rng = _prepare(world, spec, proposer, query, config, chain, seed)
    k = config.steps_per_sample
    check = config.check_every
    clock = _Clock()
    session = IncrementalQuery(plan, world)
    answer = session.answer
    closed: dict = {}
    opened = {t: 0 for t in answer}

    def snapshot(z):
        counts = dict(closed)
        for t, s in opened.items():
            counts[t] = counts.get(t, 0) + z - s
        return MarginalEstimate(counts, z)

    z = 1
    if monitor is not None and clock.run(monitor, z, clock.elapsed(), lambda: snapshot(1)):
        return snapshot(z)
    for i in range(1, config.n_samples):
        walk = random_walk(world, spec, proposer, rng, k)
        delta = walk.delta
        if delta:
            world.revert_delta(delta)
            d = session.delta(world, delta)
            world.apply_delta(delta)
            for t, c in d.removals.items():
                answer.remove(t, c)
                if t not in answer:
                    closed[t] = closed.get(t, 0) + i - opened.pop(t)
            for t, c in d.additions.items():
                if t not in answer:
                    opened[t] = i
                answer.add(t, c)
        z += 1
        if check and z % check == 0:
            session.verify(world)
        if monitor is not None and clock.run(monitor, z, clock.elapsed(), lambda: snapshot(z)):
            break
    return snapshot(z)


def evaluate(world, spec, proposer, query, config: EvaluationConfig, chain: int = 0, seed=None,
             monitor=None) -> MarginalEstimate:
    fn = evaluate_naive if config.mode == "naive" else evaluate_incremental
    return fn(world, spec, proposer, query, config, chain=chain, seed=seed, monitor=monitor)


# -- several chains ----------------------------------------------------------------------

def _run_chain(args):
    world, spec, proposer, query, config, chain, seed = args
    return evaluate(world, spec, proposer, query, config, chain=chain, seed=seed)


def evaluate_parallel(world, spec, proposer, query, config: EvaluationConfig, seeds=None,
                      workers: int = 1) -> MarginalEstimate:
    """Run ``config.chains`` chains from clones of ``world`` and pool their counts.

    Chain ``c`` uses the stream ``(seeds[c], c)`` when ``seeds`` is given,
    else ``(config.seed, c)``. Each chain gets its own copy of ``proposer``.
    ``workers > 1`` runs chains in separate processes; results do not depend
    on it.
    """
    n = config.chains
    if seeds is not None:
        seeds = list(seeds)
        if len(seeds) != n:
            raise ValueError(f"{n} chains need {n} seeds, got {len(seeds)}")
    jobs = []
    for c in range(n):
        # with explicit seeds, equal seeds mean equal streams
        stream = (seeds[c], 0) if seeds is not None else (config.seed, c)
        jobs.append((world.clone(), spec, copy.deepcopy(proposer), query, config, stream[1], stream[0]))
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    total = MarginalEstimate({}, 0)
    for r in results:
        total = total.merge(r)
    return total


# -- loss tracking ---------------------------------------------------------------------

class LossMonitor:
    """Records ``(samples, elapsed_ms, loss)`` against a fixed truth.

    With ``stop_at_half`` it stops the run once the loss has fallen to half
    the loss of the first sample and remembers that time.
    """

    def __init__(self, truth, every: int = 1, stop_at_half: bool = False):
        self.truth = _probs(truth)
        self.every = every
        self.stop_at_half = stop_at_half
        self.curve: list = []
        self.initial_loss = None
        self.half_time = None
        self.half_samples = None

    def __call__(self, samples, elapsed, estimate):
        first = self.initial_loss is None
        if not first and samples % self.every and not self.stop_at_half:
            return False
        loss = squared_error(estimate(), self.truth)
        if first:
            self.initial_loss = loss
        if first or samples % self.every == 0:
            self.curve.append((samples, int(elapsed * 1000), loss))
        if self.stop_at_half and not first and loss <= self.initial_loss / 2:
            self.half_time = elapsed
            self.half_samples = samples
            return True
        return False


# -- CSV ------------------------------------------------------------------------------

def _key(t):
    return tuple((type(v).__name__, v) for v in t)


def display_columns(columns) -> list:
    """Column names without their relation or alias prefix, unless that makes two equal."""
    short = [c.rsplit(".", 1)[-1] for c in columns]
    return short if len(set(short)) == len(short) else list(columns)


def write_marginals_csv(estimate: MarginalEstimate, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(display_columns(columns) + ["count", "z", "probability"])
        for t in sorted(estimate.counts, key=_key):
            c = estimate.counts[t]
            w.writerow(list(t) + [c, estimate.z, repr(c / estimate.z)])


def read_marginals_csv(path, types=None) -> dict:
    """``{tuple: probability}`` from a marginal CSV; ``types`` casts tuple fields."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or header[-3:] != ["count", "z", "probability"]:
            raise ValueError(f"{path}: not a marginal CSV")
        width = len(header) - 3
        for row in r:
            vals = row[:width]
            if types is not None:
                vals = [int(v) if ty == "int" else v for v, ty in zip(vals, types)]
            out[tuple(vals)] = float(row[-1])
    return out


def write_loss_csv(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "elapsed_ms", "loss"])
        for samples, ms, loss in curve:
            w.writerow([samples, ms, repr(loss)])
