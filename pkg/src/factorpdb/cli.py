"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 bad data or query, 3 resource cap.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from .errors import PdbError, StateSpaceTooLarge
from .estimator import default_proposer
from .evaluate import (
    MODES, EvaluationConfig, LossMonitor, display_columns, evaluate, evaluate_incremental,
    evaluate_parallel, read_marginals_csv, squared_error, write_loss_csv, write_marginals_csv,
)
from .factors import DEFAULT_STATE_CAP, exact_distribution
from .modelfile import load_model
from .ner import default_model_path, generate_synthetic_corpus
from .query import compile_query
from .tokens import ingest_tokens, token_world
from .world import read_snapshot, write_snapshot

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CAP = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _sizes(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}") from None
    if not sizes or any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError(f"sizes must be positive integers, got {text!r}")
    return sizes


def _load_world(args):
    if args.store:
        return read_snapshot(args.store)
    return ingest_tokens(args.corpus)


def _load_model(args):
    return load_model(args.model or default_model_path())


def _add_world_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--store", help="snapshot written by 'ingest'")
    src.add_argument("--corpus", help="token corpus TSV")
    p.add_argument("--model", help="model file (default: the shipped skip-chain model)")
    p.add_argument("--query", required=True, help="query text")


# -- commands -------------------------------------------------------------------------------

def cmd_ingest(args):
    world = ingest_tokens(args.corpus)
    write_snapshot(world, args.store)
    print(f"{len(world.rows['TOKEN'])} tokens -> {args.store}")
    return EXIT_OK


def cmd_generate(args):
    records = generate_synthetic_corpus(args.docs, args.tokens_per_doc, seed=args.seed, path=args.out)
    print(f"{len(records)} tokens in {args.docs} documents -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    world = _load_world(args)
    spec = _load_model(args)
    spec.bind(world)
    plan = compile_query(args.query, world.schemas)
    config = EvaluationConfig(args.samples, args.steps_per_sample, args.chains, args.seed, args.mode,
                              args.burn_in, args.check_every)
    proposer = default_proposer(world, spec)
    monitor = None
    if args.truth:
        truth = read_marginals_csv(args.truth, plan.root.types)
        monitor = LossMonitor(truth, every=args.loss_every)
    if args.chains == 1:
        estimate = evaluate(world, spec, proposer, plan, config, monitor=monitor)
    else:
        t0 = time.perf_counter()
        estimate = evaluate_parallel(world, spec, proposer, plan, config, workers=args.workers)
        if monitor is not None:
            monitor.curve = [(estimate.z, int((time.perf_counter() - t0) * 1000),
                              squared_error(estimate, monitor.truth))]
    write_marginals_csv(estimate, plan.columns, args.out)
    if monitor is not None:
        loss_out = args.loss_out or str(Path(args.out).with_suffix(".loss.csv"))
        write_loss_csv(monitor.curve, loss_out)
    print(f"{len(estimate.counts)} tuples, z={estimate.z} -> {args.out}")
    return EXIT_OK


def cmd_oracle(args):
    world = _load_world(args)
    spec = _load_model(args)
    dist = exact_distribution(spec, world, cap=args.cap)
    plan = compile_query(args.query, world.schemas)
    probs = dist.query_marginals(plan)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(display_columns(plan.columns) + ["count", "z", "probability"])
        for t in sorted(probs, key=lambda t: tuple((type(v).__name__, v) for v in t)):
            w.writerow(list(t) + ["", "", repr(probs[t])])
    print(f"{len(dist)} possible worlds, {len(probs)} tuples -> {args.out}")
    return EXIT_OK


def run_benchmark(sizes, query, steps_per_sample, max_samples, truth_samples, tokens_per_doc, seed,
                  spec=None, log=None):
    """Time-to-half-loss per corpus size and mode.

    For each size a seeded corpus is generated and a long incremental run
    from an independent stream gives the reference marginals. Both modes
    then sample from the same seed until the loss falls to half the loss of
    the first (single-world) sample.
    """
    spec = spec or load_model(default_model_path())
    rows = []
    for size in sizes:
        docs = max(1, size // tokens_per_doc)
        records = generate_synthetic_corpus(docs, tokens_per_doc, seed=seed)
        base = token_world(records)
        spec.bind(base)
        plan = compile_query(query, base.schemas)
        truth_cfg = EvaluationConfig(truth_samples, steps_per_sample, seed=seed + 1)
        truth = evaluate_incremental(base.clone(), spec, default_proposer(base, spec), plan, truth_cfg)
        for mode in MODES:
            cfg = EvaluationConfig(max_samples, steps_per_sample, seed=seed, mode=mode)
            mon = LossMonitor(truth, stop_at_half=True)
            evaluate(base.clone(), spec, default_proposer(base, spec), plan, cfg, monitor=mon)
            half_ms = "" if mon.half_time is None else int(mon.half_time * 1000)
            row = (len(records), mode, half_ms, mon.half_samples or "", mon.initial_loss)
            rows.append(row)
            if log is not None:
                log(row)
    return rows


def cmd_benchmark(args):
    spec = _load_model(args)
    rows = run_benchmark(args.sizes, args.query, args.steps_per_sample, args.max_samples,
                         args.truth_samples, args.tokens_per_doc, args.seed, spec,
                         log=lambda r: print("\t".join(str(x) for x in r), file=sys.stderr))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tuples", "mode", "time_to_half_ms", "samples_to_half", "initial_loss"])
        for r in rows:
            w.writerow(list(r[:4]) + [repr(r[4])])
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="factorpdb", description="Sampling-based probabilistic database queries.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("ingest", help="load a token corpus into a snapshot")
    q.add_argument("corpus")
    q.add_argument("store")
    q.set_defaults(func=cmd_ingest)

    q = sub.add_parser("generate", help="write a seeded synthetic token corpus")
    q.add_argument("--docs", type=int, required=True)
    q.add_argument("--tokens-per-doc", type=int, default=100)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_generate)

    q = sub.add_parser("evaluate", help="estimate tuple marginals by sampling")
    _add_world_args(q)
    q.add_argument("--mode", choices=MODES, default="incremental")
    q.add_argument("--samples", type=_positive, default=100)
    q.add_argument("--steps-per-sample", type=_positive, default=10_000)
    q.add_argument("--chains", type=_positive, default=1)
    q.add_argument("--workers", type=_positive, default=1, help="processes for --chains > 1")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--burn-in", type=int, default=0)
    q.add_argument("--check-every", type=int, default=0,
                   help="compare the maintained answer with a full run every N samples")
    q.add_argument("--truth", help="reference marginal CSV; enables the loss curve")
    q.add_argument("--loss-every", type=_positive, default=1)
    q.add_argument("--loss-out", help="loss curve CSV (default: OUT with .loss.csv)")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("oracle", help="exact marginals by enumerating every world")
    _add_world_args(q)
    q.add_argument("--cap", type=_positive, default=DEFAULT_STATE_CAP)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_oracle)

    q = sub.add_parser("benchmark", help="time-to-half-loss, naive versus incremental")
    q.add_argument("--sizes", type=_sizes, default=[1000, 10_000, 100_000])
    q.add_argument("--query", default="SELECT STRING FROM TOKEN WHERE LABEL='B-PER'")
    q.add_argument("--model")
    q.add_argument("--steps-per-sample", type=_positive, default=10_000)
    q.add_argument("--max-samples", type=_positive, default=10_000)
    q.add_argument("--truth-samples", type=_positive, default=20_000)
    q.add_argument("--tokens-per-doc", type=_positive, default=100)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StateSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (PdbError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
