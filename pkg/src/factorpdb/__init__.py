"""Probabilistic database engine: one stored world, a factor graph over worlds,
Metropolis-Hastings sampling and incrementally maintained query answers."""
from .errors import (
    ContractViolation, CorruptionError, DomainError, FormatError, ParseError, PdbError, QueryError,
    QueryValidationError, StateSpaceTooLarge,
)
from .evaluate import (
    EvaluationConfig, MarginalEstimate, evaluate, evaluate_incremental, evaluate_naive,
    evaluate_parallel, normalized, squared_error,
)
from .factors import (
    ChainTemplate, FactorGraphSpec, FactorTemplate, SkipTemplate, UnaryTemplate, exact_distribution,
    factor_log_score, log_score_ratio, touched_factors, world_log_score,
)
from .incremental import IncrementalQuery, delta_aggregate, delta_execute
from .mcmc import Proposal, UniformFlipProposer, WalkResult, chain_marginals, make_rng, mh_step, random_walk
from .modelfile import load_model, parse_model
from .query import AnswerDelta, MultisetAnswer, compile_query, execute, maintain, parse_query, validate
from .world import (
    Attribute, Delta, Domain, Schema, VariableRef, World, apply_delta, clone_world, compose_deltas,
    read_snapshot, revert_delta, update_field, write_snapshot,
)

__version__ = "0.1.0"
