"""scikit-learn style front end.

``fit`` takes a world (or a corpus path) and samples it; the fitted
estimator answers ``predict_proba`` with tuple marginals. Hyperparameters
are plain constructor arguments, so ``get_params``/``set_params``/``clone``
work as usual.
"""
from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluate import EvaluationConfig, evaluate_parallel, squared_error
from .factors import FactorGraphSpec
from .mcmc import UniformFlipProposer
from .modelfile import load_model
from .ner import SkipChainProposer, default_model_path
from .query import compile_query
from .tokens import TOKEN, ingest_tokens
from .world import World


def default_proposer(world, spec):
    """The batch label flipper for TOKEN label models, a uniform flip otherwise."""
    if set(spec.hidden) == {(TOKEN, "LABEL")} and TOKEN in world.schemas:
        return SkipChainProposer()
    return UniformFlipProposer()


class MarginalQueryEstimator(BaseEstimator):
    """Estimate ``Pr[t in Q(W)]`` for every answer tuple ``t`` of ``query``.

    ``model`` is a :class:`FactorGraphSpec`, a model file path, or None for
    the shipped skip-chain model.
    """

    def __init__(self, query, model=None, n_samples=100, steps_per_sample=10_000, chains=1, seed=0,
                 mode="incremental", burn_in=0):
        self.query = query
        self.model = model
        self.n_samples = n_samples
        self.steps_per_sample = steps_per_sample
        self.chains = chains
        self.seed = seed
        self.mode = mode
        self.burn_in = burn_in

    def _spec(self):
        if isinstance(self.model, FactorGraphSpec):
            return self.model
        return load_model(default_model_path() if self.model is None else self.model)

    def fit(self, X, y=None):
        world = X if isinstance(X, World) else ingest_tokens(Path(X))
        spec = self._spec()
        config = EvaluationConfig(self.n_samples, self.steps_per_sample, self.chains, self.seed,
                                  self.mode, self.burn_in)
        spec.bind(world)
        self.columns_ = compile_query(self.query, world.schemas).columns
        self.estimate_ = evaluate_parallel(world, spec, default_proposer(world, spec), self.query, config)
        self.n_samples_seen_ = self.estimate_.z
        return self

    def predict_proba(self, X=None):
        check_is_fitted(self, "estimate_")
        return self.estimate_.probabilities()

    def score(self, X, y=None):
        """Negative squared error against the truth marginals ``X``."""
        return -squared_error(self.predict_proba(), X)
