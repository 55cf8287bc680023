"""Scikit-learn style front end.

Arrays are (n_samples, seq_len, channels) rather than sklearn's usual 2-D
convention, matching how sequence libraries extend the estimator API. Both
classes are thin facades over the functional modules, so they compose with
``sklearn.base.clone``, ``get_params``/``set_params``, and pipelines that
tolerate 3-D X.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .flow import FlowModel, forward_model, inverse_model_serial
from .metrics import DEFAULT_DOMINANCE_RATIO, DEFAULT_METRIC_BATCH, metric_pass, synthetic_data_batch
from .model_io import load_model
from .samplers import DEFAULT_EBOUND, sample_model
from .strategy import Strategy, parse_strategy
from .validation import as_tensor3


class BlockFlowTransformer(BaseEstimator, TransformerMixin):
    """Exact bijection view of a flow model.

    ``transform`` maps data to noise (the parallel forward pass);
    ``inverse_transform`` maps noise back to data with the exact serial
    loop. ``fit`` only validates and resolves the model.
    """

    def __init__(self, model=None, model_path=None):
        self.model = model
        self.model_path = model_path

    def _resolve(self) -> FlowModel:
        if self.model is not None:
            return self.model
        if self.model_path is not None:
            return load_model(self.model_path)
        raise ValueError("either model or model_path must be set")

    def fit(self, X=None, y=None):
        model = self._resolve()
        model.validate()
        self.model_ = model
        self.n_channels_ = model.config.channels if model.config else model.blocks[0].channels
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_tensor3(X, channels=self.n_channels_, name="X")
        return forward_model(self.model_, X)

    def inverse_transform(self, Z) -> np.ndarray:
        self._check_fitted()
        Z = as_tensor3(Z, channels=self.n_channels_, name="Z")
        return inverse_model_serial(self.model_, Z)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("call fit() before transforming")


class GSJacobiSampler(BaseEstimator, TransformerMixin):
    """Strategy-driven accelerated sampler.

    ``fit(X)`` runs the metric pass on a reference data batch (or on a
    self-manufactured one when X is None), fixing each block's init mode
    and the tough-block stack. ``transform(Z)`` then inverts noise into
    samples under the strategy; ``inverse_transform(X)`` is the exact
    forward pass back to noise.

    When ``strategy`` is None the fitted plan runs the selected tough
    blocks exactly (one module per position) and gives every other block
    the Else budget; pass an explicit ``[Stack-GS-J-Else]`` string to
    override.
    """

    def __init__(self, model=None, model_path=None, strategy=None,
                 dominance_ratio=DEFAULT_DOMINANCE_RATIO, else_budget=10,
                 ebound=DEFAULT_EBOUND, norm="spectral",
                 metric_batch=DEFAULT_METRIC_BATCH, seq_len=None,
                 random_state=0):
        self.model = model
        self.model_path = model_path
        self.strategy = strategy
        self.dominance_ratio = dominance_ratio
        self.else_budget = else_budget
        self.ebound = ebound
        self.norm = norm
        self.metric_batch = metric_batch
        self.seq_len = seq_len
        self.random_state = random_state

    def _resolve(self) -> FlowModel:
        if self.model is not None:
            return self.model
        if self.model_path is not None:
            return load_model(self.model_path)
        raise ValueError("either model or model_path must be set")

    def fit(self, X=None, y=None):
        model = self._resolve()
        model.validate()
        self.model_ = model
        self.n_channels_ = model.config.channels if model.config else model.blocks[0].channels
        if X is None:
            X = synthetic_data_batch(model, self.metric_batch,
                                     seq_len=self.seq_len,
                                     seed=self.random_state)
        X = as_tensor3(X, channels=self.n_channels_, name="X")
        self.report_ = metric_pass(model, X,
                                   dominance_ratio=self.dominance_ratio,
                                   norm=self.norm)
        self.stack_ = self.report_.stack
        return self

    def _strategy_for(self, t_len: int) -> Strategy:
        if self.strategy is not None:
            if isinstance(self.strategy, Strategy):
                return self.strategy
            return parse_strategy(self.strategy)
        if self.stack_:
            n = len(self.stack_)
            return Strategy(stack=tuple(self.stack_), gs=(t_len,) * n,
                            j=(1,) * n, else_j=self.else_budget)
        return Strategy(stack=(0,), gs=(1,), j=(self.else_budget,),
                        else_j=self.else_budget)

    def transform(self, Z) -> np.ndarray:
        self._check_fitted()
        Z = as_tensor3(Z, channels=self.n_channels_, name="Z")
        strategy = self._strategy_for(Z.shape[1])
        x, self.trace_ = sample_model(self.model_, Z, strategy,
                                      report=self.report_, ebound=self.ebound)
        return x

    def inverse_transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_tensor3(X, channels=self.n_channels_, name="X")
        return forward_model(self.model_, X)

    def sample(self, n_samples: int, seq_len: int | None = None,
               seed: int | None = None) -> np.ndarray:
        """Draw seeded standard-normal noise and transform it."""
        self._check_fitted()
        t_len = seq_len or self.seq_len or (
            self.model_.config.seq_len if self.model_.config else 64)
        rng = np.random.default_rng(self.random_state if seed is None else seed)
        z = rng.standard_normal((n_samples, t_len, self.n_channels_))
        return self.transform(z)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("call fit() before sampling")
