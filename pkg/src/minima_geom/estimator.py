"""Scikit-learn estimator wrapper around the MLP training engine.

Thin adapter: hyperparameters in, fitted flat parameter vector out, with
the usual fit/predict/score surface so the networks drop into sklearn
pipelines and model-selection tooling. Measurement (sharpness, studies,
landscapes) stays in the functional modules; ``params_`` hands the fitted
network to them.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .mlp import TOY_WIDTHS, MLPParams, forward, kaiming_init
from .optim import OptimizerSpec
from .training import RunBatch

__all__ = ["MLPRegressor2D"]


class MLPRegressor2D(BaseEstimator, RegressorMixin):
    """Small fully-connected ReLU regressor trained full-batch.

    Parameters mirror OptimizerSpec; ``sam_rho=None`` disables the
    two-step sharpness-aware update. Training runs exactly ``epochs``
    full-batch steps from a seeded Kaiming-uniform init.
    """

    def __init__(self, widths=TOY_WIDTHS, optimizer: str = "adam",
                 learning_rate: float = 1e-3, momentum: float = 0.9,
                 sam_rho: Optional[float] = None, weight_decay: float = 0.0,
                 epochs: int = 1000, random_state: int = 0, dtype: str = "float32"):
        self.widths = widths
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.sam_rho = sam_rho
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state
        self.dtype = dtype

    def _spec(self) -> OptimizerSpec:
        return OptimizerSpec(
            kind=self.optimizer,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            sam_rho=self.sam_rho,
            weight_decay=self.weight_decay,
        ).validate()

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        widths = tuple(int(w) for w in self.widths)
        if X.shape[1] != widths[0]:
            raise ValueError(
                f"X has {X.shape[1]} features, network expects {widths[0]}")
        if int(self.epochs) < 0:
            raise ValueError("epochs must be >= 0")
        spec = self._spec()
        init = kaiming_init(widths, np.random.default_rng(self.random_state))
        batch = RunBatch(widths, init.flat, X[None], y[None], spec,
                         dtype=np.dtype(self.dtype))
        curve = []
        for _ in range(int(self.epochs)):
            curve.append(float(batch.evaluate()[0]))
            batch.step()
        curve.append(float(batch.evaluate()[0]))
        self.params_: MLPParams = batch.extract(0)
        self.n_features_in_ = widths[0]
        self.loss_curve_ = np.array(curve)
        self.train_loss_ = curve[-1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, network expects {self.n_features_in_}")
        pred = forward(self.params_.flat, self.params_.widths, X)
        return pred[:, 0] if pred.shape[-1] == 1 else pred
