"""scikit-learn compatible wrappers around the functional core.

These let the fingerprint scaler, the noise injector and the MLP position
regressor drop into sklearn pipelines and model-selection utilities.  The
CLI and suite driver use the functional modules directly.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import EPS_STD, Dataset, NoiseSpec, NormStats
from .network import ModelConfig, forward, init_model
from .transfer import PowerClock, TrainConfig, train


class RssiScaler(TransformerMixin, BaseEstimator):
    """Per-feature standardization with the std clamped at EPS_STD."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), EPS_STD)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        return X * self.scale_ + self.mean_

    @property
    def norm_stats(self) -> NormStats:
        check_is_fitted(self, "mean_")
        return NormStats(self.mean_.copy(), self.scale_.copy())


class GaussianNoiseInjector(TransformerMixin, BaseEstimator):
    """Adds N(0, (nf * sigma_base)^2) to every feature cell (stateless)."""

    def __init__(self, nf=2.0, sigma_base_db=0.25, seed=0):
        self.nf = nf
        self.sigma_base_db = sigma_base_db
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        if self.nf == 0:
            return X
        rng = np.random.default_rng(self.seed)
        return X + rng.standard_normal(X.shape) * (self.nf * self.sigma_base_db)


class MlpRegressor(RegressorMixin, BaseEstimator):
    """Dense feed-forward position regressor trained with Adam or SGD.

    Inputs are expected pre-normalized (compose with RssiScaler in a
    pipeline); targets are planar coordinates in meters.
    """

    def __init__(self, hidden_sizes=(512, 256, 128, 64, 32), activation="relu",
                 optimizer="adam", learning_rate=1e-4, batch_size=64,
                 epochs=600, init_seed=0, shuffle_seed=0, val_fraction=0.1,
                 patience=None, convergence_eps=1e-4):
        self.hidden_sizes = hidden_sizes
        self.activation = activation
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.init_seed = init_seed
        self.shuffle_seed = shuffle_seed
        self.val_fraction = val_fraction
        self.patience = patience
        self.convergence_eps = convergence_eps

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("targets must be planar coordinates with shape (n, 2)")
        config = ModelConfig(X.shape[1], tuple(self.hidden_sizes), y.shape[1],
                             self.activation, self.init_seed)
        mlp = init_model(config)
        tcfg = TrainConfig(optimizer=self.optimizer, learning_rate=self.learning_rate,
                           batch_size=self.batch_size, epochs=self.epochs,
                           patience=self.patience, convergence_eps=self.convergence_eps,
                           shuffle_seed=self.shuffle_seed)
        sids = np.zeros(len(X), dtype=int)
        ds = Dataset(sids, y, X)
        # held-out slice only feeds the early-stopping rule
        n_val = max(1, int(round(self.val_fraction * len(X)))) if self.patience else 1
        val = Dataset(sids[:n_val], y[:n_val], X[:n_val])
        self.model_, self.report_ = train(mlp, ds, val, tcfg)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return forward(self.model_, X)
