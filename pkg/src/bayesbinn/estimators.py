"""scikit-learn style estimators wrapping the binary-weight training loop.

Both estimators follow the sklearn contract: all constructor arguments are
stored verbatim (so `get_params` / `clone` work), validation and training
happen in `fit`, and fitted attributes carry a trailing underscore.

    clf = BinaryMLPClassifier(hidden_layer_sizes=(64, 64), epochs=300)
    clf.fit(X, y).predict(X)

`optimizer` selects the update rule: "bayesbinn" (posterior over binary
weights; `mc_test` > 0 averages predictions over posterior samples),
"ste_adam" (straight-through Adam), "bop" (hysteresis sign flips), or "adam"
(full-precision baseline).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from .datasets import Dataset
from .linalg import as_matrix
from .network import Activation, BatchNorm, Dropout, FullyConnected, NetworkSpec
from .optimizers import BayesBiNNState, Constant, Cosine, Geometric, StepDecay
from .predictor import (
    evaluate_accuracy,
    predict_mean,
    predict_mean_outputs,
    predict_mode,
)
from .train import eval_weights, fit_network, init_state
from .config import ExperimentConfig

__all__ = ["BinaryMLPClassifier", "BinaryMLPRegressor"]


class _BinaryMLPBase(BaseEstimator):
    def __init__(
        self,
        hidden_layer_sizes=(64, 64),
        activation="tanh",
        dropout=0.0,
        batch_norm="none",
        optimizer="bayesbinn",
        epochs=300,
        batch_size=100,
        lr=1e-3,
        lr_end=None,
        lr_schedule="constant",
        lr_decay=0.1,
        lr_interval=100,
        temperature=1.0,
        mc_train=1,
        mc_test=0,
        init_scale=10.0,
        momentum=0.0,
        threshold=1e-8,
        momentum_rate=1e-5,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.dropout = dropout
        self.batch_norm = batch_norm
        self.optimizer = optimizer
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_end = lr_end
        self.lr_schedule = lr_schedule
        self.lr_decay = lr_decay
        self.lr_interval = lr_interval
        self.temperature = temperature
        self.mc_train = mc_train
        self.mc_test = mc_test
        self.init_scale = init_scale
        self.momentum = momentum
        self.threshold = threshold
        self.momentum_rate = momentum_rate
        self.random_state = random_state

    # -- plumbing ---------------------------------------------------------

    def _build_spec(self, n_in: int, n_out: int, loss: str) -> NetworkSpec:
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"activation must be 'tanh' or 'relu', got {self.activation!r}")
        if self.batch_norm not in ("none", "hidden", "output", "both"):
            raise ValueError(
                f"batch_norm must be one of none/hidden/output/both, got {self.batch_norm!r}"
            )
        layers = []
        width = n_in
        for h in self.hidden_layer_sizes:
            if self.dropout > 0.0:
                layers.append(Dropout(self.dropout))
            layers.append(FullyConnected(width, int(h)))
            layers.append(Activation(self.activation))
            if self.batch_norm in ("hidden", "both"):
                layers.append(BatchNorm())
            width = int(h)
        if self.dropout > 0.0:
            layers.append(Dropout(self.dropout))
        layers.append(FullyConnected(width, n_out))
        if self.batch_norm in ("output", "both"):
            layers.append(BatchNorm())
        return NetworkSpec(tuple(layers), loss)

    def _schedule(self):
        if self.lr_schedule == "constant":
            return Constant(self.lr)
        if self.lr_schedule == "cosine":
            return Cosine(self.lr, self._lr_end(), self.epochs)
        if self.lr_schedule == "geometric":
            return Geometric(self.lr, self._lr_end(), self.epochs)
        if self.lr_schedule == "step":
            return StepDecay(self.lr, self.lr_decay, self.lr_interval)
        raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def _lr_end(self):
        if self.lr_end is None:
            raise ValueError(f"lr_schedule={self.lr_schedule!r} needs lr_end")
        return self.lr_end

    def _config_values(self) -> ExperimentConfig:
        """Mirror the estimator params into the config shape init_state expects."""
        values = {
            "experiment.seed": int(self.random_state),
            "optimizer.kind": self.optimizer,
            "optimizer.tau": float(self.temperature),
            "optimizer.mc_train": int(self.mc_train),
            "optimizer.init_scale": float(self.init_scale),
            "optimizer.momentum": float(self.momentum),
            "optimizer.beta1": 0.9,
            "optimizer.beta2": 0.999,
            "optimizer.adam_eps": 1e-8,
            "optimizer.grad_clip": True,
            "optimizer.weight_clip": True,
            "optimizer.threshold": float(self.threshold),
            "optimizer.momentum_rate": float(self.momentum_rate),
            "optimizer.threshold_decay": self.lr_decay if self.lr_schedule == "step" else 1.0,
            "optimizer.threshold_interval": int(self.lr_interval),
        }
        cfg = ExperimentConfig(values)
        cfg.schedule = lambda total: self._schedule()  # estimator owns the schedule
        return cfg

    def _fit_core(self, X, y, loss: str, n_out: int):
        if self.optimizer not in ("bayesbinn", "ste_adam", "bop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        ds = Dataset(X, y)
        spec = self._build_spec(X.shape[1], n_out, loss)
        state = init_state(self._config_values(), spec, ds.n, self.epochs)
        bn = fit_network(spec, state, ds, int(self.epochs), int(self.batch_size),
                         int(self.random_state))
        self.spec_ = spec
        self.state_ = state
        self.bn_ = bn
        self.weights_ = eval_weights(state)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "spec_"):
            raise NotFittedError(
                f"This {type(self).__name__} instance is not fitted yet; "
                "call 'fit' first."
            )

    def _posterior(self):
        return self.state_.lam if isinstance(self.state_, BayesBiNNState) else None

    def _validate_X(self, X) -> np.ndarray:
        X = as_matrix(X, "X")
        self._check_fitted()
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but this model was fitted with "
                f"{self.n_features_in_}"
            )
        return X


class BinaryMLPClassifier(ClassifierMixin, _BinaryMLPBase):
    """Multi-class classifier with weights constrained to -1/+1."""

    def fit(self, X, y):
        X = as_matrix(X, "X")
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(f"y must be 1-D with {X.shape[0]} entries, got {y.shape}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("classifier needs at least 2 classes")
        return self._fit_core(X, y_idx.astype(np.int64), "cross_entropy",
                              self.classes_.shape[0])

    def predict_proba(self, X):
        X = self._validate_X(X)
        lam = self._posterior()
        if lam is not None and self.mc_test > 0:
            return predict_mean(lam, self.spec_, X, int(self.mc_test),
                                int(self.random_state) + 7919, self.bn_)
        if lam is not None:
            return predict_mode(lam, self.spec_, X, self.bn_)
        from .linalg import softmax_rows
        from .network import forward

        out, _ = forward(self.spec_, self.weights_, X, mode="eval", bn=self.bn_)
        return softmax_rows(out)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class BinaryMLPRegressor(RegressorMixin, _BinaryMLPBase):
    """Single- or multi-output regressor with weights constrained to -1/+1."""

    def fit(self, X, y):
        X = as_matrix(X, "X")
        y = np.asarray(y, dtype=np.float64)
        self._y_was_1d = y.ndim == 1
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if y.ndim != 2 or y.shape[0] != X.shape[0]:
            raise ValueError(f"y must have {X.shape[0]} rows, got shape {y.shape}")
        return self._fit_core(X, y, "mse", y.shape[1])

    def predict(self, X, return_std: bool = False):
        X = self._validate_X(X)
        lam = self._posterior()
        if lam is not None and self.mc_test > 0:
            mean, var = predict_mean_outputs(lam, self.spec_, X, int(self.mc_test),
                                             int(self.random_state) + 7919, self.bn_)
            std = np.sqrt(var)
        else:
            if lam is not None:
                mean = predict_mode(lam, self.spec_, X, self.bn_)
            else:
                from .network import forward

                mean, _ = forward(self.spec_, self.weights_, X, mode="eval", bn=self.bn_)
            std = np.zeros_like(mean)
        if self._y_was_1d:
            mean, std = mean.ravel(), std.ravel()
        return (mean, std) if return_std else mean
