"""Scikit-learn style classifier that trains masks over a frozen MLP."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_array, check_is_fitted, check_X_y
from .data import LabeledDataset
from .errors import InputError
from .layers import sample_topology
from .masks import seed_stream
from .models import build_mlp
from .training import RunConfig, network_pruning_rate, train

__all__ = ["SubnetworkClassifier"]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class SubnetworkClassifier(BaseEstimator, ClassifierMixin):
    """Classifier backed by a frozen random MLP and a trained binary mask.

    The dense weights are drawn once and never updated; fit learns
    per-connection keep logits (and, optionally, one scale per layer)
    by straight-through Gumbel-softmax sampling. predict runs the
    deterministic thresholded subnetwork, or averages sampled
    subnetworks when eval_mode="averaging".
    """

    def __init__(self, hidden_sizes=(32, 32), mask_lr=50.0, momentum=0.9,
                 scale_lr=0.1, max_epochs=100, patience=100, batch_size=128,
                 temperature=1.0, rescale="smart", weights="kaiming",
                 eval_mode="threshold", avg_samples=10, mask_per="batch",
                 mask_last_layer=True, dwr_reading="keep", val_fraction=0.2,
                 random_state=0):
        self.hidden_sizes = hidden_sizes
        self.mask_lr = mask_lr
        self.momentum = momentum
        self.scale_lr = scale_lr
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.temperature = temperature
        self.rescale = rescale
        self.weights = weights
        self.eval_mode = eval_mode
        self.avg_samples = avg_samples
        self.mask_per = mask_per
        self.mask_last_layer = mask_last_layer
        self.dwr_reading = dwr_reading
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _config(self) -> RunConfig:
        return RunConfig(
            mask_lr=self.mask_lr,
            momentum=self.momentum,
            scale_lr=self.scale_lr,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            temperature=self.temperature,
            rescale=self.rescale,
            weights=self.weights,
            eval_mode=self.eval_mode,
            avg_samples=self.avg_samples,
            seed=self.random_state,
            mask_per=self.mask_per,
            mask_last_layer=self.mask_last_layer,
            dwr_reading=self.dwr_reading,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise InputError("fit needs at least two classes")
        if not 0.0 < self.val_fraction < 1.0:
            raise InputError(f"val_fraction must be in (0, 1); got {self.val_fraction}")

        cfg = self._config()
        cfg.validate()
        rng = seed_stream(self.random_state, "estimator-split")
        order = rng.permutation(len(X))
        n_val = max(int(len(X) * self.val_fraction), 1)
        val_idx, train_idx = order[:n_val], order[n_val:]
        if len(train_idx) == 0:
            raise InputError("val_fraction leaves no training data")
        train_ds = LabeledDataset(X[train_idx], y_idx[train_idx].astype(np.int64), "train")
        val_ds = LabeledDataset(X[val_idx], y_idx[val_idx].astype(np.int64), "val")

        sizes = [X.shape[1], *map(int, self.hidden_sizes), len(self.classes_)]
        net = build_mlp(sizes, self.random_state, **cfg.network_options())
        record = train(net, train_ds, val_ds, cfg)
        record.apply_best(net)

        self.network_ = net
        self.record_ = record
        self.pruning_rate_ = network_pruning_rate(net)
        self.n_features_in_ = X.shape[1]
        return self

    def _logit_batches(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise InputError(
                f"X has {X.shape[1]} features; fit saw {self.n_features_in_}"
            )
        if self.eval_mode == "averaging":
            rng = seed_stream(self.random_state, "estimator-predict")
            probs = np.zeros((len(X), len(self.classes_)), dtype=np.float64)
            for _ in range(int(self.avg_samples)):
                topo = sample_topology(self.network_, self.temperature, rng)
                probs += _softmax(self.network_.forward(X, topo).data)
            return probs / float(self.avg_samples)
        return _softmax(self.network_.forward(X).data)

    def predict_proba(self, X):
        return self._logit_batches(X)

    def predict(self, X):
        proba = self._logit_batches(X)
        return self.classes_[proba.argmax(axis=1)]
