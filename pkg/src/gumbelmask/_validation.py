"""Input validation helpers for the public estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .errors import InputError

__all__ = ["check_array", "check_X_y", "check_is_fitted"]


def check_array(X, *, ndim: int = 2, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-dimensional; got shape {X.shape}")
    if X.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains NaN or Inf")
    return X


def check_X_y(X, y):
    X = check_array(X)
    y = np.asarray(y)
    if y.ndim != 1:
        raise InputError(f"y must be 1-dimensional; got shape {y.shape}")
    if len(y) != len(X):
        raise InputError(f"X and y disagree on length: {len(X)} vs {len(y)}")
    return X, y


def check_is_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first"
        )
