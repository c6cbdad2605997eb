"""Per-layer weight adaptation: learned scale, dynamic rescale, signed constant."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, mul
from .errors import ConfigError, ContractError
from .masks import pruning_rate

__all__ = [
    "RescaleState",
    "apply_rescale",
    "dwr_factor",
    "signed_constant_transform",
]

STRATEGIES = ("none", "smart", "dynamic")
READINGS = ("keep", "prune")


@dataclass
class RescaleState:
    """Scaling applied to a layer's masked weights.

    none: no scaling. smart: a learned scalar `s` (one gradient slot
    per layer). dynamic: `s` is recomputed from each sampled mask and
    never trained; `reading` selects whether the factor inverts the
    keep rate (default) or the literal pruning rate.
    """

    strategy: str = "none"
    s: Tensor | None = None
    reading: str = "keep"

    @classmethod
    def create(cls, strategy: str, *, init: float | None = None,
               keep_prob_init: float = 0.5, reading: str = "keep") -> "RescaleState":
        if strategy not in STRATEGIES:
            raise ConfigError(f"rescale strategy must be one of {STRATEGIES}; got {strategy!r}")
        if reading not in READINGS:
            raise ConfigError(f"dwr reading must be one of {READINGS}; got {reading!r}")
        s = None
        if strategy == "smart":
            # Default start matches the dynamic factor at the initial keep
            # probability, so the forward magnitudes are unchanged at step one.
            value = init if init is not None else 1.0 / keep_prob_init
            s = Tensor(np.float32(value), requires_grad=True)
        return cls(strategy=strategy, s=s, reading=reading)


def _factor_from(data: np.ndarray, reading: str) -> float:
    """Factor for a mask already known to be binary (hot path, no validation)."""
    keep = np.count_nonzero(data) / data.size
    rate = keep if reading == "keep" else 1.0 - keep
    if rate == 0.0:
        warnings.warn(
            f"dynamic rescale saw a degenerate mask ({reading} rate 0); "
            f"factor clamped to {data.size}",
            RuntimeWarning,
            stacklevel=3,
        )
    return 1.0 / max(rate, 1.0 / data.size)


def dwr_factor(mask, reading: str = "keep") -> float:
    """Rescale factor computed from an observed binary mask.

    reading="keep" returns 1 / keep_rate; reading="prune" the literal
    1 / pruning_rate. Either way the rate is floored at one weight out
    of the layer so an extreme mask cannot divide by zero.
    """
    if reading not in READINGS:
        raise ConfigError(f"dwr reading must be one of {READINGS}; got {reading!r}")
    pruning_rate(mask)  # validates binary entries
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return _factor_from(data, reading)


def apply_rescale(state: RescaleState, masked_w: Tensor, mask=None) -> Tensor:
    """Scale already-masked weights according to `state`.

    smart keeps `s` on the tape (dL/ds accumulates); dynamic multiplies
    by a constant derived from `mask`; none returns the input untouched.
    """
    if state.strategy == "none":
        return masked_w
    if state.strategy == "smart":
        return mul(masked_w, state.s)
    if state.strategy == "dynamic":
        if mask is None:
            raise ContractError("dynamic rescale needs the sampled mask")
        return mul(masked_w, np.float32(dwr_factor(mask, state.reading)))
    raise ConfigError(f"unknown rescale strategy {state.strategy!r}")


def signed_constant_transform(w) -> np.ndarray:
    """Replace each weight by its sign times the layer's standard deviation.

    The std is the population value over all entries; zeros map to
    +std. A constant layer (std 0) transforms to zeros with a warning.
    """
    w = np.asarray(w, dtype=np.float32)
    std = float(w.std())
    if std == 0.0:
        warnings.warn(
            "signed constant transform on a zero-variance layer returns zeros",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.zeros_like(w)
    return np.where(w < 0, np.float32(-std), np.float32(std))
