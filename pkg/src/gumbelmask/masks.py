"""Stochastic binary masks: Gumbel noise, straight-through sampling, thresholding.

Two latent parametrizations are provided. The default keeps one free
logit per connection and pins the complementary class logit at zero;
the keep probability is then sigmoid(m_hat) and no log of a probability
is ever computed. The explicit log-sigmoid construction is retained for
equivalence testing against that baseline.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _stable_sigmoid, log, sigmoid, straight_through
from .errors import ConfigError, ContractError

__all__ = [
    "GUMBEL_EPS",
    "MaskParameters",
    "SampledTopology",
    "seed_stream",
    "sample_gumbel",
    "stgs_sample",
    "stgs_sample_sigmoid_param",
    "keep_probability",
    "threshold_mask",
    "pruning_rate",
]

# Uniform draws are clamped into [eps, 1-eps] so -log(-log(u)) stays finite.
GUMBEL_EPS = float(np.finfo(np.float32).eps) * 16.0


def seed_stream(master_seed: int, label: str) -> np.random.Generator:
    """Derive a named, reproducible RNG stream from one master seed."""
    digest = hashlib.sha256(label.encode("utf8")).digest()
    return np.random.default_rng(
        np.random.SeedSequence(
            [int(master_seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "little")]
        )
    )


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel(0, 1) noise as float32."""
    u = rng.random(shape)
    np.clip(u, GUMBEL_EPS, 1.0 - GUMBEL_EPS, out=u)
    return (-np.log(-np.log(u))).astype(np.float32)


class MaskParameters:
    """Latent per-connection mask values; keep probability is sigmoid(m_hat)."""

    def __init__(self, m_hat, trainable: bool = True):
        if isinstance(m_hat, Tensor):
            self.m_hat = m_hat
        else:
            self.m_hat = Tensor(np.asarray(m_hat, dtype=np.float32), requires_grad=trainable)

    @classmethod
    def constant(cls, shape, value: float = 0.0, trainable: bool = True) -> "MaskParameters":
        return cls(np.full(shape, value, dtype=np.float32), trainable=trainable)

    @property
    def shape(self):
        return self.m_hat.shape

    @property
    def trainable(self) -> bool:
        return self.m_hat.requires_grad


@dataclass
class SampledTopology:
    """One stochastic mask draw per layer.

    hard_masks hold the binary values used in the forward pass; the
    soft surrogates carry the gradient path back to the latent masks.
    seed_record stores the generator states from just before sampling,
    and noise the (g_keep, g_drop) pairs actually drawn, so a draw can
    be replayed.
    """

    hard_masks: tuple
    soft_surrogates: tuple
    seed_record: tuple = ()
    noise: tuple = field(default=(), repr=False)


def _as_mask_list(masks):
    if isinstance(masks, MaskParameters):
        return [masks]
    return list(masks)


def _draw_noise(mask_list, rng):
    """One (g_keep, g_drop) pair per mask; records generator states."""
    rngs = list(rng) if isinstance(rng, (list, tuple)) else [rng] * len(mask_list)
    if len(rngs) != len(mask_list):
        raise ContractError(
            f"got {len(rngs)} rng streams for {len(mask_list)} mask arrays"
        )
    states, noise = [], []
    for m, r in zip(mask_list, rngs):
        states.append(copy.deepcopy(r.bit_generator.state))
        g_keep = sample_gumbel(m.shape, r)
        g_drop = sample_gumbel(m.shape, r)
        noise.append((g_keep, g_drop))
    return tuple(states), tuple(noise)


def _sample(masks, temperature, rng, logit_diff_fn, noise):
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive; got {temperature}")
    mask_list = _as_mask_list(masks)
    if noise is None:
        states, noise = _draw_noise(mask_list, rng)
    else:
        states, noise = (), tuple(noise)
        if len(noise) != len(mask_list):
            raise ContractError(
                f"got {len(noise)} noise pairs for {len(mask_list)} mask arrays"
            )

    inv_t = np.float32(1.0 / temperature)
    hards, softs = [], []
    for m, (g_keep, g_drop) in zip(mask_list, noise):
        z = logit_diff_fn(m.m_hat) + (g_keep - g_drop)
        soft = sigmoid(z * inv_t)
        # Ties (z == 0) resolve to keep.
        hard = straight_through(soft, (z.data >= 0.0).astype(np.float32))
        hards.append(hard)
        softs.append(soft)
    return SampledTopology(tuple(hards), tuple(softs), states, noise)


def stgs_sample(masks, temperature, rng=None, *, logit_shift: float = 0.0, noise=None) -> SampledTopology:
    """Draw hard binary masks with a straight-through gradient.

    The two class logits are [m_hat, 0]. `logit_shift` models adding
    one constant to both of them; argmax and the two-class softmax
    depend only on the logit difference, so the shift cancels exactly
    and never enters the arithmetic. The parameter exists to make that
    invariance directly testable.

    `masks` may be a single MaskParameters or a sequence (one draw per
    array); `rng` a Generator or one Generator per array. Passing
    `noise` replays a previous draw instead of consuming `rng`.
    """
    del logit_shift  # cancels in the logit difference by construction
    return _sample(masks, temperature, rng, lambda m_hat: m_hat, noise)


def stgs_sample_sigmoid_param(masks, temperature, rng=None, *, logit_shift: float = 0.0, noise=None) -> SampledTopology:
    """Straight-through draw with explicit log-sigmoid class logits.

    Uses [log sigmoid(m_hat), log(1 - sigmoid(m_hat))], the baseline
    parametrization. Under shared noise this is equivalent to
    `stgs_sample` (the logit difference is again m_hat) but goes
    through the numerically fragile logs; kept for equivalence tests.
    """
    del logit_shift

    def diff(m_hat: Tensor) -> Tensor:
        p = sigmoid(m_hat)
        return log(p) - log(1.0 - p)

    return _sample(masks, temperature, rng, diff, noise)


def keep_probability(m: MaskParameters) -> np.ndarray:
    """Elementwise keep probability sigmoid(m_hat)."""
    return _stable_sigmoid(m.m_hat.data).astype(np.float32)


def threshold_mask(m: MaskParameters) -> Tensor:
    """Deterministic mask keeping entries whose keep probability exceeds 0.5.

    Equivalent to m_hat > 0; entries at exactly 0.5 are dropped. The
    result is a constant (no gradient path) and uses no randomness.
    """
    return Tensor((m.m_hat.data > 0.0).astype(np.float32))


def pruning_rate(mask) -> float:
    """Fraction of zero entries in a binary mask."""
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if not np.all((data == 0.0) | (data == 1.0)):
        raise ContractError("pruning_rate expects a mask of exact zeros and ones")
    return 1.0 - np.count_nonzero(data) / data.size
