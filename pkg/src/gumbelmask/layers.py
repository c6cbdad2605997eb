"""Masked layer composition and network forward passes."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor, add, conv2d, matmul, maxpool2d, mul, relu
from .errors import ConfigError, ContractError
from .masks import MaskParameters, SampledTopology, stgs_sample, threshold_mask
from .rescale import RescaleState, _factor_from

__all__ = [
    "MaskedLayer",
    "MaxPool2",
    "Flatten",
    "Network",
    "sample_topology",
]

KINDS = ("dense", "conv2d")
ACTIVATIONS = ("relu", "none")


class MaxPool2:
    """2x2 max-pool marker in a network's layer list."""

    size = 2


class Flatten:
    """Collapse trailing dims to (batch, features)."""


class MaskedLayer:
    """A frozen weight array with trainable mask and optional rescale.

    Weights (and bias, when present) never receive gradients. `mask`
    may be None for a layer exempt from masking; such layers are also
    exempt from rescaling. Dense weights are (d_in, d_out) and act on
    row batches; conv kernels are (F, C, kh, kw).
    """

    def __init__(self, kind, weights, *, bias=None, mask=None, rescale=None,
                 activation="none", stride=1, padding=0):
        if kind not in KINDS:
            raise ConfigError(f"layer kind must be one of {KINDS}; got {kind!r}")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}; got {activation!r}")
        self.kind = kind
        self.weights = Tensor(np.asarray(weights, dtype=np.float32))
        self.bias = Tensor(np.asarray(bias, dtype=np.float32)) if bias is not None else None
        if mask is not None and mask.shape != self.weights.shape:
            raise ContractError(
                f"mask shape {mask.shape} must equal weight shape {self.weights.shape}"
            )
        self.mask = mask
        self.rescale = rescale if rescale is not None else RescaleState()
        self.activation = activation
        self.stride = stride
        self.padding = padding


class Network:
    """Ordered stack of masked layers and pooling/flatten markers."""

    def __init__(self, items):
        self.items = list(items)

    @property
    def layers(self):
        return [it for it in self.items if isinstance(it, MaskedLayer)]

    @property
    def masked_layers(self):
        return [it for it in self.items if isinstance(it, MaskedLayer) and it.mask is not None]

    def mask_parameters(self):
        return [layer.mask for layer in self.masked_layers]

    def scale_parameters(self):
        return [
            layer.rescale.s
            for layer in self.layers
            if layer.rescale.strategy == "smart" and layer.rescale.s is not None
        ]

    def weight_hash(self) -> str:
        """SHA-256 over all frozen weights and biases, in layer order."""
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(layer.weights.data.tobytes())
            if layer.bias is not None:
                h.update(layer.bias.data.tobytes())
        return h.hexdigest()

    def forward(self, x, topology: SampledTopology | None = None, relaxed: bool = False) -> Tensor:
        """Run the network on a batch.

        topology=None selects the deterministic threshold masks;
        otherwise the topology must carry one mask per masked layer.
        relaxed=True substitutes the soft surrogates for the hard masks
        (used by gradient checks); dynamic rescale factors still come
        from the hard draw.
        """
        t = x if isinstance(x, Tensor) else Tensor(x)
        n_masked = len(self.masked_layers)
        if topology is not None and len(topology.hard_masks) != n_masked:
            raise ContractError(
                f"topology provides {len(topology.hard_masks)} masks "
                f"for {n_masked} masked layers"
            )
        mi = 0
        for item in self.items:
            if isinstance(item, MaxPool2):
                t = maxpool2d(t, item.size)
                continue
            if isinstance(item, Flatten):
                t = t.reshape(t.shape[0], -1)
                continue
            t, mi = self._layer_forward(item, t, topology, relaxed, mi)
        return t

    def _layer_forward(self, layer, t, topology, relaxed, mi):
        factor_mask = None
        if layer.mask is None:
            w_eff = layer.weights
        else:
            if topology is None:
                mask_t = threshold_mask(layer.mask)
                factor_mask = mask_t.data
            elif relaxed:
                mask_t = topology.soft_surrogates[mi]
                factor_mask = topology.hard_masks[mi].data
            else:
                mask_t = topology.hard_masks[mi]
                factor_mask = mask_t.data
            mi += 1
            w_eff = mul(layer.weights, mask_t)

        if layer.kind == "dense":
            pre = matmul(t, w_eff)
        else:
            pre = conv2d(t, w_eff, layer.stride, layer.padding)

        # Scalar rescale commutes with the linear map: s*(W x) == (s*W) x,
        # so it is applied to the (smaller) pre-activation. The dynamic
        # factor skips re-validation: the mask comes from our own sampler.
        if layer.mask is not None:
            if layer.rescale.strategy == "smart":
                pre = mul(pre, layer.rescale.s)
            elif layer.rescale.strategy == "dynamic":
                pre = mul(pre, np.float32(_factor_from(factor_mask, layer.rescale.reading)))

        if layer.bias is not None:
            pre = add(pre, layer.bias)
        if layer.activation == "relu":
            pre = relu(pre)
        return pre, mi


def sample_topology(net: Network, temperature, rng, *, noise=None,
                    parametrization: str = "shifted-logit") -> SampledTopology:
    """Draw one stochastic topology for a network.

    `rng` is a Generator or one Generator per masked layer; `noise`
    replays a previous draw (fresh tape nodes, same masks for unchanged
    latents).
    """
    if parametrization != "shifted-logit":
        raise ConfigError(f"unknown parametrization {parametrization!r}")
    return stgs_sample(net.mask_parameters(), temperature, rng, noise=noise)
