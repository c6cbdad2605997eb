"""Reference architectures: frozen-weight MLPs and the conv2/4/6 family."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import Flatten, MaskedLayer, MaxPool2, Network
from .masks import MaskParameters, _stable_sigmoid, seed_stream
from .rescale import RescaleState, signed_constant_transform

__all__ = [
    "WEIGHT_SCHEMES",
    "CONV_VARIANTS",
    "init_weights",
    "build_mlp",
    "build_conv_family",
]

WEIGHT_SCHEMES = ("kaiming", "kaiming-scaled", "signed-constant")

# The classic small VGG-style CIFAR stacks from the lottery-ticket
# literature (Frankle & Carbin): pairs of 3x3/pad-1 convolutions followed
# by 2x2 max-pools, then dense 256 -> 256 -> classes. conv2 stops after the
# first pair; conv4 and conv6 add 128- and 256-channel pairs.
CONV_VARIANTS = {
    "conv2": (64, 64, "pool"),
    "conv4": (64, 64, "pool", 128, 128, "pool"),
    "conv6": (64, 64, "pool", 128, 128, "pool", 256, 256, "pool"),
}


def init_weights(shape, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """Draw a frozen weight array.

    kaiming: normal with std sqrt(2 / fan_in). kaiming-scaled: the same
    divided by sqrt(0.5), compensating an expected keep rate of one
    half. signed-constant: a kaiming draw collapsed to sign(w) times the
    layer std. fan_in is shape[0] for dense (d_in, d_out) weights and
    C*kh*kw for conv kernels (F, C, kh, kw).
    """
    if scheme not in WEIGHT_SCHEMES:
        raise ConfigError(f"weight scheme must be one of {WEIGHT_SCHEMES}; got {scheme!r}")
    shape = tuple(int(s) for s in shape)
    fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
    std = math.sqrt(2.0 / fan_in)
    if scheme == "kaiming-scaled":
        std /= math.sqrt(0.5)
    w = rng.normal(0.0, std, size=shape).astype(np.float32)
    if scheme == "signed-constant":
        w = signed_constant_transform(w)
    return w


def _layer_options(opts: dict) -> dict:
    merged = {
        "weights": "kaiming",
        "rescale": "none",
        "bias": False,
        "mask_last_layer": True,
        "sr_init": None,
        "m_hat_init": 0.0,
        "dwr_reading": "keep",
    }
    unknown = set(opts) - set(merged)
    if unknown:
        raise ConfigError(f"unknown network options: {sorted(unknown)}")
    merged.update(opts)
    return merged


def _make_layer(kind, shape, rng, opts, activation, masked, **layer_kw):
    w = init_weights(shape, opts["weights"], rng)
    bias = None
    if opts["bias"]:
        n_out = shape[1] if kind == "dense" else shape[0]
        bias_shape = (n_out,) if kind == "dense" else (n_out, 1, 1)
        bias = np.zeros(bias_shape, dtype=np.float32)
    mask = None
    rescale = RescaleState()
    if masked:
        mask = MaskParameters.constant(shape, opts["m_hat_init"])
        rescale = RescaleState.create(
            opts["rescale"],
            init=opts["sr_init"],
            keep_prob_init=float(_stable_sigmoid(np.float64(opts["m_hat_init"]))),
            reading=opts["dwr_reading"],
        )
    return MaskedLayer(
        kind, w, bias=bias, mask=mask, rescale=rescale, activation=activation, **layer_kw
    )


def build_mlp(layer_sizes, init_seed: int, **opts) -> Network:
    """Fully-connected masked network with ReLU between layers.

    layer_sizes runs input -> hidden... -> classes; weights are frozen
    at initialization. Options: weights, rescale, bias, mask_last_layer,
    sr_init, m_hat_init, dwr_reading.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError(f"an MLP needs at least two layer sizes; got {sizes}")
    opts = _layer_options(opts)
    rng = seed_stream(init_seed, "init")
    items = []
    for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        items.append(
            _make_layer(
                "dense",
                (d_in, d_out),
                rng,
                opts,
                activation="none" if last else "relu",
                masked=opts["mask_last_layer"] or not last,
            )
        )
    return Network(items)


def build_conv_family(variant: str, n_classes: int, init_seed: int, *,
                      input_shape=(3, 32, 32), **opts) -> Network:
    """Build conv2/conv4/conv6 for `input_shape` images.

    All convolutions are 3x3, stride 1, pad 1, ReLU; pools are 2x2. The
    first dense layer's input size is propagated from `input_shape`,
    not hard-coded.
    """
    if variant not in CONV_VARIANTS:
        raise ConfigError(f"variant must be one of {sorted(CONV_VARIANTS)}; got {variant!r}")
    opts = _layer_options(opts)
    rng = seed_stream(init_seed, "init")
    c, h, w = (int(v) for v in input_shape)

    items = []
    for step in CONV_VARIANTS[variant]:
        if step == "pool":
            if h % 2 or w % 2:
                raise DimensionError(
                    f"input {input_shape} does not survive the {variant} pooling stack"
                )
            items.append(MaxPool2())
            h, w = h // 2, w // 2
            continue
        items.append(
            _make_layer(
                "conv2d", (step, c, 3, 3), rng, opts,
                activation="relu", masked=True, stride=1, padding=1,
            )
        )
        c = step

    items.append(Flatten())
    sizes = (c * h * w, 256, 256, int(n_classes))
    for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        items.append(
            _make_layer(
                "dense", (d_in, d_out), rng, opts,
                activation="none" if last else "relu",
                masked=opts["mask_last_layer"] or not last,
            )
        )
    return Network(items)
