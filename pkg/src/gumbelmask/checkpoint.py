"""Checkpoint save/load for masked networks (container format)."""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor
from .container import pack_array, read_container, unpack_array, write_container
from .errors import FormatError
from .layers import Flatten, MaskedLayer, MaxPool2, Network
from .masks import MaskParameters
from .rescale import RescaleState

__all__ = ["save_checkpoint", "load_checkpoint"]


def save_checkpoint(path, net: Network, config: dict | None = None):
    """Serialize structure, frozen weights, latent masks and scales.

    The config dict is echoed verbatim into the file so a run can be
    reproduced from its checkpoint alone.
    """
    structure = []
    sections = []
    li = 0
    for item in net.items:
        if isinstance(item, MaxPool2):
            structure.append({"type": "maxpool2"})
            continue
        if isinstance(item, Flatten):
            structure.append({"type": "flatten"})
            continue
        entry = {
            "type": item.kind,
            "activation": item.activation,
            "stride": item.stride,
            "padding": item.padding,
            "masked": item.mask is not None,
            "bias": item.bias is not None,
            "rescale": item.rescale.strategy,
            "reading": item.rescale.reading,
        }
        structure.append(entry)
        sections.append((f"w{li}", pack_array(item.weights.data)))
        if item.bias is not None:
            sections.append((f"b{li}", pack_array(item.bias.data)))
        if item.mask is not None:
            sections.append((f"m{li}", pack_array(item.mask.m_hat.data)))
        if item.rescale.s is not None:
            sections.append((f"s{li}", pack_array(item.rescale.s.data)))
        li += 1

    meta = {"structure": structure, "config": config or {}}
    all_sections = [("meta", json.dumps(meta, sort_keys=True).encode("utf8"))]
    all_sections.extend(sections)
    write_container(path, all_sections)


def load_checkpoint(path):
    """Rebuild (network, config) from a checkpoint file."""
    sections = read_container(path)
    if "meta" not in sections:
        raise FormatError(f"{path}: missing meta section")
    meta = json.loads(sections["meta"].decode("utf8"))
    items = []
    li = 0
    for entry in meta["structure"]:
        kind = entry["type"]
        if kind == "maxpool2":
            items.append(MaxPool2())
            continue
        if kind == "flatten":
            items.append(Flatten())
            continue
        try:
            weights = unpack_array(sections[f"w{li}"])
        except KeyError:
            raise FormatError(f"{path}: missing weights for layer {li}") from None
        bias = unpack_array(sections[f"b{li}"]) if entry["bias"] else None
        mask = None
        if entry["masked"]:
            try:
                mask = MaskParameters(unpack_array(sections[f"m{li}"]))
            except KeyError:
                raise FormatError(f"{path}: missing mask for layer {li}") from None
        rescale = RescaleState(strategy=entry["rescale"], reading=entry["reading"])
        if f"s{li}" in sections:
            rescale.s = Tensor(
                unpack_array(sections[f"s{li}"]).astype(np.float32), requires_grad=True
            )
        items.append(
            MaskedLayer(
                kind,
                weights,
                bias=bias,
                mask=mask,
                rescale=rescale,
                activation=entry["activation"],
                stride=entry["stride"],
                padding=entry["padding"],
            )
        )
        li += 1
    return Network(items), meta["config"]
