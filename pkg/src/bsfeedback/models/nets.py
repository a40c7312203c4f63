"""Network building blocks and their layer descriptors.

Parameters live in flat dicts keyed ``"<group>.<layer>.<w|b>"``; the group
prefix (``bm``, ``re``, ``c``, ``fcm_en``, ``fcm_de``) identifies the
sub-network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..errors import ConfigError

CONV_CHANNELS = (16, 8, 4, 2)
FR_COMBINE_CHANNELS = (16, 8, 4, 2, 1)
LAYER_KINDS = {"dense", "circconv2d", "circconv3d", "tanh", "residual-block", "reshape", "soft-quantize"}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    sizes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.sizes["n_in"] < 1 or self.sizes["n_out"] < 1):
            raise ConfigError("dense sizes must be positive")
        if self.kind.startswith("circconv") and (self.sizes["cin"] < 1 or self.sizes["cout"] < 1):
            raise ConfigError("conv channel counts must be positive")

    def n_params(self):
        s = self.sizes
        if self.kind == "dense":
            return s["n_out"] * s["n_in"] + s["n_out"]
        if self.kind in ("circconv2d", "circconv3d"):
            taps = 9 if self.kind == "circconv2d" else 27
            return taps * s["cin"] * s["cout"] + s["cout"]
        return 0

    def n_macs(self):
        s = self.sizes
        if self.kind == "dense":
            return s["n_out"] * s["n_in"]
        if self.kind in ("circconv2d", "circconv3d"):
            taps = 9 if self.kind == "circconv2d" else 27
            return int(np.prod(s["spatial"])) * taps * s["cin"] * s["cout"]
        return 0


def glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_dense(rng, params, name, n_in, n_out):
    params[f"{name}.w"] = nx.parameter(glorot(rng, (n_out, n_in), n_in, n_out), f"{name}.w")
    params[f"{name}.b"] = nx.parameter(np.zeros(n_out), f"{name}.b")


def init_conv(rng, params, name, cin, cout, nd=2):
    taps = 3 ** nd
    shape = (3,) * nd + (cin, cout)
    params[f"{name}.w"] = nx.parameter(glorot(rng, shape, taps * cin, taps * cout), f"{name}.w")
    params[f"{name}.b"] = nx.parameter(np.zeros(cout), f"{name}.b")


def init_conv_stack(rng, params, prefix, cin, channels=CONV_CHANNELS, nd=2):
    for i, cout in enumerate(channels):
        init_conv(rng, params, f"{prefix}.conv{i}", cin, cout, nd)
        cin = cout


def conv_stack(params, prefix, x, n_layers, nd=2, last_linear=True):
    conv = nx.circular_conv2d if nd == 2 else nx.circular_conv3d
    for i in range(n_layers):
        x = conv(x, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"])
        if not (last_linear and i == n_layers - 1):
            x = nx.tanh(x)
    return x


def conv_stack_specs(spatial, cin, channels=CONV_CHANNELS, nd=2):
    specs = []
    kind = "circconv2d" if nd == 2 else "circconv3d"
    for cout in channels:
        specs += [LayerSpec(kind, {"cin": cin, "cout": cout, "spatial": tuple(spatial)}), LayerSpec("tanh")]
        cin = cout
    return specs


def dense_layer(params, name, x):
    return nx.dense(x, params[f"{name}.w"], params[f"{name}.b"])


def residual_blocks(params, prefix, x, side, n_blocks, n_layers):
    """``n_blocks`` blocks of x <- x + convs(concat(x, side)); last conv of each path linear."""
    for blk in range(n_blocks):
        path = conv_stack(params, f"{prefix}.block{blk}", nx.concat([x, side], axis=-1), n_layers)
        x = x + path
    return x
