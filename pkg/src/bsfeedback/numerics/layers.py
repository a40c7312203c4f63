"""Differentiable layers: dense, circular convolutions, soft staircase quantizer."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, _make, as_tensor

_TAPS2 = list(itertools.product((-1, 0, 1), repeat=2))
_TAPS3 = list(itertools.product((-1, 0, 1), repeat=3))


def dense(x, weight, bias):
    """``weight @ x + bias`` applied over the last axis of ``x``.

    ``weight`` is (m, n), ``x`` is (..., n).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        return g @ weight.data, g2.T @ x2, g2.sum(axis=0)

    return _make(out, (x, weight, bias), backward)


def _circular_conv(x, kernel, bias, taps, nd):
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if kernel.shape[:nd] != (3,) * nd or kernel.ndim != nd + 2:
        raise DimensionError(f"kernel must be {'x'.join(['3'] * nd)}xCinxCout, got {kernel.shape}")
    cin, cout = kernel.shape[-2:]
    if x.ndim < nd + 1 or x.shape[-1] != cin:
        raise DimensionError(f"input {x.shape} does not match kernel Cin={cin}")
    if bias.shape != (cout,):
        raise DimensionError(f"bias must have shape ({cout},), got {bias.shape}")
    axes = tuple(range(-nd - 1, -1))
    cols = np.stack([np.roll(x.data, tuple(-d for d in tap), axis=axes) for tap in taps], axis=-2)
    kmat = kernel.data.reshape(len(taps) * cin, cout)
    flat = cols.reshape(*cols.shape[:-2], len(taps) * cin)
    out = flat @ kmat + bias.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gk = (flat.reshape(-1, flat.shape[-1]).T @ g2).reshape(kernel.shape)
        gcols = (g @ kmat.T).reshape(cols.shape)
        gx = np.zeros_like(x.data)
        for t, tap in enumerate(taps):
            gx += np.roll(gcols[..., t, :], tap, axis=axes)
        return gx, gk, g2.sum(axis=0)

    return _make(out, (x, kernel, bias), backward)


def circular_conv2d(x, kernel, bias):
    """3x3 convolution on (..., H, W, Cin) with indices wrapping modulo H and W.

    out[i, j] = sum over di, dj in {-1, 0, 1} of x[(i+di) % H, (j+dj) % W] @ kernel[di+1, dj+1].
    """
    return _circular_conv(x, kernel, bias, _TAPS2, 2)


def circular_conv3d(x, kernel, bias):
    """3x3x3 circular convolution on (..., H, W, D, Cin)."""
    return _circular_conv(x, kernel, bias, _TAPS3, 3)


def _check_bits(bits):
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= 16:
        raise ConfigError(f"bits must be an integer in [1, 16], got {bits!r}")


def hard_quantize(x, bits):
    """Mid-rise uniform quantizer on [-1, 1] with 2**bits levels (numpy in, numpy out)."""
    _check_bits(bits)
    levels = 2 ** bits
    step = 2.0 / levels
    idx = np.clip(np.floor((np.asarray(x) + 1.0) / step), 0, levels - 1)
    return -1.0 + step * (idx + 0.5)


# sigmoid(40) == 1.0 in float64, so boundaries further than this are saturated
_SATURATION = 40.0


def soft_quantize(x, bits, temperature):
    """Smooth staircase approximating :func:`hard_quantize`.

    Sum of ``2**bits - 1`` sigmoids centred on the bin boundaries. ``temperature``
    is the sigmoid slope measured in units of one bin width, so the
    staircase sharpens to the hard quantizer as it grows.
    """
    _check_bits(bits)
    if not temperature > 0:
        raise ConfigError("temperature must be positive")
    x = as_tensor(x)
    n_bound = 2 ** bits - 1
    step = 2.0 / 2 ** bits
    u = (x.data + 1.0) / step  # boundary i sits at u == i, i = 1..n_bound
    half = int(min(np.ceil(_SATURATION / temperature) + 1, n_bound + 1))
    k0 = np.floor(u).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1)
    idx = k0[..., None] + offsets
    valid = (idx >= 1) & (idx <= n_bound)
    s = expit(temperature * (u[..., None] - idx)) * valid
    below = np.clip(k0 - half + 1 - 1, 0, n_bound)  # boundaries left of the window count fully
    out = -1.0 + step * (0.5 + below + s.sum(axis=-1))
    dudx = temperature * (s * (1.0 - s) * valid).sum(axis=-1)

    return _make(out, (x,), lambda g: (g * dudx,))
