"""CSI-RS placement, pilot transmission, UE-side LS estimation and feedback quantization."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .numerics.layers import _check_bits, hard_quantize


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PilotPlacement:
    k_rbs: int
    fr: int
    br: int
    l: int
    pilot_rb_indices: tuple

    @property
    def n_pilot_rbs(self):
        return len(self.pilot_rb_indices)

    @property
    def total_res(self):
        return self.n_pilot_rbs * self.l


def make_placement(k_rbs, fr, br, n_b):
    """Pilots on every FR-th RB starting at RB 0, ``round(n_b / br)`` REs each."""
    if fr < 1 or br < 1 or k_rbs < 1:
        raise ConfigError("k_rbs, fr and br must all be >= 1")
    l = _round_half_up(n_b / br)
    if l < 1:
        raise ConfigError(f"beam reduction {br} leaves no pilot REs for {n_b} beams")
    return PilotPlacement(k_rbs, fr, br, l, tuple(range(0, k_rbs, fr)))


@dataclass(frozen=True)
class MergingMatrix:
    t: np.ndarray  # complex (N_b, L)

    @property
    def l(self):
        return self.t.shape[-1]


def normalize_columns(t):
    t = np.asarray(t, dtype=complex)
    return t / np.linalg.norm(t, axis=-2, keepdims=True)


def selection_matrix(indices, n_b):
    """Merging matrix whose column i is the unit vector e_{indices[i]}."""
    t = np.zeros((n_b, len(indices)), dtype=complex)
    t[np.asarray(indices), np.arange(len(indices))] = 1.0
    return MergingMatrix(t)


def pilot_symbols(l):
    """Fixed unit-modulus QPSK constants, one per pilot RE."""
    return np.exp(1j * np.pi / 4 * (2 * (np.arange(l) % 4) + 1))


def _t_array(t):
    return t.t if isinstance(t, MergingMatrix) else np.asarray(t)


def transmit_csirs(h_bs_dl, t, s, noise_std=0.0, rng=None):
    """y = S T^T h_bs + n. ``h_bs_dl`` is (..., N_b); ``t`` is (..., N_b, L)."""
    tm = _t_array(t)
    h = np.asarray(h_bs_dl)
    if h.shape[-1] != tm.shape[-2]:
        raise DimensionError(f"CSI has {h.shape[-1]} beams but T has {tm.shape[-2]} rows")
    s = np.asarray(s)
    if s.shape[-1] != tm.shape[-1]:
        raise DimensionError(f"{s.shape[-1]} pilot symbols for L={tm.shape[-1]}")
    y = s * (np.swapaxes(tm, -1, -2) @ h[..., None])[..., 0]
    if noise_std > 0:
        rng = np.random.default_rng() if rng is None else rng
        y = y + noise_std / math.sqrt(2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def ls_estimate(y, s):
    s = np.asarray(s)
    if np.any(np.abs(np.abs(s) - 1.0) > 1e-9):
        raise ConfigError("pilot symbols must have unit modulus")
    return np.conj(s) * np.asarray(y)


# ---------------------------------------------------------------- feedback quantization

LAYOUT_VECTOR = 0
LAYOUT_MATRIX = 1
LAYOUT_CODEWORD = 2
_ZERO_FLAG = 0x80


@dataclass
class FeedbackRecord:
    payload: np.ndarray  # integer level indices, interleaved re/im
    bits: int
    scale: float
    dims: tuple
    layout: int = LAYOUT_VECTOR
    zero: bool = False

    def to_bytes(self):
        head = struct.pack("<BB", self.bits, self.layout | (_ZERO_FLAG if self.zero else 0))
        head += struct.pack("<I", len(self.dims)) + struct.pack(f"<{len(self.dims)}I", *self.dims)
        head += struct.pack("<d", self.scale)
        bitplanes = (self.payload.astype(np.uint32)[:, None] >> np.arange(self.bits - 1, -1, -1)) & 1
        return head + np.packbits(bitplanes.astype(np.uint8).reshape(-1)).tobytes()

    @classmethod
    def from_bytes(cls, blob):
        try:
            bits, layout = struct.unpack_from("<BB", blob, 0)
            (rank,) = struct.unpack_from("<I", blob, 2)
            dims = struct.unpack_from(f"<{rank}I", blob, 6)
            (scale,) = struct.unpack_from("<d", blob, 6 + 4 * rank)
        except struct.error:
            raise FormatError("truncated feedback header") from None
        n = 2 * int(np.prod(dims))
        raw = np.frombuffer(blob, dtype=np.uint8, offset=14 + 4 * rank)
        if raw.size * 8 < n * bits:
            raise FormatError("truncated feedback payload")
        planes = np.unpackbits(raw)[: n * bits].reshape(n, bits).astype(np.uint32)
        payload = (planes << np.arange(bits - 1, -1, -1)).sum(axis=1)
        return cls(payload, bits, scale, tuple(dims), layout & ~_ZERO_FLAG, bool(layout & _ZERO_FLAG))

    @property
    def n_bits(self):
        """Feedback cost in bits; the scale travels as side information."""
        return self.payload.size * self.bits


def quantize_feedback(g, bits, layout=LAYOUT_VECTOR):
    """Quantize a complex array as one record with a shared scale."""
    _check_bits(bits)
    g = np.asarray(g, dtype=complex)
    comps = np.stack([g.real, g.imag], axis=-1).reshape(-1)
    scale = float(np.max(np.abs(comps))) if comps.size else 0.0
    if scale == 0.0:
        return FeedbackRecord(np.zeros(comps.size, dtype=np.int64), bits, 1.0, g.shape, layout, zero=True)
    levels = 2 ** bits
    idx = np.clip(np.floor((comps / scale + 1.0) * levels / 2.0), 0, levels - 1).astype(np.int64)
    return FeedbackRecord(idx, bits, scale, g.shape, layout)


def dequantize(record):
    if record.zero:
        return np.zeros(record.dims, dtype=complex)
    step = 2.0 / 2 ** record.bits
    comps = (-1.0 + step * (record.payload + 0.5)) * record.scale
    pairs = comps.reshape(tuple(record.dims) + (2,))
    return pairs[..., 0] + 1j * pairs[..., 1]


def quantize_roundtrip(g, bits, record_ndim=1):
    """Vectorised quantize+dequantize; each trailing ``record_ndim``-axis block is one record."""
    g = np.asarray(g, dtype=complex)
    axes = tuple(range(g.ndim - record_ndim, g.ndim))
    scale = np.maximum(np.abs(g.real).max(axis=axes, keepdims=True),
                       np.abs(g.imag).max(axis=axes, keepdims=True))
    safe = np.where(scale == 0, 1.0, scale)
    out = (hard_quantize(g.real / safe, bits) + 1j * hard_quantize(g.imag / safe, bits)) * safe
    return np.where(scale == 0, 0.0, out), scale


def quantization_floor(g, h_norm_sq, bits, record_ndim=1):
    """Expected per-record squared error (scale * step)^2 / 12 per real component, over ||h||^2."""
    _, scale = quantize_roundtrip(g, bits, record_ndim)
    n_comp = 2 * int(np.prod(g.shape[g.ndim - record_ndim:]))
    step = 2.0 / 2 ** bits
    return n_comp * (scale.reshape(scale.shape[: g.ndim - record_ndim]) * step) ** 2 / 12.0 / h_norm_sq
