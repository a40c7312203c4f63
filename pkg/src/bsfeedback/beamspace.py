"""Orthogonal beam matrix and beam-domain primitives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, UndefinedError


def dft_matrix(n):
    """Unitary n-point DFT, F[m, k] = exp(-2j*pi*m*k/n) / sqrt(n)."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


@dataclass(frozen=True)
class ObmMatrix:
    b: np.ndarray
    geometry: object

    @property
    def n_b(self):
        return self.b.shape[0]


def build_obm(geometry):
    """B = F_{N_V} kron F_{N_H}; matches the column-major vec(H) element order."""
    return ObmMatrix(np.kron(dft_matrix(geometry.n_v), dft_matrix(geometry.n_h)), geometry)


def to_beam_domain(h, obm):
    """B^T h. ``h`` may be (N_b,), (N_b, K) or batched (..., N_b, K)."""
    h = np.asarray(h)
    if h.shape[0 if h.ndim == 1 else -2] != obm.n_b:
        raise DimensionError(f"expected {obm.n_b} antenna entries, got shape {h.shape}")
    return obm.b.T @ h


def from_beam_domain(h_bs, obm):
    """B^* h_bs, the inverse of :func:`to_beam_domain`."""
    h_bs = np.asarray(h_bs)
    if h_bs.shape[0 if h_bs.ndim == 1 else -2] != obm.n_b:
        raise DimensionError(f"expected {obm.n_b} beam entries, got shape {h_bs.shape}")
    return np.conj(obm.b) @ h_bs


@dataclass(frozen=True)
class BeamSelection:
    indices: np.ndarray
    source: str = "UL"

    def __len__(self):
        return len(self.indices)


def select_top_beams(magnitudes, l, source="UL"):
    """Indices of the ``l`` largest magnitudes, sorted by descending magnitude.

    Ties go to the lower index (stable sort on the negated magnitudes).
    """
    mags = np.asarray(magnitudes, dtype=float)
    if not 1 <= l <= mags.shape[-1]:
        raise ConfigError(f"l must lie in [1, {mags.shape[-1]}], got {l}")
    order = np.argsort(-mags, kind="stable")[:l]
    return BeamSelection(order, source)


def top_beam_indices(magnitudes, l):
    """Batched :func:`select_top_beams` over the last axis; returns an int array (..., l)."""
    mags = np.asarray(magnitudes, dtype=float)
    if not 1 <= l <= mags.shape[-1]:
        raise ConfigError(f"l must lie in [1, {mags.shape[-1]}], got {l}")
    return np.argsort(-mags, axis=-1, kind="stable")[..., :l]


def sparse_map(values, selection, n_b):
    values = np.asarray(values)
    idx = np.asarray(getattr(selection, "indices", selection))
    if values.shape[-1] != idx.shape[-1]:
        raise DimensionError(f"{values.shape[-1]} values for {idx.shape[-1]} selected beams")
    if idx.size and (idx.min() < 0 or idx.max() >= n_b):
        raise DimensionError(f"beam index out of range [0, {n_b})")
    out = np.zeros(values.shape[:-1] + (n_b,), dtype=np.result_type(values, np.complex128))
    np.put_along_axis(out, np.broadcast_to(idx, values.shape), values, axis=-1)
    return out


def beam_energy_fraction(h_bs, l):
    """Share of ||h_bs||^2 carried by its ``l`` strongest entries."""
    p = np.abs(np.asarray(h_bs)) ** 2
    total = p.sum()
    if total == 0:
        raise UndefinedError("energy fraction of a zero vector")
    return float(np.sort(p)[::-1][:l].sum() / total)


def to_grid(h_bs, geometry):
    """Beam vector(s) (..., N_b) -> (..., N_H, N_V) grid, inverse of column-major vec."""
    h_bs = np.asarray(h_bs)
    return np.swapaxes(h_bs.reshape(h_bs.shape[:-1] + (geometry.n_v, geometry.n_h)), -1, -2)


def from_grid(grid):
    """(..., N_H, N_V) -> (..., N_b) column-major vec."""
    grid = np.asarray(grid)
    return np.swapaxes(grid, -1, -2).reshape(grid.shape[:-2] + (-1,))
