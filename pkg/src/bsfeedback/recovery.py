"""Classical DL CSI recovery: selected beams, minimum-norm decoding, ISTA, NMSE."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .airlink import MergingMatrix, ls_estimate, normalize_columns, pilot_symbols, quantize_roundtrip, transmit_csirs
from .beamspace import from_beam_domain, sparse_map, top_beam_indices
from .errors import ConfigError, DimensionError, SingularityError, UndefinedError

NMSE_FLOOR_DB = -100.0
DEFAULT_RIDGE = 1e-8


@dataclass
class RecoveryReport:
    estimate: np.ndarray
    method: str
    nmse_db: float
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self):
        est = np.asarray(self.estimate)
        return json.dumps({
            "method": self.method,
            "nmse_db": self.nmse_db,
            "seconds": self.seconds,
            "shape": list(est.shape),
            "estimate_re": est.real.ravel().tolist(),
            "estimate_im": est.imag.ravel().tolist(),
            **self.extra,
        })


def recover_selected_beams(values, selection, obm):
    """h_hat = B_S^* values: scatter onto the selected beams, then leave the beam domain."""
    return from_beam_domain(sparse_map(values, selection, obm.n_b), obm)


def _measurement(t):
    tm = t.t if isinstance(t, MergingMatrix) else np.asarray(t)
    if tm.ndim != 2:
        raise DimensionError(f"merging matrix must be 2-D, got {tm.shape}")
    if not np.all(np.isfinite(tm)):
        raise ConfigError("merging matrix has non-finite entries")
    return tm.T  # A = T^T, shape (L, N_b)


def _svd_checked(a, ridge):
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if ridge == 0:
        cond = s[0] / s[-1] if s[-1] > 0 else math.inf
        if s[-1] <= s[0] * 1e-12 * max(a.shape):
            raise SingularityError(f"T is rank deficient (condition number {cond:.3e}); use ridge > 0")
    return u, s, vh


def min_norm_recover(g, t, ridge=DEFAULT_RIDGE):
    """Minimum-norm solution of T^T x = g: x = T^* (T^T T^*)^{-1} g.

    Evaluated through the SVD of A = T^T with Tikhonov damping
    ``ridge * sigma_max^2`` on the Gram matrix; ``ridge=0`` is the exact
    pseudoinverse. ``g`` may be (L,) or (L, M) with one column per vector.
    """
    if ridge < 0:
        raise ConfigError("ridge must be >= 0")
    a = _measurement(t)
    g = np.asarray(g)
    if g.shape[0] != a.shape[0]:
        raise DimensionError(f"feedback length {g.shape[0]} != L={a.shape[0]}")
    u, s, vh = _svd_checked(a, ridge)
    eps = ridge * s[0] ** 2
    gain = s / (s ** 2 + eps)
    coeff = np.conj(u.T) @ g
    coeff = coeff * (gain if g.ndim == 1 else gain[:, None])
    return np.conj(vh.T) @ coeff


def build_itilde(t):
    """Projector sum_i v_i v_i^H onto the row space of T^T (rank L)."""
    a = _measurement(t)
    _, _, vh = _svd_checked(a, 0)
    v = np.conj(vh.T)
    return v @ np.conj(v.T)


# ---------------------------------------------------------------- ISTA

def complex_soft_threshold(x, thresh):
    """Shrink the modulus by ``thresh``, keep the phase."""
    mag = np.abs(x)
    return x * (np.maximum(mag - thresh, 0.0) / np.where(mag > 0, mag, 1.0))


def lasso_objective(a, x, g, lam):
    r = a @ x - g
    return 0.5 * np.sum(np.abs(r) ** 2, axis=0) + lam * np.sum(np.abs(x), axis=0)


def ista_recover(g, t, lam, max_iters, tol=1e-10, x0=None, history=None):
    """ISTA for min 0.5||A x - g||^2 + lam ||x||_1 with A = T^T.

    ``g`` may hold several measurement vectors as columns. If ``history`` is a
    list, the objective after each iteration is appended to it.
    """
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    a = _measurement(t)
    g = np.asarray(g, dtype=complex)
    mu = 1.0 / np.linalg.norm(a, 2) ** 2
    ah = np.conj(a.T)
    x = np.zeros((a.shape[1],) + g.shape[1:], dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    for _ in range(max_iters):
        x_new = complex_soft_threshold(x - mu * (ah @ (a @ x - g)), mu * lam)
        step = np.max(np.linalg.norm(np.atleast_2d((x_new.T - x.T)), axis=-1))
        x = x_new
        if history is not None:
            history.append(lasso_objective(a, x, g, lam))
        if step < tol:
            break
    return x


ISTA_FIXED = {"lam": 0.5, "max_iters": 3000}


def ista_continuation(g, t, lam_final=1e-4, shrink=0.5, iters_per_stage=300, max_iters=3000, tol=1e-10):
    """ISTA with geometric lambda continuation and warm starts.

    Starts at half the smallest lambda that zeroes the solution and halves it
    until ``lam_final``, where the remaining iteration budget is spent.
    """
    a = _measurement(t)
    g = np.asarray(g, dtype=complex)
    lam_max = float(np.max(np.abs(np.conj(a.T) @ g))) if g.size else 0.0
    lam = max(lam_max * shrink, lam_final)
    x = None
    while lam > lam_final:
        x = ista_recover(g, t, lam, iters_per_stage, tol, x0=x)
        lam = max(lam * shrink, lam_final)
    return ista_recover(g, t, lam_final, max_iters, tol, x0=x)


# ---------------------------------------------------------------- baselines over datasets

def beam_selection_baseline(h_bs_dl, select_mags, l, bits=8):
    """BS-UL / BS-DL: per RB, feed back the DL responses on the ``l`` beams with the largest
    ``select_mags`` (UL or DL beam magnitudes), each RB one quantized record.

    Arrays are (D, N_b, K) in the beam domain; returns the (D, N_b, K) estimate.
    """
    h = np.moveaxis(np.asarray(h_bs_dl), -1, -2)  # (D, K, N_b)
    sel = top_beam_indices(np.moveaxis(np.asarray(select_mags), -1, -2), l)
    vals = np.take_along_axis(h, sel, axis=-1)
    if bits:
        vals, _ = quantize_roundtrip(vals, bits)
    return np.moveaxis(sparse_map(vals, sel, h.shape[-1]), -1, -2)


def gaussian_merging(n_b, l, rng):
    """Random complex Gaussian merging matrix with unit-norm columns."""
    t = rng.standard_normal((n_b, l)) + 1j * rng.standard_normal((n_b, l))
    return MergingMatrix(normalize_columns(t))


def ista_baseline(h_bs_dl, t, bits=8, solver="continuation", noise_std=0.0, rng=None):
    """Pilots through a fixed T, quantized per-RB feedback, ISTA recovery of every RB.

    ``solver`` is "continuation" or "fixed" (fixed lambda preset).
    """
    h = np.moveaxis(np.asarray(h_bs_dl), -1, -2)  # (D, K, N_b)
    s = pilot_symbols(t.l)
    g = ls_estimate(transmit_csirs(h, t, s, noise_std, rng), s)
    if bits:
        g, _ = quantize_roundtrip(g, bits)
    cols = g.reshape(-1, t.l).T
    if solver == "continuation":
        x = ista_continuation(cols, t)
    elif solver == "fixed":
        x = ista_recover(cols, t, **ISTA_FIXED)
    else:
        raise ConfigError(f"unknown ISTA solver {solver!r}")
    return np.moveaxis(x.T.reshape(h.shape), -1, -2)


# ---------------------------------------------------------------- metric

def nmse_ratios(estimates, truths):
    """Per-sample ||H_hat - H||_F^2 / ||H||_F^2 over the leading axis."""
    est = np.asarray(estimates)
    tru = np.asarray(truths)
    if est.shape != tru.shape:
        raise DimensionError(f"estimate shape {est.shape} != truth shape {tru.shape}")
    axes = tuple(range(1, tru.ndim))
    den = np.sum(np.abs(tru) ** 2, axis=axes)
    if np.any(den == 0):
        raise UndefinedError("NMSE undefined for a zero-norm truth")
    return np.sum(np.abs(est - tru) ** 2, axis=axes) / den


def nmse_db(estimates, truths):
    """10 log10 of the mean per-sample normalised error, clamped at -100 dB."""
    mean = float(np.mean(nmse_ratios(estimates, truths)))
    if mean <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(mean), NMSE_FLOOR_DB)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
