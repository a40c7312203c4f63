"""Learned feedback pipelines: architectures, training and complexity accounting."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .complexity import ComplexityReport, architecture_layers, count_complexity
from .pipelines import (
    KINDS, Architecture, Batch, ModelBundle, beam_merging_forward, combining_forward, fcm_decode,
    fcm_encode, forward, grid_to_vec, init_bundle, losses, predict, recovery_net_forward,
)
from .training import TrainConfig, evaluate, train_two_stage, weighted_loss


def _per_rb(bundle, h_bs_dl, ul_mags, kind, bits, noise_std, rng, refine):
    if bundle.arch.kind != kind:
        raise ValueError(f"bundle holds a {bundle.arch.kind} model, not {kind}")
    h = np.asarray(h_bs_dl, dtype=complex)
    u = np.asarray(ul_mags, dtype=float)
    if h.ndim == 1:
        h, u = h[None], u[None]
    if bits is not None:
        bundle = ModelBundle(replace(bundle.arch, bits=bits, n_ues=h.shape[0]), bundle.params)
    else:
        bundle = ModelBundle(replace(bundle.arch, n_ues=h.shape[0]), bundle.params)
    mode = "none" if bits == 0 else "hard"
    initial, final = forward(bundle, Batch(h[None], u[None]), mode=mode, noise_std=noise_std, rng=rng,
                             refine=refine)
    return grid_to_vec((final if refine else initial).data)[0]


def bsdualnet_forward(h_bs_dl, ul_mags, bundle, bits=None, noise_std=0.0, rng=None):
    """DL beam-domain estimates (N, N_b) for N UEs sharing one learned merging matrix.

    ``bits=None`` uses the bundle's quantizer, ``bits=0`` disables quantization.
    """
    return _per_rb(bundle, h_bs_dl, ul_mags, "bsdualnet", bits, noise_std, rng, True)


def bsdualnet_mn_forward(h_bs_dl, ul_mags, bundle, bits=None, noise_std=0.0, rng=None):
    """As :func:`bsdualnet_forward` with minimum-norm recovery in place of the recovery net."""
    return _per_rb(bundle, h_bs_dl, ul_mags, "bsdualnet-mn", bits, noise_std, rng, True)


def bsdualnet0_pipeline(h_bs_dl, ul_mags, bundle, bits=None, refine=True, noise_std=0.0, rng=None):
    """UL-aided top-L selection, quantized feedback, sparse map, refinement.

    With ``refine=False`` the output is the sparse-mapped feedback (the BS-UL estimate).
    """
    return _per_rb(bundle, h_bs_dl, ul_mags, "bsdualnet0", bits, noise_std, rng, refine)


__all__ = [
    "KINDS", "Architecture", "Batch", "ComplexityReport", "ModelBundle", "TrainConfig",
    "architecture_layers", "beam_merging_forward", "bsdualnet0_pipeline", "bsdualnet_forward",
    "bsdualnet_mn_forward", "combining_forward", "count_complexity", "evaluate", "fcm_decode",
    "fcm_encode", "forward", "init_bundle", "losses", "predict", "recovery_net_forward",
    "train_two_stage", "weighted_loss",
]
