"""The four learned feedback pipelines.

Kinds:
  ``bsdualnet0``   UL top-L beam selection, quantized selected responses, refinement net.
  ``bsdualnet``    learned merging matrix T, FC+conv recovery net, combining net.
  ``bsdualnet-mn`` learned T, minimum-norm recovery, combining net.
  ``bsdualnet-fr`` 3-D merging net over RBs, frequency compression module, magnitude refinement.

Beam-domain CSI is handled per UE as a grid (N_H, N_V, 2) for the per-RB
kinds and as (N_b, K, 2) for the FR kind; the trailing axis holds (re, im).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numerics as nx
from ..airlink import ls_estimate, make_placement, pilot_symbols, quantize_roundtrip, transmit_csirs
from ..beamspace import build_obm, sparse_map, to_beam_domain, top_beam_indices
from ..channel import UpaGeometry
from ..errors import ConfigError, DimensionError
from ..numerics import checkpoint
from . import nets

KINDS = ("bsdualnet0", "bsdualnet", "bsdualnet-mn", "bsdualnet-fr")


@dataclass(frozen=True)
class Architecture:
    kind: str
    n_h: int = 8
    n_v: int = 4
    l: int = 8
    n_ues: int = 1
    k_rbs: int = 1
    fr: int = 1
    br: int = 1
    cr: float = 1.0
    bits: int = 8
    n_blocks: int = 5
    ridge: float = 1e-8
    zero_init_residual: bool = True  # last conv of each residual branch starts at zero

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not 1 <= self.l <= self.n_b:
            raise ConfigError(f"L={self.l} outside [1, N_b={self.n_b}]")
        if self.n_ues < 1 or self.n_blocks < 0:
            raise ConfigError("n_ues must be >= 1 and n_blocks >= 0")
        if self.kind == "bsdualnet-fr":
            if self.cr < 1:
                raise ConfigError("CR must be >= 1")
            if self.codeword_length < 1:
                raise ConfigError("compression leaves an empty codeword")

    @property
    def n_b(self):
        return self.n_h * self.n_v

    @property
    def geometry(self):
        return UpaGeometry(self.n_h, self.n_v)

    @property
    def placement(self):
        return make_placement(self.k_rbs, self.fr, self.br, self.n_b)

    @property
    def k_pilot(self):
        return len(range(0, self.k_rbs, self.fr))

    @property
    def codeword_length(self):
        return math.ceil(2 * self.l * self.k_rbs / (self.cr * self.fr) - 1e-9)

    @property
    def cr_eff(self):
        return self.br * self.fr * self.cr

    @classmethod
    def for_fr(cls, n_h, n_v, k_rbs, fr, br, cr, **kw):
        placement = make_placement(k_rbs, fr, br, n_h * n_v)
        return cls("bsdualnet-fr", n_h, n_v, placement.l, k_rbs=k_rbs, fr=fr, br=br, cr=cr, **kw)


@dataclass
class ModelBundle:
    arch: Architecture
    params: dict
    history: list = field(default_factory=list)

    def group(self, prefix):
        return {k: v for k, v in self.params.items() if k.split(".", 1)[0] == prefix}

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def restore(self, snap):
        for k, v in snap.items():
            self.params[k].data = v.copy()

    def save(self, directory):
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        checkpoint.save_params(self.params, d / "params.bsnn")
        (d / "arch.json").write_text(json.dumps(asdict(self.arch), indent=2, sort_keys=True) + "\n")
        write_history_csv(self.history, d / "history.csv")

    @classmethod
    def load(cls, directory):
        from pathlib import Path

        d = Path(directory)
        arch = Architecture(**json.loads((d / "arch.json").read_text()))
        raw = checkpoint.load_params(d / "params.bsnn")
        bundle = init_bundle(arch, seed=0)
        if set(raw) != set(bundle.params):
            raise ConfigError(f"checkpoint parameters do not match architecture {arch.kind}")
        for k, v in raw.items():
            if v.shape != bundle.params[k].shape:
                raise DimensionError(f"{k}: checkpoint shape {v.shape} != {bundle.params[k].shape}")
            bundle.params[k].data = v
        return bundle


HISTORY_FIELDS = ("epoch", "loss1", "loss2", "val_nmse_db")


def write_history_csv(history, path):
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_FIELDS) + "\n")
        for row in history:
            fh.write(",".join(repr(float(row[k])) if k != "epoch" else str(row[k]) for k in HISTORY_FIELDS) + "\n")


def init_bundle(arch, seed=0):
    """Glorot-uniform weights, zero biases.

    With ``arch.zero_init_residual`` the final conv of every residual branch is
    zeroed, so the combining network starts as the identity on its input.
    """
    rng = np.random.default_rng(seed)
    p = {}
    nb, l, n = arch.n_b, arch.l, arch.n_ues
    if arch.kind in ("bsdualnet", "bsdualnet-mn"):
        nets.init_conv_stack(rng, p, "bm", n)
        nets.init_dense(rng, p, "bm.fc", 2 * nb, 2 * nb * l)
    if arch.kind == "bsdualnet":
        nets.init_dense(rng, p, "re.fc", 2 * l, 2 * nb)
        nets.init_conv_stack(rng, p, "re", 2)
    if arch.kind in ("bsdualnet0", "bsdualnet", "bsdualnet-mn"):
        for blk in range(arch.n_blocks):
            nets.init_conv_stack(rng, p, f"c.block{blk}", 3)
    if arch.kind == "bsdualnet-fr":
        k, kp, cw = arch.k_rbs, arch.k_pilot, arch.codeword_length
        nets.init_conv_stack(rng, p, "bm", n, nd=3)
        nets.init_dense(rng, p, "bm.fc", 2 * nb * k, 2 * nb * l)
        nets.init_conv_stack(rng, p, "fcm_en", 2)
        nets.init_dense(rng, p, "fcm_en.fc", 2 * l * kp, cw)
        nets.init_dense(rng, p, "fcm_de.fc", cw, 2 * nb * k)
        nets.init_conv_stack(rng, p, "fcm_de", 2)
        for blk in range(arch.n_blocks):
            nets.init_conv_stack(rng, p, f"c.block{blk}", 2, nets.FR_COMBINE_CHANNELS)
    if arch.zero_init_residual:
        for name, t in p.items():
            if name.startswith("c.block") and name.endswith(".w") and _is_last_conv(name, arch):
                t.data[...] = 0.0
    return ModelBundle(arch, p)


def _is_last_conv(name, arch):
    depth = len(nets.FR_COMBINE_CHANNELS if arch.kind == "bsdualnet-fr" else nets.CONV_CHANNELS)
    return name.split(".")[2] == f"conv{depth - 1}"


# ---------------------------------------------------------------- layout helpers

def vec_to_grid(x, n_h, n_v):
    """Tensor (..., N_b, 2) in column-major vec order -> (..., N_H, N_V, 2)."""
    lead = x.shape[:-2]
    g = nx.reshape(x, lead + (n_v, n_h, 2))
    nd = len(lead)
    return nx.transpose(g, tuple(range(nd)) + (nd + 1, nd, nd + 2))


def grid_array(h, n_h, n_v):
    """Complex (..., N_b) -> real (..., N_H, N_V, 2)."""
    g = np.swapaxes(h.reshape(h.shape[:-1] + (n_v, n_h)), -1, -2)
    return nx.from_complex(g)


def grid_to_vec(grid):
    """Real (..., N_H, N_V, 2) -> complex (..., N_b)."""
    z = nx.to_complex(np.asarray(grid))
    return np.swapaxes(z, -1, -2).reshape(z.shape[:-2] + (-1,))


def normalize_t(t):
    """Unit-norm columns for a (..., N_b, L, 2) merging tensor."""
    norm = nx.sqrt(nx.tsum(nx.square(t), axis=(-3, -1), keepdims=True) + 1e-24)
    return t / norm


# ---------------------------------------------------------------- sub-networks

def beam_merging_tensor(ul_input, params, arch):
    """(G, N_H, N_V, N) [or (G, N_H, N_V, K, N) for FR] -> T as (G, N_b, L, 2)."""
    nd = 3 if arch.kind == "bsdualnet-fr" else 2
    x = nets.conv_stack(params, "bm", nx.as_tensor(ul_input), len(nets.CONV_CHANNELS), nd=nd, last_linear=False)
    g = x.shape[0]
    flat = nx.reshape(x, (g, -1))
    t = nx.reshape(nets.dense_layer(params, "bm.fc", flat), (g, arch.n_b, arch.l, 2))
    return normalize_t(t)


def beam_merging_forward(ul_mags, params, arch):
    """UL beam magnitudes (N_H, N_V, N) -> complex merging matrix (N_b, L) with unit-norm columns."""
    from ..airlink import MergingMatrix

    x = np.asarray(getattr(ul_mags, "data", ul_mags), dtype=float)
    t = beam_merging_tensor(x[None], params, arch)
    return MergingMatrix(nx.to_complex(t.data[0]))


def recovery_net_forward(feedback, params, arch):
    """Feedback (..., 2L) -> initial beam-domain estimate (..., N_H, N_V, 2)."""
    fb = nx.as_tensor(feedback)
    if fb.shape[-1] != 2 * arch.l:
        raise DimensionError(f"feedback length {fb.shape[-1]} != 2L = {2 * arch.l}")
    x = nets.dense_layer(params, "re.fc", fb)
    x = nx.reshape(x, fb.shape[:-1] + (arch.n_h, arch.n_v, 2))
    return nets.conv_stack(params, "re", x, len(nets.CONV_CHANNELS))


def combining_forward(initial, ul_mags, params, arch):
    """Residual refinement of an initial estimate using UL magnitudes as side input.

    Per-RB kinds: ``initial`` (..., N_H, N_V, 2), ``ul_mags`` (..., N_H, N_V, 1).
    FR kind: ``initial`` (..., N_b, K, 2); only its magnitude is refined, phase kept.
    """
    initial, side = nx.as_tensor(initial), nx.as_tensor(ul_mags)
    if initial.shape[:-1] != side.shape[:-1]:
        raise DimensionError(f"initial {initial.shape} and UL magnitudes {side.shape} disagree")
    if arch.kind != "bsdualnet-fr":
        return nets.residual_blocks(params, "c", initial, side, arch.n_blocks, len(nets.CONV_CHANNELS))
    mag = nx.cabs(initial)
    unit = initial / mag
    refined = nets.residual_blocks(params, "c", mag, side, arch.n_blocks, len(nets.FR_COMBINE_CHANNELS))
    return refined * unit


def min_norm_layer(t, g, ridge):
    """x = T^* (T^T T^* + eps I)^{-1} g with eps = ridge * lambda_max(T^T T^*).

    ``t`` is (G, N_b, L, 2); ``g`` is (G, N, L, M, 2). Returns (G, N, N_b, M, 2).
    """
    tt = nx.cswap(t)
    gram = nx.cmatmul(tt, nx.conj(t))
    lam = np.linalg.eigvalsh(nx.to_complex(gram.data))[..., -1]
    l = t.shape[-2]
    eye = np.zeros((len(lam), l, l, 2))
    eye[:, np.arange(l), np.arange(l), 0] = ridge * lam[:, None]
    gram = gram + nx.constant(eye)
    lead = (t.shape[0], 1)
    sol = nx.csolve(nx.reshape(gram, lead + (l, l, 2)), g)
    return nx.cmatmul(nx.reshape(nx.conj(t), lead + t.shape[1:]), sol)


def fcm_encode(g_matrix, params, arch, temperature=None, quantize=True):
    """Beam-response matrix (..., L, K_p, 2) -> codeword (..., codeword_length) in [-1, 1].

    ``temperature=None`` applies the hard quantizer (deployment); otherwise the
    soft staircase at that temperature. ``quantize=False`` returns the raw codeword.
    """
    x = nx.as_tensor(g_matrix)
    if x.shape[-3:] != (arch.l, arch.k_pilot, 2):
        raise DimensionError(f"FCM input {x.shape} != (L, K_p, 2) = {(arch.l, arch.k_pilot, 2)}")
    x = nets.conv_stack(params, "fcm_en", x, len(nets.CONV_CHANNELS), last_linear=False)
    lead = x.shape[:-3]
    x = nx.tanh(nets.dense_layer(params, "fcm_en.fc", nx.reshape(x, lead + (-1,))))
    if not quantize:
        return x
    if temperature is None:
        return nx.constant(nx.hard_quantize(x.data, arch.bits))
    return nx.soft_quantize(x, arch.bits, temperature)


def fcm_decode(codeword, params, arch):
    """Codeword (..., codeword_length) -> initial estimate (..., N_b, K, 2)."""
    c = nx.as_tensor(codeword)
    x = nets.dense_layer(params, "fcm_de.fc", c)
    x = nx.reshape(x, c.shape[:-1] + (arch.n_b, arch.k_rbs, 2))
    return nets.conv_stack(params, "fcm_de", x, len(nets.CONV_CHANNELS))


# ---------------------------------------------------------------- end-to-end forward

@dataclass
class Batch:
    """UE instances grouped by shared merging matrix.

    Per-RB kinds: ``h_bs`` complex (G, N, N_b), ``ul_mag`` (G, N, N_b).
    FR kind: ``h_bs`` complex (G, N, N_b, K), ``ul_mag`` (G, N, N_b, K).
    """
    h_bs: np.ndarray
    ul_mag: np.ndarray


def target_array(batch, arch):
    if arch.kind == "bsdualnet-fr":
        return nx.from_complex(batch.h_bs)
    return grid_array(batch.h_bs, arch.n_h, arch.n_v)


def _ul_grid(batch, arch):
    return grid_array(batch.ul_mag.astype(complex), arch.n_h, arch.n_v)[..., :1]


def _soft_feedback(g, bits, temperature):
    scale = nx.absmax(g, axis=(-3, -2, -1), keepdims=True) + 1e-300
    return nx.soft_quantize(g / scale, bits, temperature) * scale


def _hard_feedback(t_complex, h, bits, noise_std, rng):
    """UE side: pilots through T, LS estimate, hard-quantized per-UE record."""
    s = pilot_symbols(t_complex.shape[-1])
    y = transmit_csirs(h, t_complex[:, None], s, noise_std, rng)
    g = ls_estimate(y, s)
    if bits:
        g, _ = quantize_roundtrip(g, bits)
    return g


def forward(bundle, batch, mode="hard", temperature=None, noise_std=0.0, rng=None, refine=True):
    """Run a pipeline on a batch.

    ``mode`` is ``"soft"`` (training: soft quantizer at ``temperature``),
    ``"hard"`` (evaluation: pilots, LS estimate, hard quantizer) or ``"none"``
    (no quantization). Returns (initial, final) Tensors in the target layout;
    ``final`` is None when ``refine`` is False (combining network skipped).
    """
    arch, p = bundle.arch, bundle.params
    if mode not in ("soft", "hard", "none"):
        raise ConfigError(f"unknown mode {mode!r}")
    if arch.kind == "bsdualnet-fr":
        return _forward_fr(bundle, batch, mode, temperature, noise_std, rng, refine)
    g_, n_ = batch.h_bs.shape[:2]
    ul = _ul_grid(batch, arch)
    bits = arch.bits if mode != "none" else 0

    if arch.kind == "bsdualnet0":
        sel = top_beam_indices(batch.ul_mag, arch.l)
        vals = np.take_along_axis(batch.h_bs, sel, axis=-1)
        s = pilot_symbols(arch.l)
        y = s * vals
        if noise_std > 0:
            rng = np.random.default_rng() if rng is None else rng
            y = y + noise_std / math.sqrt(2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        vals = ls_estimate(y, s)
        if bits:
            vals, _ = quantize_roundtrip(vals, bits)
        initial = nx.constant(grid_array(sparse_map(vals, sel, arch.n_b), arch.n_h, arch.n_v))
        return initial, combining_forward(initial, ul, p, arch) if refine else None

    ul_in = np.moveaxis(ul[..., 0], 1, -1)  # (G, N_H, N_V, N)
    t = beam_merging_tensor(ul_in, p, arch)
    if mode == "soft":
        tt = nx.reshape(nx.cswap(t), (g_, 1, arch.l, arch.n_b, 2))
        g = nx.cmatmul(tt, nx.constant(nx.from_complex(batch.h_bs[..., None])))
        g = _soft_feedback(g, arch.bits, temperature)
    else:
        gc = _hard_feedback(nx.to_complex(t.data), batch.h_bs, bits, noise_std, rng)
        g = nx.constant(nx.from_complex(gc[..., None]))
    if arch.kind == "bsdualnet":
        initial = recovery_net_forward(nx.reshape(g, (g_, n_, 2 * arch.l)), p, arch)
    else:
        x = min_norm_layer(t, g, arch.ridge)
        initial = vec_to_grid(nx.reshape(x, (g_, n_, arch.n_b, 2)), arch.n_h, arch.n_v)
    return initial, combining_forward(initial, ul, p, arch) if refine else None


def _forward_fr(bundle, batch, mode, temperature, noise_std, rng, refine=True):
    arch, p = bundle.arch, bundle.params
    g_, n_ = batch.h_bs.shape[:2]
    ul = grid_array(np.moveaxis(batch.ul_mag, -1, -2).astype(complex), arch.n_h, arch.n_v)[..., 0]
    ul_in = np.transpose(ul, (0, 3, 4, 2, 1))  # (G, N, K, N_H, N_V) -> (G, N_H, N_V, K, N)
    t = beam_merging_tensor(ul_in, p, arch)
    h_p = batch.h_bs[..., list(arch.placement.pilot_rb_indices)]  # (G, N, N_b, K_p)
    if mode == "soft":
        tt = nx.reshape(nx.cswap(t), (g_, 1, arch.l, arch.n_b, 2))
        gm = nx.cmatmul(tt, nx.constant(nx.from_complex(h_p)))
        code = fcm_encode(gm, p, arch, temperature)
    else:
        tc = nx.to_complex(t.data)
        cols = np.moveaxis(h_p, -1, -2)  # (G, N, K_p, N_b)
        s = pilot_symbols(arch.l)
        y = transmit_csirs(cols, tc[:, None, None], s, noise_std, rng)
        gm = np.moveaxis(ls_estimate(y, s), -1, -2)  # (G, N, L, K_p)
        code = fcm_encode(nx.from_complex(gm), p, arch, quantize=mode == "hard")
    initial = fcm_decode(code, p, arch)
    if not refine:
        return initial, None
    side = nx.constant(batch.ul_mag[..., None])
    return initial, combining_forward(initial, side, p, arch)


def losses(bundle, batch, **kw):
    """(loss1, loss2, initial, final): sums over UEs of squared Frobenius errors.

    With ``refine=False`` the combining network is skipped and loss2 is None.
    """
    initial, final = forward(bundle, batch, **kw)
    target = nx.constant(target_array(batch, bundle.arch))
    loss1 = nx.tsum(nx.square(initial - target))
    loss2 = None if final is None else nx.tsum(nx.square(final - target))
    return loss1, loss2, initial, final


# ---------------------------------------------------------------- dataset plumbing

def beam_domain(dataset, obm=None):
    """(h_bs_dl, |h_bs_ul|), each (D, N_b, K)."""
    obm = obm or build_obm(dataset.geometry)
    return to_beam_domain(dataset.h_dl, obm), np.abs(to_beam_domain(dataset.h_ul, obm))


def group_samples(n_samples, n_ues, order=None):
    """Split sample indices into groups of ``n_ues``; the last group wraps around."""
    order = np.arange(n_samples) if order is None else np.asarray(order)
    n_groups = -(-n_samples // n_ues)
    idx = np.resize(order, n_groups * n_ues)
    return idx.reshape(n_groups, n_ues)


def make_batch(hb, ul, groups, rbs, arch):
    """Gather a Batch for sample groups (G, N); ``rbs`` gives one RB per group (ignored for FR)."""
    if arch.kind == "bsdualnet-fr":
        return Batch(hb[groups], ul[groups])
    rbs = np.asarray(rbs)[:, None]
    return Batch(hb[groups, :, rbs], ul[groups, :, rbs])


def predict(bundle, dataset, obm=None, mode="hard", chunk=512, noise_std=0.0, rng=None):
    """Beam-domain DL estimates (D, N_b, K) for every sample of ``dataset``."""
    arch = bundle.arch
    hb, ul = beam_domain(dataset, obm)
    d, nb, k = hb.shape
    if d == 0:
        return np.zeros((0, nb, k), dtype=complex)
    groups = group_samples(d, arch.n_ues)
    real = (np.arange(groups.size) < d).reshape(groups.shape)  # wrap-around fillers are dropped
    out = np.zeros((d, nb, k), dtype=complex)
    if arch.kind == "bsdualnet-fr":
        gg, rr, vv = groups, np.zeros(len(groups), dtype=int), real
    else:
        gg = np.repeat(groups, k, axis=0)
        rr = np.tile(np.arange(k), len(groups))
        vv = np.repeat(real, k, axis=0)
    for i in range(0, len(gg), chunk):
        grp, rbs, keep = gg[i:i + chunk], rr[i:i + chunk], vv[i:i + chunk]
        batch = make_batch(hb, ul, grp, rbs, arch)
        _, final = forward(bundle, batch, mode=mode, noise_std=noise_std, rng=rng)
        if arch.kind == "bsdualnet-fr":
            out[grp[keep]] = nx.to_complex(final.data)[keep]
        else:
            est = grid_to_vec(final.data)  # (G, N, N_b)
            rb_idx = np.broadcast_to(rbs[:, None], grp.shape)
            out[grp[keep], :, rb_idx[keep]] = est[keep]
    return out
