"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from bsfeedback import airlink as al
from bsfeedback import channel, cli
from bsfeedback import numerics as nx
from bsfeedback import recovery as rc
from bsfeedback.beamspace import (BeamSelection, beam_energy_fraction, build_obm, from_beam_domain, to_beam_domain,
                                  top_beam_indices)
from bsfeedback.models import Architecture, Batch, count_complexity, init_bundle, losses, weighted_loss
from bsfeedback.models import pipelines as P

GEOM = channel.UpaGeometry()


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, seconds=None, limit=None):
        timing = "" if seconds is None else f" [{seconds:.2f}s" + ("" if limit is None else f" / {limit}s") + "]"
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}{timing}")
        assert ok, detail
    return emit


# ---------------------------------------------------------------- 1

def test_criterion_01_projector_identities(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for l in (4, 8, 16):
        for _ in range(100):
            t = al.MergingMatrix(crandn(rng, 32, l))
            p = rc.build_itilde(t)
            g = crandn(rng, l)
            a = t.t.T
            oracle = np.linalg.pinv(a) @ g  # brute-force pseudoinverse
            worst = max(worst, abs(np.trace(p) - l), np.max(np.abs(p @ p - p)), np.max(np.abs(p - p.conj().T)),
                        np.max(np.abs(rc.min_norm_recover(g, t, ridge=0) - oracle)))
    dt = time.perf_counter() - t0
    verdict(1, worst < 1e-9 and dt < 10, f"worst identity/oracle deviation {worst:.2e} (< 1e-9)", dt, 10)


# ---------------------------------------------------------------- 2

def test_criterion_02_signal_model_round_trip(verdict):
    t0 = time.perf_counter()
    ds = channel.generate_dataset(channel.preset("outdoor-like"), GEOM, channel.FddLinkConfig(), 100, seed=202)
    obm = build_obm(GEOM)
    sel = BeamSelection(np.arange(32))
    t = al.selection_matrix(sel.indices, 32)
    s = al.pilot_symbols(32)
    worst = 0.0
    ratios, floors = [], []
    for h in ds.h_dl:
        for k in range(h.shape[1]):
            hk = h[:, k]
            g = al.ls_estimate(al.transmit_csirs(to_beam_domain(hk, obm), t, s), s)
            h_hat = rc.recover_selected_beams(g, sel, obm)
            h_mn = from_beam_domain(rc.min_norm_recover(g, t, ridge=0), obm)
            worst = max(worst, np.max(np.abs(h_hat - hk)), np.max(np.abs(h_mn - hk)))
            rec = al.quantize_feedback(g, 8)
            hq = rc.recover_selected_beams(al.dequantize(rec), sel, obm)
            e = np.sum(np.abs(hk) ** 2)
            ratios.append(np.sum(np.abs(hq - hk) ** 2) / e)
            floors.append(al.quantization_floor(g, e, 8))
    ratio = np.mean(ratios) / np.mean(floors)
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and 0.5 <= ratio <= 2.0 and dt < 5
    verdict(2, ok, f"exact error {worst:.2e} (< 1e-10); 8-bit NMSE / floor = {ratio:.3f} (within 2x)", dt, 5)


# ---------------------------------------------------------------- 3

def _layer_checks(rng):
    r = lambda *s: rng.standard_normal(s)
    p = lambda *s: nx.parameter(r(*s))
    checks = {
        "dense": ({"w": p(4, 6), "b": p(4), "x": p(3, 6)},
                  lambda q: nx.tsum(nx.square(nx.dense(q["x"], q["w"], q["b"])))),
        "conv2d+tanh": ({"x": p(4, 3, 2), "k": p(3, 3, 2, 3), "b": p(3)},
                        lambda q: nx.tsum(nx.square(nx.tanh(nx.circular_conv2d(q["x"], q["k"], q["b"]))))),
        "conv3d": ({"x": p(3, 4, 3, 2), "k": p(3, 3, 3, 2, 2), "b": p(2)},
                   lambda q: nx.tsum(nx.tanh(nx.circular_conv3d(q["x"], q["k"], q["b"])))),
        "residual": ({"x": p(4, 3, 2), "k": p(3, 3, 2, 2), "b": p(2)},
                     lambda q: nx.tsum(nx.square(q["x"] + nx.circular_conv2d(q["x"], q["k"], q["b"])))),
        "soft-quantize": ({"x": nx.parameter(rng.uniform(-1, 1, 30))},
                          lambda q: nx.tsum(nx.square(nx.soft_quantize(q["x"], 8, 5.0)))),
    }
    t = al.normalize_columns(crandn(rng, 32, 8))
    checks["ridge min-norm"] = (
        {"t": nx.parameter(nx.from_complex(t)[None]), "g": nx.parameter(r(1, 2, 8, 3, 2))},
        lambda q: nx.tsum(nx.square(P.min_norm_layer(q["t"], q["g"], 1e-8) * 0.7 + 0.1)))
    return checks


def _variant_checks(rng):
    archs = [Architecture("bsdualnet0", l=8, n_ues=2, n_blocks=2),
             Architecture("bsdualnet", l=8, n_ues=2, n_blocks=2),
             Architecture("bsdualnet-mn", l=8, n_ues=2, n_blocks=2),
             Architecture.for_fr(8, 4, 4, 2, 4, 2, n_ues=2, n_blocks=2)]
    out = {}
    for arch in archs:
        bundle = init_bundle(arch, seed=3)
        for v in bundle.params.values():  # wake up zero-initialised residual outputs
            if not v.data.any():
                v.data = 0.05 * rng.standard_normal(v.data.shape)
        shape = (2, 2, 32, arch.k_rbs) if arch.kind == "bsdualnet-fr" else (2, 2, 32)
        h = crandn(rng, *shape)
        batch = Batch(h, np.abs(h + 0.3 * crandn(rng, *shape)))

        def loss(_, bundle=bundle, batch=batch):
            l1, l2, _, _ = losses(bundle, batch, mode="soft", temperature=5.0)
            return weighted_loss(l1, l2, 0.3)
        out[arch.kind] = (bundle.params, loss)
    return out


def test_criterion_03_gradient_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    errs = {}
    for name, (params, fn) in {**_layer_checks(rng), **_variant_checks(rng)}.items():
        errs[name] = nx.grad_check(fn, params, samples_per_param=3, rng=np.random.default_rng(1))
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and dt < 120
    verdict(3, ok, f"{len(errs)} gradient checks, worst {worst} at {errs[worst]:.2e} (< 1e-4)", dt, 120)


# ---------------------------------------------------------------- 4

def test_criterion_04_generator_energy_and_reciprocity(verdict):
    t0 = time.perf_counter()
    ds = channel.generate_dataset(channel.preset("outdoor-like"), GEOM, channel.FddLinkConfig(), 500, seed=404)
    obm = build_obm(GEOM)
    dl = np.moveaxis(to_beam_domain(ds.h_dl, obm), -1, -2).reshape(-1, 32)
    ul = np.moveaxis(to_beam_domain(ds.h_ul, obm), -1, -2).reshape(-1, 32)
    energy = np.mean([beam_energy_fraction(v, 8) for v in dl])
    a, b = top_beam_indices(np.abs(dl), 8), top_beam_indices(np.abs(ul), 8)
    overlap = np.mean([len(set(x) & set(y)) / 8 for x, y in zip(a, b)])
    dt = time.perf_counter() - t0
    ok = energy >= 0.85 and overlap >= 0.6 and dt < 30
    verdict(4, ok, f"top-quarter energy {energy:.3f} (>= 0.85), UL/DL top-8 overlap {overlap:.3f} (>= 0.6)", dt, 30)


# ---------------------------------------------------------------- 5

def test_criterion_05_beam_selection_trend(verdict):
    t0 = time.perf_counter()
    ds = channel.generate_dataset(channel.preset("outdoor-like"), GEOM, channel.FddLinkConfig(), 600, seed=505)
    hb, ul = P.beam_domain(ds)
    ls = (4, 8, 16, 32)
    up = [rc.nmse_db(rc.beam_selection_baseline(hb, ul, l), hb) for l in ls]
    down = [rc.nmse_db(rc.beam_selection_baseline(hb, np.abs(hb), l), hb) for l in ls]
    mono = all(b <= a for a, b in zip(up, up[1:])) and all(b <= a for a, b in zip(down, down[1:]))
    below = all(d <= u for d, u in zip(down, up))
    gap = abs(up[-1] - down[-1])
    dt = time.perf_counter() - t0
    ok = mono and below and gap < 0.5 and dt < 60
    curve = ", ".join(f"L={l}: {u:.2f}/{d:.2f}" for l, u, d in zip(ls, up, down))
    verdict(5, ok, f"BS-UL/BS-DL dB {curve}; gap at L=32 {gap:.3f} dB", dt, 60)


# ---------------------------------------------------------------- 6

def test_criterion_06_desk_training_trends(verdict, desk_runs):
    r = desk_runs
    checks = {
        "a": r["bsdualnet0"] <= r["bs-ul"] - 1.0,
        "b": r["mn-1"] < r["bsdualnet0"],
        "c": r["mn-8"] >= r["mn-1"],
        "d": r["mn-1"] < r["ista"],
    }
    ok = all(checks.values()) and r["seconds"] < 1800
    detail = (f"BS-UL {r['bs-ul']:.2f}, BSdualNet0 {r['bsdualnet0']:.2f}, MN(N=1) {r['mn-1']:.2f}, "
              f"MN(N=8) {r['mn-8']:.2f}, ISTA {r['ista']:.2f} dB; "
              + " ".join(f"({k}){'ok' if v else 'failed'}" for k, v in checks.items()))
    verdict(6, ok, detail, r["seconds"], 1800)


# ---------------------------------------------------------------- 7

def test_criterion_07_ista(verdict):
    t0 = time.perf_counter()
    errs = []
    for seed in range(5):
        rng = np.random.default_rng(700 + seed)
        t = al.MergingMatrix(crandn(rng, 32, 16) / np.sqrt(2))
        x = np.zeros(32, dtype=complex)
        x[rng.choice(32, 3, replace=False)] = crandn(rng, 3)
        est = rc.ista_continuation(t.t.T @ x, t)
        errs.append(np.linalg.norm(est - x) / np.linalg.norm(x))
    hist = []
    rc.ista_recover(t.t.T @ x, t, history=hist, **rc.ISTA_FIXED)
    mono = bool(np.all(np.diff(hist) <= 1e-12 * max(1.0, abs(hist[0]))))
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-3 and mono and len(hist) <= rc.ISTA_FIXED["max_iters"] and dt < 30
    verdict(7, ok, f"planted 3-sparse worst rel. error {max(errs):.2e} (< 1e-3); "
                   f"fixed lambda preset {len(hist)} iterations, monotone={mono}", dt, 30)


# ---------------------------------------------------------------- 8

def test_criterion_08_resource_accounting(verdict):
    t0 = time.perf_counter()
    bad = []
    for fr in (1, 2, 4, 8):
        for br in (1, 2, 4):
            pl = al.make_placement(32, fr, br, 32)
            if pl.total_res != 32 * 32 // (br * fr):
                bad.append((fr, br, pl.total_res))
    cfg = cli.ExperimentConfig.from_dict({"methods": ["bs-ul", "bsdualnet-mn", "bsdualnet-fr"], "link": {"k_rbs": 32},
                                          "grid": {"L": [4, 8, 16], "FR": [1, 2, 4, 8], "BR": [1, 2, 4],
                                                   "CR": [1, 2, 4]}})
    cells = cli.expand_grid(cfg)
    for c in cells:
        if c.cr_eff != c.br * c.fr * c.cr:
            bad.append(c.key)
        if c.method == "bsdualnet-fr":
            arch = cli._architecture(c, cfg)
            if arch.placement.total_res != 32 * 32 // (c.br * c.fr) or arch.cr_eff != c.cr_eff:
                bad.append(c.key)
    dt = time.perf_counter() - t0
    verdict(8, not bad and dt < 1, f"12 placements and {len(cells)} grid rows checked, mismatches: {bad or 'none'}",
            dt, 1)


# ---------------------------------------------------------------- 9

def _conv(cin, cout):
    return 9 * cin * cout + cout


def test_criterion_09_complexity(verdict):
    t0 = time.perf_counter()
    block = _conv(3, 16) + _conv(16, 8) + _conv(8, 4) + _conv(4, 2)
    bm = _conv(1, 16) + _conv(16, 8) + _conv(8, 4) + _conv(4, 2) + (64 * 512 + 512)
    re = (16 * 64 + 64) + _conv(2, 16) + _conv(16, 8) + _conv(8, 4) + _conv(4, 2)
    expected = {"bsdualnet0": 5 * block, "bsdualnet-mn": bm + 5 * block, "bsdualnet": bm + re + 5 * block}
    got = {k: count_complexity(Architecture(k, l=8)).params for k in expected}
    macs = {}
    for fr, br in ((1, 1), (2, 1), (1, 2), (4, 1), (2, 2), (1, 4)):
        macs[(fr, br)] = count_complexity(Architecture.for_fr(8, 4, 32, fr, br, 1)).group_macs("fcm_en.conv")
    base = macs[(1, 1)]
    scaling = all(m * fr * br == base for (fr, br), m in macs.items())
    dt = time.perf_counter() - t0
    ok = got == expected and scaling and dt < 1
    verdict(9, ok, f"params {got} vs hand {expected}; FCM input-stage MACs x FR*BR constant={scaling}", dt, 1)


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    blobs = []
    for run in ("a", "b"):
        cfg = cli.ExperimentConfig.from_dict({
            "methods": ["bs-ul", "bs-dl", "ista", "bsdualnet-mn"], "n_samples": 80, "seed": 1010,
            "grid": {"L": [8]}, "out": str(tmp_path / run), "train_on_demand": True,
            "train": {"epochs": 2, "n_first": 1, "batch_size": 40, "rbs_per_sample": 2}, "noise_std": 0.01})
        cli.cmd_run(cfg)
        blobs.append((tmp_path / run / "results.csv").read_bytes())
    cli.cmd_run(cfg)  # third pass reuses the stored checkpoint
    blobs.append((tmp_path / "b" / "results.csv").read_bytes())
    dt = time.perf_counter() - t0
    verdict(10, blobs[0] == blobs[1] == blobs[2], f"results.csv identical across 3 invocations "
                                                   f"({len(blobs[0])} bytes)", dt)
