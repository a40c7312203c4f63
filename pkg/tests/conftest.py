"""Shared fixtures. The desk-scale training runs are expensive, so they are built once per session."""
import time

import numpy as np
import pytest

from bsfeedback import channel
from bsfeedback.models import Architecture, TrainConfig, evaluate, train_two_stage
from bsfeedback.models.pipelines import beam_domain
from bsfeedback.recovery import beam_selection_baseline, gaussian_merging, ista_baseline, nmse_db

DESK_SEED = 2024
DESK_SAMPLES = 2000
DESK_L = 8


@pytest.fixture(scope="session")
def outdoor_small():
    ds = channel.generate_dataset(channel.preset("outdoor-like"), channel.UpaGeometry(),
                                  channel.FddLinkConfig(k_rbs=8), 120, seed=11)
    return channel.split_dataset(ds)


@pytest.fixture(scope="session")
def desk_runs():
    """Criterion-6 experiment: 2,000 outdoor-like samples, N_b=32, K=8, L=8, fixed seed."""
    t0 = time.perf_counter()
    ds = channel.generate_dataset(channel.preset("outdoor-like"), channel.UpaGeometry(),
                                  channel.FddLinkConfig(k_rbs=8), DESK_SAMPLES, seed=DESK_SEED)
    train, val, test = channel.split_dataset(ds)
    hb, ul = beam_domain(test)
    out = {"splits": (train, val, test)}
    out["bs-ul"] = nmse_db(beam_selection_baseline(hb, ul, DESK_L), hb)
    t = gaussian_merging(32, DESK_L, np.random.default_rng(DESK_SEED))
    out["ista"] = nmse_db(ista_baseline(hb, t), hb)
    runs = {
        "bsdualnet0": (Architecture("bsdualnet0", l=DESK_L), TrainConfig(epochs=15, n_first=0, seed=DESK_SEED)),
        "mn-1": (Architecture("bsdualnet-mn", l=DESK_L),
                 TrainConfig(epochs=15, n_first=5, seed=DESK_SEED, n_ues=1)),
        "mn-8": (Architecture("bsdualnet-mn", l=DESK_L),
                 TrainConfig(epochs=15, n_first=5, seed=DESK_SEED, n_ues=8)),
    }
    for name, (arch, cfg) in runs.items():
        bundle = train_two_stage(arch, train, val, cfg)
        out[name] = evaluate(bundle, test)
        out[name + ".bundle"] = bundle
    out["seconds"] = time.perf_counter() - t0
    return out
