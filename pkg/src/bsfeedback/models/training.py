"""Two-stage training of the learned pipelines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .. import numerics as nx
from ..beamspace import build_obm
from ..errors import ConfigError, TrainingError
from ..recovery import nmse_db
from . import pipelines as P

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 200
    lr: float = 1e-3
    lr_late: float = 1e-4
    lr_drop_epoch: int = 100
    n_first: int = 30
    alpha_first: float = 1.0
    alpha_second: float = 0.1
    temp_start: float = 5.0
    temp_end: float = 100.0
    bits: int = 8
    seed: int = 0
    n_ues: int = 1
    rbs_per_sample: int | None = None  # RBs drawn per sample and epoch; None = all

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.n_first < self.epochs:
            raise ConfigError(f"n_first={self.n_first} must lie in [0, epochs={self.epochs})")
        if self.batch_size < 1 or self.n_ues < 1:
            raise ConfigError("batch_size and n_ues must be >= 1")
        if self.rbs_per_sample is not None and self.rbs_per_sample < 1:
            raise ConfigError("rbs_per_sample must be >= 1")

    def learning_rate(self, epoch):
        return self.lr if epoch < self.lr_drop_epoch else self.lr_late

    def alpha(self, epoch, n_first=None):
        n_first = self.n_first if n_first is None else n_first
        return self.alpha_first if epoch < n_first else self.alpha_second

    def temperature(self, epoch, n_first=None):
        """Linear 5 -> 100 ramp across stage 1, then held."""
        n_first = self.n_first if n_first is None else n_first
        if epoch >= n_first or n_first <= 1:
            return self.temp_end
        return self.temp_start + (self.temp_end - self.temp_start) * epoch / (n_first - 1)


def weighted_loss(loss1, loss2, alpha):
    """alpha * loss1 + (1 - alpha) * loss2; exactly loss1 at alpha = 1."""
    if alpha == 1.0:
        return loss1
    return loss1 * alpha + loss2 * (1.0 - alpha)


def _epoch_jobs(rng, n_samples, k_rbs, arch, config):
    """Shuffled (group, rb) pairs for one epoch."""
    groups = P.group_samples(n_samples, arch.n_ues, rng.permutation(n_samples))
    if arch.kind == "bsdualnet-fr":
        return groups, np.zeros(len(groups), dtype=int)
    if config.rbs_per_sample is None or config.rbs_per_sample >= k_rbs:
        gg = np.repeat(groups, k_rbs, axis=0)
        rr = np.tile(np.arange(k_rbs), len(groups))
    else:
        m = config.rbs_per_sample
        gg = np.repeat(groups, m, axis=0)
        rr = np.concatenate([rng.choice(k_rbs, m, replace=False) for _ in range(len(groups))])
    perm = rng.permutation(len(gg))
    return gg[perm], rr[perm]


def evaluate(bundle, dataset, obm=None, mode="hard"):
    """NMSE in dB of the full pipeline on ``dataset`` (beam domain; B is unitary)."""
    obm = obm or build_obm(dataset.geometry)
    est = P.predict(bundle, dataset, obm, mode=mode)
    truth, _ = P.beam_domain(dataset, obm)
    return nmse_db(est, truth)


def train_two_stage(arch, train_set, val_set, config=None, bundle=None, progress=None):
    """Train ``arch`` on ``train_set`` and return the best-validation ModelBundle.

    ``config.bits`` and ``config.n_ues`` override the architecture's. Stage 1
    (epochs < n_first) optimises loss1 with the combining network frozen;
    stage 2 optimises the alpha-weighted sum with everything trainable.
    BSdualNet0 has no trainable initial estimate, so it starts in stage 2.
    """
    config = config or TrainConfig()
    arch = replace(arch, bits=config.bits, n_ues=config.n_ues)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    k_rbs = train_set.h_dl.shape[-1]
    if arch.kind == "bsdualnet-fr" and k_rbs != arch.k_rbs:
        raise ConfigError(f"dataset has K={k_rbs} RBs but the FR architecture expects {arch.k_rbs}")
    per_sample = 1 if arch.kind == "bsdualnet-fr" else min(config.rbs_per_sample or k_rbs, k_rbs)
    if config.batch_size > len(train_set) * per_sample:
        raise ConfigError(f"batch size {config.batch_size} exceeds {len(train_set) * per_sample} training instances")

    rng = np.random.default_rng(config.seed)
    if bundle is None:
        bundle = P.init_bundle(arch, seed=int(rng.integers(2 ** 31)))
    else:
        bundle = P.ModelBundle(arch, bundle.params, list(bundle.history))
    obm = build_obm(train_set.geometry)
    hb, ul = P.beam_domain(train_set, obm)
    n_first = 0 if arch.kind == "bsdualnet0" else config.n_first
    groups_per_step = max(1, config.batch_size // arch.n_ues)
    state = nx.AdamState()
    # the starting point competes too, so training never returns something worse on validation
    best = (evaluate(bundle, val_set, obm), bundle.snapshot())
    start = len(bundle.history)

    for epoch in range(start, start + config.epochs):
        stage1 = epoch - start < n_first
        alpha = config.alpha(epoch - start, n_first)
        temp = config.temperature(epoch - start, n_first)
        lr = config.learning_rate(epoch - start)
        trainable = {k: v for k, v in bundle.params.items() if not (stage1 and k.startswith("c."))}
        gg, rr = _epoch_jobs(rng, len(train_set), k_rbs, arch, config)
        sums, count = np.zeros(2), 0
        for i in range(0, len(gg), groups_per_step):
            batch = P.make_batch(hb, ul, gg[i:i + groups_per_step], rr[i:i + groups_per_step], arch)
            n_inst = batch.h_bs.shape[0] * batch.h_bs.shape[1]
            loss1, loss2, _, _ = P.losses(bundle, batch, mode="soft", temperature=temp, refine=not stage1)
            total = weighted_loss(loss1, loss2, alpha)
            value = total.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            for p in bundle.params.values():
                p.grad = None
            (total * (1.0 / n_inst)).backward()
            grads = {k: p.grad for k, p in trainable.items() if p.grad is not None}
            nx.adam_step(trainable, grads, state, lr)
            sums += (loss1.item(), math.nan if loss2 is None else loss2.item())
            count += n_inst
        val = evaluate(bundle, val_set, obm)
        row = {"epoch": epoch, "loss1": sums[0] / count, "loss2": sums[1] / count, "val_nmse_db": val}
        bundle.history.append(row)
        log.info("epoch %d stage %d loss1 %.4g loss2 %.4g val %.2f dB", epoch, 1 if stage1 else 2,
                 row["loss1"], row["loss2"], val)
        if progress is not None:
            progress(row)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation NMSE at epoch {epoch}")
        if val < best[0]:
            best = (val, bundle.snapshot())
    bundle.restore(best[1])
    return bundle
