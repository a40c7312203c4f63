"""Experiment harness: dataset generation, training, evaluation sweeps and reports.

Usage::

    python -m bsfeedback generate --preset outdoor-like --out runs/a
    python -m bsfeedback train    --config exp.json --out runs/a
    python -m bsfeedback eval     --config exp.json --out runs/a
    python -m bsfeedback report   runs/a runs/b

Seeds: one top-level seed feeds ``numpy.random.SeedSequence``; child 0 draws the
dataset, child 1 the fixed ISTA merging matrix, child 2 the pilot noise, and
child 3 + i the training run of learned cell i (in grid order).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import channel
from .airlink import make_placement
from .beamspace import beam_energy_fraction, build_obm, to_beam_domain
from .errors import BsfError, ConfigError, FormatError
from .models import complexity, pipelines, training
from .recovery import beam_selection_baseline, gaussian_merging, ista_baseline, nmse_db

log = logging.getLogger("bsfeedback")

SCHEMA_VERSION = 1
BASELINES = ("bs-ul", "bs-dl", "ista", "ista-fixed")
LEARNED = ("bsdualnet0", "bsdualnet", "bsdualnet-mn", "bsdualnet-fr")
METHODS = BASELINES + LEARNED
RESULT_FIELDS = ("method", "scenario", "L", "FR", "BR", "CR", "CR_eff", "bits", "nmse_db", "params", "macs", "seconds")


@dataclass
class Grid:
    L: list = field(default_factory=lambda: [8])
    N: list = field(default_factory=lambda: [1])
    FR: list = field(default_factory=lambda: [1])
    BR: list = field(default_factory=lambda: [1])
    CR: list = field(default_factory=lambda: [1.0])


@dataclass
class ExperimentConfig:
    version: int = SCHEMA_VERSION
    scenario: str = "outdoor-like"
    scenario_overrides: dict = field(default_factory=dict)
    geometry: dict = field(default_factory=dict)
    link: dict = field(default_factory=dict)
    n_samples: int = 2000
    dataset: str | None = None
    methods: list = field(default_factory=lambda: ["bs-ul", "bs-dl"])
    grid: Grid = field(default_factory=Grid)
    bits: int = 8
    noise_std: float = 0.0
    train: dict = field(default_factory=dict)
    checkpoint_dir: str | None = None
    train_on_demand: bool = False
    timing: bool = False
    out: str = "results"
    seed: int = 0

    def __post_init__(self):
        if self.version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config version {self.version}; expected {SCHEMA_VERSION}")
        if not self.methods:
            raise ConfigError("at least one method must be selected")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; known: {list(METHODS)}")
        if self.scenario not in channel.PRESETS:
            raise ConfigError(f"unknown scenario preset {self.scenario!r}")
        if self.n_samples < 1 and self.dataset is None:
            raise ConfigError("n_samples must be >= 1")
        _check_keys(channel.ScenarioConfig, self.scenario_overrides, "scenario_overrides")
        _check_keys(channel.UpaGeometry, self.geometry, "geometry")
        _check_keys(channel.FddLinkConfig, self.link, "link")
        _check_keys(training.TrainConfig, self.train, "train")

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        _check_keys(cls, raw, "config")
        if "grid" in raw:
            g = raw["grid"]
            if not isinstance(g, dict):
                raise ConfigError("grid must be an object")
            _check_keys(Grid, g, "grid")
            raw["grid"] = Grid(**{k: list(v) for k, v in g.items()})
        return cls(**raw)

    def scenario_config(self):
        return channel.preset(self.scenario, **self.scenario_overrides)

    def geometry_config(self):
        return channel.UpaGeometry(**self.geometry)

    def link_config(self):
        return channel.FddLinkConfig(**self.link)

    def train_config(self, seed, n_ues):
        kw = {"bits": self.bits, **self.train, "seed": seed, "n_ues": n_ues}
        return training.TrainConfig(**kw)


def _check_keys(cls, raw, where):
    allowed = {f.name for f in fields(cls)}
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {extra}")


def load_config(path=None, **overrides):
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(raw)


def _child_seed(seed, index):
    ss = np.random.SeedSequence(seed).spawn(index + 1)[index]
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------- datasets

def dataset_path(config):
    return Path(config.dataset) if config.dataset else Path(config.out) / f"{config.scenario}.bsfd"


def cmd_generate(config):
    """Write the BSFD dataset for ``config`` and return (path, summary)."""
    if config.n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    geometry = config.geometry_config()
    ds = channel.generate_dataset(config.scenario_config(), geometry, config.link_config(),
                                  config.n_samples, seed=_child_seed(config.seed, 0))
    path = dataset_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    channel.write_dataset(ds, path)
    obm = build_obm(geometry)
    hb = np.moveaxis(to_beam_domain(ds.h_dl, obm), -1, -2).reshape(-1, geometry.n_b)
    frac = float(np.mean([beam_energy_fraction(v, geometry.n_b // 4) for v in hb]))
    summary = {"path": str(path), "samples": len(ds), "scenario": config.scenario,
               "top_quarter_energy_fraction": frac}
    return path, summary


def load_or_generate(config):
    path = dataset_path(config)
    if not path.exists():
        if config.dataset:
            raise ConfigError(f"dataset {path} does not exist")
        cmd_generate(config)
    return channel.read_dataset(path)


# ---------------------------------------------------------------- grid cells

@dataclass(frozen=True)
class Cell:
    method: str
    l: int
    n_ues: int = 1
    fr: int = 1
    br: float = 1.0
    cr: float = 1.0

    @property
    def label(self):
        """Method name as written to results; the UE count is appended when above one."""
        return self.method if self.n_ues == 1 else f"{self.method}[N={self.n_ues}]"

    @property
    def key(self):
        return f"{self.method}-L{self.l}-N{self.n_ues}-FR{self.fr}-BR{_fmt(self.br)}-CR{_fmt(self.cr)}"

    @property
    def cr_eff(self):
        return self.br * self.fr * self.cr


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def expand_grid(config):
    n_b = config.geometry_config().n_b
    k = config.link_config().k_rbs
    cells = []
    for method in config.methods:
        if method == "bsdualnet-fr":
            for fr in config.grid.FR:
                for br in config.grid.BR:
                    for cr in config.grid.CR:
                        pl = make_placement(k, fr, br, n_b)
                        for n in config.grid.N:
                            cells.append(Cell(method, pl.l, n, fr, br, float(cr)))
            continue
        ues = config.grid.N if method in ("bsdualnet", "bsdualnet-mn") else [1]
        for l in config.grid.L:
            if not 1 <= l <= n_b:
                raise ConfigError(f"L={l} outside [1, {n_b}]")
            for n in ues:
                cells.append(Cell(method, l, n, 1, n_b / l, 1.0))
    return cells


def _architecture(cell, config):
    g = config.geometry_config()
    k = config.link_config().k_rbs
    if cell.method == "bsdualnet-fr":
        return pipelines.Architecture.for_fr(g.n_h, g.n_v, k, cell.fr, int(cell.br), cell.cr,
                                             n_ues=cell.n_ues, bits=config.bits)
    return pipelines.Architecture(cell.method, g.n_h, g.n_v, cell.l, n_ues=cell.n_ues, bits=config.bits)


def checkpoint_root(config):
    return Path(config.checkpoint_dir) if config.checkpoint_dir else Path(config.out) / "checkpoints"


def _learned_cells(config):
    return [(i, c) for i, c in enumerate(c for c in expand_grid(config) if c.method in LEARNED)]


def _train_cell(index, cell, config, train_set, val_set):
    arch = _architecture(cell, config)
    tcfg = config.train_config(_child_seed(config.seed, 3 + index), cell.n_ues)
    bundle = training.train_two_stage(arch, train_set, val_set, tcfg)
    bundle.save(checkpoint_root(config) / cell.key)
    return bundle


def cmd_train(config):
    """Train every learned cell of the grid; returns {cell key: ModelBundle}."""
    ds = load_or_generate(config)
    train_set, val_set, _ = channel.split_dataset(ds)
    out = {}
    rows = []
    for index, cell in _learned_cells(config):
        bundle = _train_cell(index, cell, config, train_set, val_set)
        out[cell.key] = bundle
        rows += [{"model": cell.key, **r} for r in bundle.history]
    if rows:
        _write_history(rows, Path(config.out) / "history.csv")
    return out


def _write_history(rows, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model",) + pipelines.HISTORY_FIELDS)
        for r in rows:
            w.writerow([r["model"], r["epoch"]] + [repr(float(r[k])) for k in pipelines.HISTORY_FIELDS[1:]])


def _load_bundle(index, cell, config, train_set, val_set):
    path = checkpoint_root(config) / cell.key
    if (path / "params.bsnn").exists():
        return pipelines.ModelBundle.load(path)
    if not config.train_on_demand:
        raise ConfigError(f"missing model checkpoint for {cell.key} (expected {path}); run 'train' first")
    return _train_cell(index, cell, config, train_set, val_set)


def _evaluate_cell(cell, config, test_set, hb, ul, bundle, noise_rng):
    """Beam-domain estimates plus (params, macs) for one cell."""
    if cell.method in ("bs-ul", "bs-dl"):
        mags = ul if cell.method == "bs-ul" else np.abs(hb)
        return beam_selection_baseline(hb, mags, cell.l, config.bits), 0, 0
    if cell.method in ("ista", "ista-fixed"):
        t = gaussian_merging(hb.shape[1], cell.l, np.random.default_rng(_child_seed(config.seed, 1)))
        est = ista_baseline(hb, t, config.bits, "fixed" if cell.method == "ista-fixed" else "continuation",
                            config.noise_std, noise_rng)
        return est, 0, 0
    rep = complexity.count_complexity(bundle)
    est = pipelines.predict(bundle, test_set, noise_std=config.noise_std, rng=noise_rng)
    return est, rep.params, rep.macs


def cmd_run(config):
    """Evaluate every grid cell on the test split; write results.csv/json and estimates."""
    ds = load_or_generate(config)
    train_set, val_set, test_set = channel.split_dataset(ds)
    obm = build_obm(ds.geometry)
    hb, ul = pipelines.beam_domain(test_set, obm)
    out = Path(config.out)
    (out / "estimates").mkdir(parents=True, exist_ok=True)
    noise_rng = np.random.default_rng(_child_seed(config.seed, 2))
    k = ds.link.k_rbs
    learned_index = {c: i for i, c in _learned_cells(config)}
    rows = []
    for cell in expand_grid(config):
        bundle = None
        if cell.method in LEARNED:
            bundle = _load_bundle(learned_index[cell], cell, config, train_set, val_set)
        t0 = time.perf_counter()
        est, n_params, n_macs = _evaluate_cell(cell, config, test_set, hb, ul, bundle, noise_rng)
        seconds = time.perf_counter() - t0
        est_file = out / "estimates" / f"{cell.key}.npy"
        np.save(est_file, est)
        if cell.method == "bsdualnet-fr":
            arch = bundle.arch
            pilot_res, fb_bits = arch.placement.total_res, arch.codeword_length * config.bits
        else:
            pilot_res, fb_bits = cell.l * k, 2 * cell.l * k * config.bits
        rows.append({
            "method": cell.label, "scenario": config.scenario, "L": cell.l, "FR": cell.fr,
            "BR": cell.br, "CR": cell.cr, "CR_eff": cell.cr_eff, "bits": config.bits,
            "nmse_db": nmse_db(est, hb), "params": n_params, "macs": n_macs,
            "seconds": seconds if config.timing else None,
            "n_ues": cell.n_ues, "pilot_res": pilot_res, "feedback_bits": fb_bits,
            "estimates": str(est_file.relative_to(out)),
        })
    write_results(rows, out)
    np.save(out / "estimates" / "truth.npy", hb)
    return rows


def _cell_text(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return _fmt(v) if v.is_integer() and abs(v) < 1e15 else repr(v)
    return str(v)


def write_results(rows, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([_cell_text(r[f]) for f in RESULT_FIELDS])
    (out / "results.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- report

def read_results(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_FIELDS:
            raise FormatError(f"{path}: header {header} does not match {list(RESULT_FIELDS)}")
        rows = []
        for line in reader:
            if len(line) != len(RESULT_FIELDS):
                raise FormatError(f"{path}: row has {len(line)} fields, expected {len(RESULT_FIELDS)}")
            rows.append(dict(zip(RESULT_FIELDS, line)))
    return rows


def cmd_report(paths):
    """Merge results.csv files (or directories holding them) and flag the best NMSE per
    (scenario, CR_eff). Returns the merged rows, each with a ``best`` flag."""
    files = []
    for p in map(Path, paths):
        files += sorted(p.rglob("results.csv")) if p.is_dir() else ([p] if p.exists() else [])
    if not files:
        raise ConfigError(f"no results found in {', '.join(map(str, paths))}")
    rows = []
    for f in files:
        for r in read_results(f):
            try:
                r["_nmse"] = float(r["nmse_db"])
                r["_cr_eff"] = round(float(r["CR_eff"]), 9)
            except ValueError:
                raise FormatError(f"{f}: non-numeric nmse_db/CR_eff in row {r}") from None
            r["source"] = str(f)
            rows.append(r)
    best = {}
    for r in rows:
        key = (r["scenario"], r["_cr_eff"])
        best[key] = min(best.get(key, math.inf), r["_nmse"])
    for r in rows:
        r["best"] = r["_nmse"] == best[(r["scenario"], r["_cr_eff"])]
    rows.sort(key=lambda r: (r["scenario"], r["_cr_eff"], r["_nmse"], r["method"]))
    for r in rows:
        del r["_nmse"], r["_cr_eff"]
    return rows


def format_report(rows):
    cols = ("scenario", "CR_eff", "method", "L", "FR", "BR", "CR", "nmse_db", "params", "macs")
    table = [cols] + [tuple(("*" if c == "method" and r["best"] else "") + str(r[c]) for c in cols) for r in rows]
    widths = [max(len(t[i]) for t in table) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(t, widths)).rstrip() for t in table]
    return "\n".join(lines) + "\n(* = best NMSE at this scenario and CR_eff)"


def write_report(rows, path):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS + ("best", "source"))
        for r in rows:
            w.writerow([r[f] for f in RESULT_FIELDS] + [int(r["best"]), r["source"]])


# ---------------------------------------------------------------- entry point

def build_parser():
    parser = argparse.ArgumentParser(prog="bsfeedback", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="top-level seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--preset", choices=sorted(channel.PRESETS), help="scenario preset (overrides config)")
        return p

    g = common(sub.add_parser("generate", help="write the BSFD dataset"))
    g.add_argument("--samples", type=int, help="number of UE samples (overrides config)")
    common(sub.add_parser("train", help="train the learned methods of the grid"))
    for name in ("eval", "run"):
        common(sub.add_parser(name, help="evaluate every method x setting cell"))
    r = sub.add_parser("report", help="merge result files and flag the best per CR_eff")
    r.add_argument("paths", nargs="+", help="results.csv files or directories")
    r.add_argument("--out", help="write the merged table to this CSV file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            rows = cmd_report(args.paths)
            print(format_report(rows))
            if args.out:
                write_report(rows, args.out)
            return 0
        overrides = {"seed": args.seed, "out": args.out, "scenario": args.preset}
        if args.command == "generate":
            overrides["n_samples"] = args.samples
        config = load_config(args.config, **overrides)
        if args.command == "generate":
            _, summary = cmd_generate(config)
            print(json.dumps(summary, indent=2))
        elif args.command == "train":
            bundles = cmd_train(config)
            for key, b in bundles.items():
                best = min(r["val_nmse_db"] for r in b.history)
                print(f"{key}: best validation NMSE {best:.2f} dB")
        else:
            rows = cmd_run(config)
            for r in rows:
                print(f"{r['method']:<22} L={r['L']:<3} CR_eff={_cell_text(r['CR_eff']):<6} NMSE {r['nmse_db']:7.2f} dB")
        return 0
    except (BsfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
