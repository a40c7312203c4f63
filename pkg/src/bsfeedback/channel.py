"""Paired UL/DL CSI from a geometric multipath model.

UL and DL share path angles, delays and magnitudes; per-path phases are
drawn independently for each link. Element (m, n) of the N_H x N_V array
(m horizontal, n vertical) sits at vector index ``m + N_H * n``, i.e. the
column-major vec(H) ordering.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, FormatError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class UpaGeometry:
    n_h: int = 8
    n_v: int = 4
    spacing: float = 0.5  # in wavelengths of the DL carrier

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ConfigError("UPA needs n_h >= 1 and n_v >= 1")
        if not self.spacing > 0:
            raise ConfigError("element spacing must be positive")

    @property
    def n_b(self):
        return self.n_h * self.n_v


@dataclass(frozen=True)
class FddLinkConfig:
    f_ul_hz: float = 5.1e9
    f_dl_hz: float = 5.3e9
    k_rbs: int = 8
    subcarriers_per_rb: int = 12
    subcarrier_spacing_hz: float = 15e3
    n_f: int = 12
    n_o: int = 14

    def __post_init__(self):
        if self.f_ul_hz == self.f_dl_hz:
            raise ConfigError("FDD link needs distinct UL and DL carriers")
        if self.k_rbs < 1:
            raise ConfigError("k_rbs must be >= 1")

    @property
    def rb_bandwidth_hz(self):
        return self.subcarriers_per_rb * self.subcarrier_spacing_hz

    def rb_offsets_hz(self):
        """Centre frequency of each RB relative to the carrier."""
        k = np.arange(self.k_rbs)
        return (k - (self.k_rbs - 1) / 2.0) * self.rb_bandwidth_hz


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "outdoor-like"
    path_count: int = 6
    angular_spread_deg: float = 5.0
    max_delay_spread_s: float = 1e-6
    los_power_ratio: float = 0.5
    cell_radius_m: float = 200.0
    bs_height_m: float = 20.0
    sector_half_width_deg: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.path_count < 1:
            raise ConfigError("path_count must be >= 1")
        if self.angular_spread_deg < 0 or self.max_delay_spread_s < 0:
            raise ConfigError("spreads must be non-negative")
        if not 0.0 <= self.los_power_ratio <= 1.0:
            raise ConfigError("los_power_ratio must lie in [0, 1]")


PRESETS = {
    "outdoor-like": ScenarioConfig("outdoor-like", 6, 5.0, 1e-6, 0.5, 200.0),
    "indoor-like": ScenarioConfig("indoor-like", 24, 40.0, 100e-9, 0.2, 30.0),
}


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides)


@dataclass
class PathSet:
    azimuth: np.ndarray
    elevation: np.ndarray
    delay: np.ndarray
    magnitude: np.ndarray
    ul_phase: np.ndarray
    dl_phase: np.ndarray
    los: np.ndarray

    def __len__(self):
        return len(self.magnitude)


@dataclass
class ChannelSample:
    h_dl: np.ndarray  # complex (N_b, K)
    h_ul: np.ndarray
    ue_id: int = 0
    scenario: str = ""


def sample_paths(rng, scenario):
    """Draw one UE's multipath geometry."""
    half = math.radians(scenario.sector_half_width_deg)
    r_min = min(10.0, scenario.cell_radius_m)
    dist = math.sqrt(rng.uniform(r_min ** 2, scenario.cell_radius_m ** 2))
    az0 = rng.uniform(-half, half)
    el0 = -math.atan2(scenario.bs_height_m, dist)

    has_los = scenario.los_power_ratio > 0
    n_scat = scenario.path_count - 1 if has_los else scenario.path_count
    spread = math.radians(scenario.angular_spread_deg)
    az = az0 + spread * rng.standard_normal(n_scat)
    el = el0 + spread * rng.standard_normal(n_scat)
    delay = rng.uniform(0.0, scenario.max_delay_spread_s, n_scat)
    if scenario.max_delay_spread_s > 0:
        power = np.exp(-delay / (scenario.max_delay_spread_s / 2.0))
    else:
        power = np.ones(n_scat)
    if n_scat:
        scat_share = (1.0 - scenario.los_power_ratio) if has_los else 1.0
        power = power / power.sum() * scat_share
    if has_los:
        az = np.concatenate([[az0], az])
        el = np.concatenate([[el0], el])
        delay = np.concatenate([[0.0], delay])
        power = np.concatenate([[scenario.los_power_ratio], power])
    power = power / power.sum()
    n = len(power)
    return PathSet(
        azimuth=np.clip(az, -math.pi / 2, math.pi / 2),
        elevation=np.clip(el, -math.pi / 2, math.pi / 2),
        delay=delay,
        magnitude=np.sqrt(power),
        ul_phase=rng.uniform(0.0, 2 * math.pi, n),
        dl_phase=rng.uniform(0.0, 2 * math.pi, n),
        los=np.arange(n) == 0 if has_los else np.zeros(n, dtype=bool),
    )


def steering_vector(geometry, azimuth, elevation, wavelength=1.0):
    """UPA response, unit-modulus entries.

    ``wavelength`` is in units of the wavelength ``geometry.spacing`` refers to.
    Scalar angles give shape (N_b,); arrays of P angles give (N_b, P).
    """
    az, el = np.asarray(azimuth, dtype=float), np.asarray(elevation, dtype=float)
    u = np.sin(az) * np.cos(el)
    v = np.sin(el)
    m = np.tile(np.arange(geometry.n_h), geometry.n_v)
    n = np.repeat(np.arange(geometry.n_v), geometry.n_h)
    d = geometry.spacing / wavelength
    phase = 2 * np.pi * d * (np.multiply.outer(m, u) + np.multiply.outer(n, v))
    return np.exp(1j * phase)


def synthesize_csi(paths, geometry, link, side):
    """Sum-of-paths narrowband CSI per RB, complex (N_b, K)."""
    if side == "DL":
        phase, freq = paths.dl_phase, link.f_dl_hz
    elif side == "UL":
        phase, freq = paths.ul_phase, link.f_ul_hz
    else:
        raise ConfigError(f"side must be 'UL' or 'DL', got {side!r}")
    a = steering_vector(geometry, paths.azimuth, paths.elevation, wavelength=link.f_dl_hz / freq)
    gains = paths.magnitude * np.exp(1j * phase)
    freq_resp = np.exp(-2j * np.pi * np.multiply.outer(paths.delay, link.rb_offsets_hz()))
    return a @ (gains[:, None] * freq_resp)


def _unit_power(h):
    return h / math.sqrt(np.mean(np.sum(np.abs(h) ** 2, axis=0)))


def generate_sample(scenario, geometry, link, index, base_seed=None):
    seed = scenario.seed if base_seed is None else base_seed
    rng = np.random.default_rng(seed + index)
    paths = sample_paths(rng, scenario)
    return ChannelSample(
        h_dl=_unit_power(synthesize_csi(paths, geometry, link, "DL")),
        h_ul=_unit_power(synthesize_csi(paths, geometry, link, "UL")),
        ue_id=index,
        scenario=scenario.name,
    )


@dataclass
class ChannelDataset:
    geometry: UpaGeometry
    link: FddLinkConfig
    scenario: ScenarioConfig
    h_dl: np.ndarray  # complex (D, N_b, K)
    h_ul: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.h_dl.shape[0]

    def samples(self):
        return [ChannelSample(self.h_dl[i], self.h_ul[i], i, self.scenario.name) for i in range(len(self))]

    def subset(self, idx):
        return replace(self, h_dl=self.h_dl[idx], h_ul=self.h_ul[idx])

    @classmethod
    def from_samples(cls, samples, geometry, link, scenario):
        nb, k = geometry.n_b, link.k_rbs
        if samples:
            h_dl = np.stack([s.h_dl for s in samples])
            h_ul = np.stack([s.h_ul for s in samples])
        else:
            h_dl = h_ul = np.zeros((0, nb, k), dtype=complex)
        return cls(geometry, link, scenario, h_dl, h_ul)


def generate_dataset(scenario, geometry=None, link=None, n_samples=1000, seed=None):
    """Generate ``n_samples`` UEs; sample i uses RNG seed ``seed + i``."""
    geometry = geometry or UpaGeometry()
    link = link or FddLinkConfig()
    if n_samples < 0:
        raise ConfigError("n_samples must be >= 0")
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    samples = [generate_sample(scenario, geometry, link, i) for i in range(n_samples)]
    return ChannelDataset.from_samples(samples, geometry, link, scenario)


def split_dataset(dataset, fractions=(57143, 28571, 14286)):
    """Contiguous train/val/test split in the given proportions."""
    total = float(sum(fractions))
    n = len(dataset)
    n_train = int(round(n * fractions[0] / total))
    n_val = int(round(n * fractions[1] / total))
    return (dataset.subset(slice(0, n_train)),
            dataset.subset(slice(n_train, n_train + n_val)),
            dataset.subset(slice(n_train + n_val, n)))


# ---------------------------------------------------------------- file format

MAGIC = b"BSFD"
VERSION = 1


def write_dataset(dataset, path):
    """Write the "BSFD" little-endian dataset file."""
    blob = json.dumps({"scenario": asdict(dataset.scenario), "link": asdict(dataset.link),
                       "spacing": dataset.geometry.spacing}, sort_keys=True).encode("utf-8")
    g = dataset.geometry
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", VERSION, g.n_h, g.n_v, dataset.link.k_rbs, len(dataset)))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for i in range(len(dataset)):
            for h in (dataset.h_dl[i], dataset.h_ul[i]):
                inter = np.stack([h.real, h.imag], axis=-1).astype("<f8")
                fh.write(inter.tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a BSFD dataset")
    try:
        version, n_h, n_v, k, count = struct.unpack_from("<5I", blob, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (jlen,) = struct.unpack_from("<I", blob, 24)
        header = json.loads(blob[28:28 + jlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    nb = n_h * n_v
    start = 28 + jlen
    need = count * 2 * nb * k * 2 * 8
    if len(blob) - start != need:
        raise FormatError(f"{path}: payload is {len(blob) - start} bytes, expected {need}")
    raw = np.frombuffer(blob, dtype="<f8", offset=start).reshape(count, 2, nb, k, 2)
    z = raw[..., 0] + 1j * raw[..., 1]
    geometry = UpaGeometry(n_h, n_v, header["spacing"])
    link = FddLinkConfig(**header["link"])
    scenario = ScenarioConfig(**header["scenario"])
    return ChannelDataset(geometry, link, scenario, np.ascontiguousarray(z[:, 0]),
                          np.ascontiguousarray(z[:, 1]))
