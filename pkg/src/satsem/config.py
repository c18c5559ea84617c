"""Experiment configuration: dataclasses, YAML loading, strict validation.

Configs round-trip losslessly through to_dict/from_dict. Unknown keys are
rejected with the full field path so typos never silently fall back to a
default. `fingerprint` hashes the canonical dict and is embedded in every
result row and checkpoint.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class ConstellationConfig:
    num_satellites: int = 8
    altitude_km: float = 700.0
    speed_km_s: float = 7.5
    num_planes: int = 2
    phase_offsets: list | None = None  # radians per satellite; None = staggered default
    min_elevation_deg: float = 10.0
    earth_radius_km: float = 6371.0
    slot_duration_s: float = 2.0
    num_slots: int = 100
    randomize_epoch: bool = True  # draw a uniform orbital-phase offset per episode

    @property
    def orbit_radius_km(self):
        return self.earth_radius_km + self.altitude_km

    @property
    def period_s(self):
        import math

        return 2.0 * math.pi * self.orbit_radius_km / self.speed_km_s

    def validate(self, path="constellation"):
        if self.num_satellites < 1:
            raise ConfigError(f"{path}.num_satellites: must be >= 1")
        if self.altitude_km <= 0:
            raise ConfigError(f"{path}.altitude_km: must be > 0")
        if not 0 <= self.min_elevation_deg < 90:
            raise ConfigError(f"{path}.min_elevation_deg: must be in [0, 90)")
        if self.slot_duration_s <= 0:
            raise ConfigError(f"{path}.slot_duration_s: must be > 0")
        if self.num_slots < 0:
            raise ConfigError(f"{path}.num_slots: must be >= 0")
        if self.num_planes < 1:
            raise ConfigError(f"{path}.num_planes: must be >= 1")
        if self.phase_offsets is not None and len(self.phase_offsets) != self.num_satellites:
            raise ConfigError(f"{path}.phase_offsets: need one entry per satellite")


@dataclass
class UsersConfig:
    num_users: int = 5
    cap_radius_deg: float = 20.0  # angular radius of the user cap
    compute_min_gflops: float = 700.0
    compute_max_gflops: float = 7000.0

    def validate(self, path="users"):
        if self.num_users < 1:
            raise ConfigError(f"{path}.num_users: must be >= 1")
        if not 0 < self.cap_radius_deg <= 90:
            raise ConfigError(f"{path}.cap_radius_deg: must be in (0, 90]")
        if self.compute_min_gflops > self.compute_max_gflops:
            raise ConfigError(f"{path}.compute_min_gflops: exceeds compute_max_gflops")


@dataclass
class ChannelConfig:
    tx_gain: float = 1e4  # linear (40 dB)
    carrier_hz: float = 25e9
    tx_power_w: float = 1.0
    bandwidth_hz: float = 30e6
    noise_temp_k: float = 290.0
    csi_delay_s: float = 1e-6
    light_speed_m_s: float = 3e8

    @property
    def wavelength_m(self):
        return self.light_speed_m_s / self.carrier_hz

    def validate(self, path="channel"):
        for name in ("tx_gain", "carrier_hz", "tx_power_w", "bandwidth_hz", "noise_temp_k", "csi_delay_s", "light_speed_m_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name}: must be > 0")


@dataclass
class IslConfig:
    bandwidth_hz: float = 100e6
    tx_power_w: float = 5.0
    peak_gain: float = 1e4  # linear
    noise_temp_k: float = 290.0
    carrier_hz: float = 25e9

    def validate(self, path="isl"):
        for name in ("bandwidth_hz", "tx_power_w", "peak_gain", "noise_temp_k", "carrier_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name}: must be > 0")


@dataclass
class SemanticsConfig:
    text_bits: int = 4096
    codebook_size: int = 1024
    token_grids: list = field(default_factory=lambda: [[8, 8], [16, 16], [32, 32]])
    step_gflops: float = 686.0
    max_steps: int = 10
    quality_floor_db: float = 8.0
    quality_asymptotes_db: list = field(default_factory=lambda: [19.0, 22.0, 25.0, 28.0])
    quality_rate: float = 0.5
    bit_quality_db: float = 40.0

    def validate(self, path="semantics"):
        if len(self.token_grids) != 3:
            raise ConfigError(f"{path}.token_grids: need grids for the three hybrid modes")
        areas = [a * b for a, b in self.token_grids]
        if not areas[0] < areas[1] < areas[2]:
            raise ConfigError(f"{path}.token_grids: token counts must increase strictly across hybrid modes")
        if len(self.quality_asymptotes_db) != 4:
            raise ConfigError(f"{path}.quality_asymptotes_db: need values for the four semantic modes")
        asym = list(self.quality_asymptotes_db)
        if not all(a < b for a, b in zip(asym, asym[1:])):
            raise ConfigError(f"{path}.quality_asymptotes_db: must increase strictly")
        if asym[-1] >= self.bit_quality_db:
            raise ConfigError(f"{path}.bit_quality_db: must exceed every semantic asymptote")
        if self.quality_rate <= 0:
            raise ConfigError(f"{path}.quality_rate: must be > 0")
        if self.max_steps < 1:
            raise ConfigError(f"{path}.max_steps: must be >= 1")
        if self.step_gflops <= 0:
            raise ConfigError(f"{path}.step_gflops: must be > 0")


@dataclass
class ScenarioConfig:
    arrival_rate: float = 0.5  # per user per slot
    task_bits: int = 28_000_000  # 3.5 MB at 10^6 bytes/MB
    latency_range_s: list = field(default_factory=lambda: [0.5, 2.0])
    quality_range_db: list = field(default_factory=lambda: [13.0, 21.0])
    include_decode_time: bool = False  # add decode compute time to latency

    def validate(self, path="scenario"):
        if self.arrival_rate < 0:
            raise ConfigError(f"{path}.arrival_rate: must be >= 0")
        if self.task_bits <= 0:
            raise ConfigError(f"{path}.task_bits: must be > 0")
        lo, hi = self.latency_range_s
        if not 0 < lo <= hi:
            raise ConfigError(f"{path}.latency_range_s: need 0 < low <= high")
        qlo, qhi = self.quality_range_db
        if qlo > qhi:
            raise ConfigError(f"{path}.quality_range_db: need low <= high")


@dataclass
class EnvConfig:
    fail_reward: float = -1.0
    variant: str = "assisted"  # assisted | fixed-weight | no-mask
    fixed_weights: list = field(default_factory=lambda: [0.4, 0.3, 0.3])
    h2_db_floor: float = -180.0
    h2_db_ceil: float = -60.0

    def validate(self, path="env"):
        if self.variant not in ("assisted", "fixed-weight", "no-mask"):
            raise ConfigError(f"{path}.variant: must be one of assisted, fixed-weight, no-mask")
        if self.h2_db_floor >= self.h2_db_ceil:
            raise ConfigError(f"{path}.h2_db_floor: must be below h2_db_ceil")
        ints = [round(w * 10) for w in self.fixed_weights]
        if len(ints) != 3 or sum(ints) != 10 or any(i < 1 for i in ints):
            raise ConfigError(f"{path}.fixed_weights: must be a 0.1-grid triple summing to 1 with entries >= 0.1")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    kl_coeff: float = 0.01
    lr: float = 3e-4
    hidden: int = 256
    episodes_per_batch: int = 16
    epochs: int = 4
    iterations: int = 150

    def validate(self, path="train"):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"{path}.gamma: must be in (0, 1]")
        if not 0 < self.clip_eps < 1:
            raise ConfigError(f"{path}.clip_eps: must be in (0, 1)")
        if self.kl_coeff < 0:
            raise ConfigError(f"{path}.kl_coeff: must be >= 0")
        for name in ("lr",):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name}: must be > 0")
        for name in ("hidden", "episodes_per_batch", "epochs", "iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name}: must be >= 1")


@dataclass
class EvalConfig:
    episodes: int = 20

    def validate(self, path="eval"):
        if self.episodes < 1:
            raise ConfigError(f"{path}.episodes: must be >= 1")


_SECTIONS = {
    "constellation": ConstellationConfig,
    "users": UsersConfig,
    "channel": ChannelConfig,
    "isl": IslConfig,
    "semantics": SemanticsConfig,
    "scenario": ScenarioConfig,
    "env": EnvConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class ExperimentConfig:
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    users: UsersConfig = field(default_factory=UsersConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    isl: IslConfig = field(default_factory=IslConfig)
    semantics: SemanticsConfig = field(default_factory=SemanticsConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs"

    def validate(self):
        for name in _SECTIONS:
            getattr(self, name).validate(name)
        # the feasibility masks assume at least one denoising-step choice
        # fits every user's budget (semantic modes are never mode-masked)
        if self.users.compute_min_gflops < self.semantics.step_gflops:
            raise ConfigError(
                "users.compute_min_gflops: must cover one denoising step "
                f"({self.semantics.step_gflops} GFlops) so semantic modes stay selectable"
            )
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fill_section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    return cls(**data)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root: expected a mapping")
    top = {"seed", "out_dir"} | set(_SECTIONS)
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _fill_section(cls, data[name], name)
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed: expected an integer")
        kwargs["seed"] = data["seed"]
    if "out_dir" in data:
        kwargs["out_dir"] = str(data["out_dir"])
    return ExperimentConfig(**kwargs).validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
