"""Experiment configuration: YAML files, CLI overrides and seed derivation."""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from swacdemod.classify import ClassifierTrainConfig, ConvGeometry
from swacdemod.dbn import DEFAULT_GEOMETRY, DbnTrainSpec
from swacdemod.errors import ConfigError
from swacdemod.sigproc import ModulationConfig, PskScheme, check_alpha


@dataclass
class ModulationSection:
    carrier_hz: float = 1000.0
    sample_rate_hz: float = 8000.0
    samples_per_symbol: int = 96


@dataclass
class FramingSection:
    frame_len: int = 120
    overlap_frac: float = 0.2


@dataclass
class DopplerSection:
    """Carrier distribution for the randomized-carrier channel (truncated normal)."""

    carrier_mean_hz: float = 1000.0
    carrier_std_hz: float = 250.0
    carrier_min_hz: float = 500.0
    carrier_max_hz: float = 2000.0


@dataclass
class DbnSection:
    geometry: list = field(default_factory=lambda: list(DEFAULT_GEOMETRY))
    cd_steps: int = 1
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64


@dataclass
class ClassifierSection:
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 32
    early_stop_patience: int = 5
    init_gain: float = 1.0


def _conv_defaults():
    return ClassifierSection(learning_rate=0.05, epochs=20, batch_size=32, early_stop_patience=5, init_gain=4.0)


@dataclass
class AccuracySection:
    """Training-size ladder for the accuracy experiment."""

    base_periods: int = 500
    ebn0_db: float = 4.0


@dataclass
class ExperimentConfig:
    schemes: list = field(default_factory=lambda: [2, 4, 8])
    ebn0_db: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0])
    dataset_size_periods: int = 8000
    split: list = field(default_factory=lambda: [0.5, 0.2, 0.3])
    train_snr_policy: str = "mixture"
    methods: list = field(default_factory=lambda: ["DBN-NN", "DBN-CNN"])
    seed: int = 0
    modulation: ModulationSection = field(default_factory=ModulationSection)
    framing: FramingSection = field(default_factory=FramingSection)
    doppler: DopplerSection = field(default_factory=DopplerSection)
    dbn: DbnSection = field(default_factory=DbnSection)
    dense: ClassifierSection = field(default_factory=ClassifierSection)
    conv: ClassifierSection = field(default_factory=_conv_defaults)
    accuracy: AccuracySection = field(default_factory=AccuracySection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be three non-negatives summing to 1, got {self.split}")
        if self.dataset_size_periods < 100:
            raise ConfigError("dataset_size_periods must be at least 100")
        if not self.ebn0_db:
            raise ConfigError("SNR list must not be empty")
        if self.train_snr_policy not in ("mixture", "per-snr"):
            raise ConfigError("train_snr_policy must be 'mixture' or 'per-snr'")
        unknown = set(self.methods) - {"DBN-NN", "DBN-CNN"}
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        for order in self.schemes:
            PskScheme(int(order))
        self.modulation_config()
        d = self.doppler
        if not (0 < d.carrier_min_hz <= d.carrier_mean_hz <= d.carrier_max_hz) or d.carrier_std_hz < 0:
            raise ConfigError("Doppler carrier distribution is inconsistent")
        check_alpha(d.carrier_min_hz / self.modulation.carrier_hz)
        check_alpha(d.carrier_max_hz / self.modulation.carrier_hz)
        if d.carrier_max_hz >= self.modulation.sample_rate_hz / 2:
            raise ConfigError("Doppler-shifted carrier would exceed Nyquist")
        geometry = list(self.dbn.geometry)
        if geometry[0] != self.framing.frame_len:
            raise ConfigError("DBN input size must equal frame_len")
        self.dbn_spec(0)
        self.classifier_config("dense", 0)
        self.classifier_config("conv", 0)

    def modulation_config(self) -> ModulationConfig:
        return ModulationConfig(**dataclasses.asdict(self.modulation))

    def dbn_spec(self, seed: int) -> DbnTrainSpec:
        d = self.dbn
        return DbnTrainSpec(d.cd_steps, d.learning_rate, d.epochs, d.batch_size, seed)

    def classifier_config(self, kind: str, seed: int) -> ClassifierTrainConfig:
        c = getattr(self, kind)
        return ClassifierTrainConfig(c.learning_rate, c.epochs, c.batch_size, seed, c.early_stop_patience)

    def conv_geometry(self, n_classes: int) -> ConvGeometry:
        side = int(round(np.sqrt(self.dbn.geometry[-1])))
        if side * side != self.dbn.geometry[-1]:
            raise ConfigError("DBN output size must be a perfect square for the CNN")
        return ConvGeometry(n_classes=n_classes, input_size=side, padded_size=side + 4)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where or 'root'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys in {where or 'root'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = _default_of(known[name])
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}".strip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return _build(ExperimentConfig, data or {}, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data or {})


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def leaf_fields(cls=ExperimentConfig, prefix=""):
    """Yield (dotted_name, default) for every scalar or list field, recursively."""
    for f in dataclasses.fields(cls):
        default = _default_of(f)
        name = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(default):
            yield from leaf_fields(type(default), name + ".")
        else:
            yield name, default


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Return a new config with dotted-name overrides applied and re-validated."""
    data = cfg.to_dict()
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config field {dotted}")
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config field {dotted}")
        node[leaf] = value
    return config_from_dict(data)


def derive_seed(base: int, *tags) -> int:
    """Stable 63-bit child seed for (base, tags); independent of call order."""
    words = [int(base) & 0xFFFFFFFF, (int(base) >> 32) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            words.append(int(tag) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(tag).encode()))
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
