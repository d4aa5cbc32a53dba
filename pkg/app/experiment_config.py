#  SPDX-License-Identifier: Apache-2.0
import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Any
from typing import Dict
from typing import Optional
from typing import Sequence
from typing import Tuple

import constants
from errors import ConfigError
from logreg_protocol import LogregConfig
from revsum_attack import GROUP_CAPACITIES
from revsum_attack import RevsumConfig
from secureboost_protocol import BoostConfig

logger = logging.getLogger(__name__)

PROTOCOLS = ("logreg", "secureboost")
ATTACKS = ("none", "revmul", "revsum")
DATASET_SOURCES = ("synthetic", "sparse", "csv")
SWEEP_FAMILIES = {
    "batch_size": "logreg",
    "learning_rate": "logreg",
    "distribution": "secureboost",
    "bins": "secureboost",
    "kb": "secureboost",
    "aux_size": "secureboost",
    "alt_model": "secureboost",
}


@dataclass(frozen=True)
class DatasetSettings:
    source: str = "synthetic"
    samples: int = constants.DEFAULT_SAMPLES
    features_A: int = 4
    features_B: int = 4
    distribution: str = "normal(0,1)"
    preset: str = ""
    csv_path: str = ""
    id_column: str = "id"
    label_column: str = "label"
    density: float = 0.1
    noise: str = "logistic"
    train_fraction: float = constants.DEFAULT_TRAIN_FRACTION


@dataclass(frozen=True)
class LogregSettings:
    epochs: int = constants.DEFAULT_EPOCHS
    batch_size: int = constants.DEFAULT_BATCH_SIZE
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    key_bits: int = constants.DEFAULT_KEY_BITS
    coordinator_updates: bool = False
    init: str = "zeros"
    reshuffle_batches: bool = False


@dataclass(frozen=True)
class BoostSettings:
    trees: int = constants.DEFAULT_TREES
    max_depth: int = constants.DEFAULT_MAX_DEPTH
    bins: int = constants.DEFAULT_BINS
    reg_lambda: float = constants.DEFAULT_LAMBDA
    gamma: float = constants.DEFAULT_GAMMA
    shrinkage: float = constants.DEFAULT_SHRINKAGE
    objective: str = "logistic"
    key_bits: int = constants.DEFAULT_KEY_BITS


@dataclass(frozen=True)
class AttackSettings:
    corrupt_coordinator: bool = True
    supergroups: int = constants.DEFAULT_SUPERGROUPS
    base: int = constants.DEFAULT_BASE
    group_capacity: str = "b"
    target_tree: int = 0
    aux_size: int = 0


@dataclass(frozen=True)
class SweepSettings:
    family: str = ""
    values: Tuple[str, ...] = ()
    seeds: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "logreg"
    attack: str = "none"
    seed: int = 0
    out: str = "results"
    dataset: DatasetSettings = DatasetSettings()
    logreg: LogregSettings = LogregSettings()
    boost: BoostSettings = BoostSettings()
    attack_settings: AttackSettings = AttackSettings()
    sweep: SweepSettings = SweepSettings()

    def validate(self) -> "ExperimentConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"experiment.protocol must be one of {PROTOCOLS}, got '{self.protocol}'")
        if self.attack not in ATTACKS:
            raise ConfigError(f"experiment.attack must be one of {ATTACKS}, got '{self.attack}'")
        if self.attack == "revmul" and self.protocol != "logreg":
            raise ConfigError("the revmul attack targets the logreg protocol")
        if self.attack == "revsum" and self.protocol != "secureboost":
            raise ConfigError("the revsum attack targets the secureboost protocol")
        if self.dataset.source not in DATASET_SOURCES:
            raise ConfigError(f"dataset.source must be one of {DATASET_SOURCES}, got '{self.dataset.source}'")
        if self.dataset.source == "csv" and not self.dataset.csv_path:
            raise ConfigError("dataset.csv_path is required for a csv source")
        if self.attack_settings.group_capacity not in GROUP_CAPACITIES:
            raise ConfigError(f"attack.group_capacity must be one of {GROUP_CAPACITIES}")
        if self.sweep.family:
            if self.sweep.family not in SWEEP_FAMILIES:
                raise ConfigError(f"unknown sweep family '{self.sweep.family}'")
            if SWEEP_FAMILIES[self.sweep.family] != self.protocol:
                raise ConfigError(f"sweep '{self.sweep.family}' needs protocol {SWEEP_FAMILIES[self.sweep.family]}")
            if self.sweep.seeds < 1:
                raise ConfigError(f"sweep.seeds must be >= 1, got {self.sweep.seeds}")
        return self

    def logreg_config(self, seed: Optional[int] = None) -> LogregConfig:
        s = self.logreg
        return LogregConfig(epochs=s.epochs, batch_size=s.batch_size, learning_rate=s.learning_rate,
                            seed=self.seed if seed is None else seed, key_bits=s.key_bits,
                            coordinator_updates=s.coordinator_updates, init=s.init,
                            reshuffle_batches=s.reshuffle_batches)

    def boost_config(self, seed: Optional[int] = None) -> BoostConfig:
        s = self.boost
        return BoostConfig(trees=s.trees, max_depth=s.max_depth, bins=s.bins, reg_lambda=s.reg_lambda, gamma=s.gamma,
                           shrinkage=s.shrinkage, objective=s.objective, seed=self.seed if seed is None else seed,
                           key_bits=s.key_bits)

    def revsum_config(self, seed: Optional[int] = None) -> RevsumConfig:
        a = self.attack_settings
        return RevsumConfig(supergroups=a.supergroups, base=a.base, group_capacity=a.group_capacity,
                            target_tree=a.target_tree, seed=self.seed if seed is None else seed)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()


# section name -> ExperimentConfig attribute(s) holding its keys
_SECTIONS = {
    "dataset": ("dataset",),
    "protocol": ("logreg", "boost"),
    "attack": ("attack_settings",),
    "sweep": ("sweep",),
}
_EXPERIMENT_KEYS = ("protocol", "attack", "seed", "out")


def _convert(key: str, raw: str, default: Any) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(v.strip() for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse value '{raw}' for {key}")
    return text


def parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override '{pair}' is not of the form section.key=value")
        overrides[key.strip()] = value
    return overrides


def from_flat(flat: Dict[str, str]) -> ExperimentConfig:
    """
    Builds the configuration from dotted keys, e.g. {"protocol.epochs": "100"}.
    """
    base = ExperimentConfig()
    top: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {name: {} for names in _SECTIONS.values() for name in names}
    for key, raw in flat.items():
        section, _, name = key.partition(".")
        if section == "experiment" and name in _EXPERIMENT_KEYS:
            top[name] = _convert(key, raw, getattr(base, name))
            continue
        targets = [t for t in _SECTIONS.get(section, ()) if name in {f.name for f in dataclasses.fields(getattr(base, t))}]
        if not targets:
            raise ConfigError(f"unknown configuration key '{key}'")
        for target in targets:
            nested[target][name] = _convert(key, raw, getattr(getattr(base, target), name))
    for target, values in nested.items():
        if values:
            top[target] = dataclasses.replace(getattr(base, target), **values)
    return dataclasses.replace(base, **top).validate()


def read_flat(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"configuration file {path} not found")
    parser = configparser.ConfigParser(interpolation=None)
    # keys such as features_A are case sensitive
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    return {f"{section}.{key}": value for section in parser.sections() for key, value in parser.items(section)}


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (), seed: Optional[int] = None,
                out: Optional[str] = None) -> ExperimentConfig:
    """
    Reads the INI file (sections become dotted prefixes), applies key=value overrides,
    then the --seed/--out flags.
    """
    flat = read_flat(path) if path else {}
    flat.update(parse_overrides(overrides))
    if seed is not None:
        flat["experiment.seed"] = str(seed)
    if out is not None:
        flat["experiment.out"] = out
    config = from_flat(flat)
    logger.debug(f"Loaded configuration from {path or 'defaults'} with {len(overrides)} override(s): {config}")
    return config
