"""
Versioned JSON experiment config.

    {"schema_version": 1, "preprocess": {...}, "model": {...},
     "margin": {...}, "train": {...}, "synth": {...}}

Every section is optional; missing keys fall back to the config.py defaults.
"""

import json
import logging
from dataclasses import dataclass, asdict, field, fields
from typing import Dict, List, Optional, Tuple

import config
from errors import ConfigurationError, DigNetError, LoadError
from degradation import DegradationConfig
from preprocess import PreprocessConfig
from rstdal import MarginParams
from stgt import ModelConfig
from trainer import TrainConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class SynthConfig:
    count: int = 520
    seed: int = 0
    classes: List[str] = field(default_factory=lambda: ['all'])
    distance_range: Tuple[float, float] = (config.MIN_DISTANCE, config.MAX_DISTANCE)
    environments: List[str] = field(default_factory=lambda: ['synthetic'])
    degradation: str = 'none'
    clutter: str = 'none'
    frame_count: int = config.SYNTH_FRAME_COUNT
    split_fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        self.distance_range = tuple(float(d) for d in self.distance_range)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if len(self.distance_range) != 2 or len(self.split_fractions) != 3:
            raise ConfigurationError("distance_range needs 2 values and split_fractions 3")
        if abs(sum(self.split_fractions) - 1.0) > 1e-6:
            raise ConfigurationError(f"split fractions must sum to 1, got {self.split_fractions}")
        for env in self.environments:
            if env not in config.ENVIRONMENT_PRESETS:
                raise ConfigurationError(f"unknown environment '{env}'")

    def degradation_config(self) -> DegradationConfig:
        base = DegradationConfig.preset(self.degradation).to_dict()
        base['clutter'] = self.clutter
        return DegradationConfig(**base)


SECTIONS = {
    'preprocess': PreprocessConfig,
    'model': ModelConfig,
    'margin': MarginParams,
    'train': TrainConfig,
    'synth': SynthConfig,
}


@dataclass
class ExperimentConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    margin: MarginParams = field(default_factory=MarginParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> Dict:
        out = {'schema_version': SCHEMA_VERSION}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, 'to_dict') else asdict(section)
        return out

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        """Same config with every seeded section reseeded."""
        data = self.to_dict()
        for name in ('preprocess', 'model', 'train', 'synth'):
            data[name]['seed'] = seed
        return parse_experiment_config(data)


def _section(name: str, cls, values) -> object:
    if not isinstance(values, dict):
        raise ConfigurationError(f"config section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in config section '{name}': {unknown}")
    try:
        return cls(**values)
    except ConfigurationError:
        raise
    except (DigNetError, TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid config section '{name}': {e}")


def parse_experiment_config(data: Dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("experiment config must be a JSON object")
    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported config schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(data) - set(SECTIONS) - {'schema_version'})
    if unknown:
        raise ConfigurationError(f"unknown config sections: {unknown}")
    sections = {name: _section(name, cls, data[name]) for name, cls in SECTIONS.items() if name in data}
    return ExperimentConfig(**sections)


def load_experiment_config(path: Optional[str] = None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise LoadError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}")
    cfg = parse_experiment_config(data)
    logger.info(f"Loaded experiment config from {path}")
    return cfg


def save_experiment_config(path: str, cfg: ExperimentConfig) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
