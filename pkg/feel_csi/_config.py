"""
Experiment configuration: YAML loading, flat ``section.field`` keys, typed
coercion, example generation and the config hash.
"""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml

from ._constants import EXPERIMENT_IDS
from ._exceptions import ConfigError
from ._models import (
    ArrayConfig,
    AutoencoderConfig,
    FeelConfig,
    GeometryConfig,
    PersonalizationConfig,
    QuantPolicy,
    ScenarioParams,
    TrainConfig,
    scenario_preset,
)

_TOP_LEVEL = ("experiment", "master_seed", "out_dir")
# Part of the data model but not configurable.
_FIXED_FIELDS = {"quant.quantize_roles"}
_NOT_HASHED = {"out_dir"}


@dataclass(frozen=True)
class SweepConfig:
    """Grid axes of the sweep experiments"""

    quant_bits: Tuple[int, ...] = (1, 2, 4, 8, 32)
    sample_counts: Tuple[int, ...] = (100, 200, 500)
    ue_counts: Tuple[int, ...] = (3, 5, 10)
    epoch_grid: Tuple[int, ...] = (0, 5, 10, 20, 40)
    local_epochs: Tuple[int, ...] = (1, 4)
    moving_radii_m: Tuple[float, ...] = (1.0, 5.0, 10.0)
    codeword_dims: Tuple[int, ...] = (4, 8, 16)
    holdout_ues: int = 2

    def __post_init__(self):
        for name in ("quant_bits", "sample_counts", "ue_counts", "epoch_grid",
                     "local_epochs", "moving_radii_m", "codeword_dims"):
            if not getattr(self, name):
                raise ConfigError(f"sweep.{name} must not be empty")
        if any(not 1 <= b <= 32 for b in self.quant_bits):
            raise ConfigError("sweep.quant_bits entries must be in [1, 32]")
        grid = list(self.epoch_grid)
        if grid[0] != 0 or grid != sorted(set(grid)):
            raise ConfigError("sweep.epoch_grid must be ascending and start at 0")
        if self.holdout_ues < 1:
            raise ConfigError("sweep.holdout_ues must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "compare-frameworks"
    master_seed: int = 2024
    out_dir: str = "results"
    array: ArrayConfig = field(default_factory=ArrayConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    pretrain_scenario: ScenarioParams = field(default_factory=lambda: scenario_preset("pretrain"))
    deploy_scenario: ScenarioParams = field(default_factory=lambda: scenario_preset("deploy"))
    model: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    feel: FeelConfig = field(default_factory=FeelConfig)
    personalize: PersonalizationConfig = field(default_factory=PersonalizationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_IDS:
            raise ConfigError(
                f"Unknown experiment '{self.experiment}', expected one of {', '.join(EXPERIMENT_IDS)}"
            )
        if self.master_seed < 0:
            raise ConfigError("master_seed must be >= 0")
        if (self.model.nt, self.model.nc) != (
            self.array.num_tx_antennas,
            self.array.num_subcarriers,
        ):
            raise ConfigError(
                f"model.nt/model.nc ({self.model.nt}x{self.model.nc}) must match the array "
                f"({self.array.num_tx_antennas}x{self.array.num_subcarriers})"
            )

    @property
    def train(self) -> TrainConfig:
        return self.feel.train

    @property
    def quant(self) -> QuantPolicy:
        return self.feel.quant

    def replace(self, **flat: Any) -> "ExperimentConfig":
        """Copy with flat ``section.field`` overrides (underscored key names allowed)"""
        values = flatten_config(self)
        for key, value in flat.items():
            values[key.replace("__", ".")] = value
        return build_config(values)


# ---------------------------------------------------------------- sections

_SECTIONS: Dict[str, type] = {
    "array": ArrayConfig,
    "geometry": GeometryConfig,
    "pretrain_scenario": ScenarioParams,
    "deploy_scenario": ScenarioParams,
    "model": AutoencoderConfig,
    "train": TrainConfig,
    "quant": QuantPolicy,
    "feel": FeelConfig,
    "personalize": PersonalizationConfig,
    "sweep": SweepConfig,
}
# FeelConfig fields that are sections of their own
_NESTED_FEEL = ("train", "quant")


def _section_fields(section: str) -> Dict[str, Any]:
    cls = _SECTIONS[section]
    hints = typing.get_type_hints(cls)
    return {
        f.name: hints[f.name]
        for f in dataclasses.fields(cls)
        if f"{section}.{f.name}" not in _FIXED_FIELDS
        and not (section == "feel" and f.name in _NESTED_FEEL)
    }


def _coerce(key: str, value: Any, annotation: Any) -> Any:
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is Union:
        inner = [a for a in args if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
            return None
        return _coerce(key, value, inner[0])
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"Configuration key '{key}' expects a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(key, v, args[0]) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"Configuration key '{key}' expects {len(args)} entries, got {len(value)}")
        return tuple(_coerce(key, v, a) for v, a in zip(value, args))
    if isinstance(annotation, type) and issubclass(annotation, Enum):
        try:
            return annotation(value.value if isinstance(value, Enum) else str(value).lower())
        except ValueError:
            choices = ", ".join(m.value for m in annotation)
            raise ConfigError(
                f"Configuration key '{key}' must be one of {choices}, got {value!r}"
            ) from None
    if annotation is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no"):
            return value.lower() in ("true", "yes")
        raise ConfigError(f"Configuration key '{key}' expects a boolean, got {value!r}")
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"Configuration key '{key}' expects an integer, got {value!r}")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"Configuration key '{key}' expects an integer, got {value!r}") from None
    if annotation is float:
        if isinstance(value, bool):
            raise ConfigError(f"Configuration key '{key}' expects a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"Configuration key '{key}' expects a number, got {value!r}") from None
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"Configuration key '{key}' expects a string, got {value!r}")
        return value
    return value


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------------------------------------------------------------- flat keys


def flatten_mapping(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Nested YAML mappings to ``section.field`` keys; dotted keys pass through"""
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_mapping(value, name + "."))
        else:
            if name in flat:
                raise ConfigError(f"Configuration key '{name}' given twice")
            flat[name] = value
    return flat


def flatten_config(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Every configurable value as plain data keyed by ``section.field``, sorted"""
    flat: Dict[str, Any] = {name: getattr(cfg, name) for name in _TOP_LEVEL}
    for section in _SECTIONS:
        if section in _NESTED_FEEL:
            obj = getattr(cfg.feel, section)
        else:
            obj = getattr(cfg, section)
        for name in _section_fields(section):
            flat[f"{section}.{name}"] = _plain(getattr(obj, name))
    return dict(sorted(flat.items()))


def build_config(flat: Mapping[str, Any]) -> ExperimentConfig:
    """ExperimentConfig from flat keys; missing keys take their defaults"""
    top: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
    for key, value in flat.items():
        if key in _TOP_LEVEL:
            top[key] = value
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"Unknown configuration key '{key}'")
        fields = _section_fields(section)
        if name not in fields:
            raise ConfigError(f"Unknown configuration key '{key}'")
        sections[section][name] = _coerce(key, value, fields[name])

    if "master_seed" in top:
        top["master_seed"] = _coerce("master_seed", top["master_seed"], int)
    for key in ("experiment", "out_dir"):
        if key in top:
            top[key] = _coerce(key, top[key], str)

    try:
        objs: Dict[str, Any] = {}
        for name in ("pretrain_scenario", "deploy_scenario"):
            preset = dataclasses.asdict(scenario_preset(name.split("_")[0]))
            preset.update(sections[name])
            objs[name] = ScenarioParams(**preset)
        array = ArrayConfig(**sections["array"])
        model_values = {"nt": array.num_tx_antennas, "nc": array.num_subcarriers}
        model_values.update(sections["model"])
        objs["array"] = array
        objs["model"] = AutoencoderConfig(**model_values)
        objs["geometry"] = GeometryConfig(**sections["geometry"])
        objs["feel"] = FeelConfig(
            train=TrainConfig(**sections["train"]),
            quant=QuantPolicy(**sections["quant"]),
            **sections["feel"],
        )
        objs["personalize"] = PersonalizationConfig(**sections["personalize"])
        objs["sweep"] = SweepConfig(**sections["sweep"])
        return ExperimentConfig(**top, **objs)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read a YAML config (flat or nested keys) and apply flat overrides"""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"Could not read {path}: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{path} must contain a mapping of configuration keys")
        data = flatten_mapping(loaded)
    for key, value in (overrides or {}).items():
        data[key] = value
    return build_config(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the sorted semantic keys (output directory excluded), 16 hex chars"""
    semantic = {k: v for k, v in flatten_config(cfg).items() if k not in _NOT_HASHED}
    payload = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def create_example_config() -> str:
    """The documented defaults as a flat-key YAML config"""
    flat = flatten_config(ExperimentConfig())
    lines = [
        "# FEEL CSI-feedback experiment configuration.",
        "# Keys are section.field; nested mappings per section work as well.",
        f"# experiment: one of {', '.join(EXPERIMENT_IDS)}",
    ]
    for key, value in flat.items():
        rendered = yaml.safe_dump({key: value}, default_flow_style=True, sort_keys=False, width=120)
        lines.append(rendered.strip()[1:-1])
    return "\n".join(lines) + "\n"
