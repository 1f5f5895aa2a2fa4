"""
Data models: enums for domains and parameter roles, channel and dataset
records, and the configuration dataclasses shared by every module.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ._constants import (
    CELL_RADIUS_M,
    LR_MIN_IMPROVEMENT_DB,
    MIN_BS_DISTANCE_M,
    MOVING_RADIUS_M,
    _SCENARIO_PRESETS,
)
from ._exceptions import ConfigError


class Domain(Enum):
    """CSI representation domains"""

    SPATIAL_FREQUENCY = "spatial-frequency"
    ANGULAR_DELAY = "angular-delay"


class ParamRole(Enum):
    """Role of a tensor in a ParamSet; drives the quantization policy"""

    WEIGHT = "weight"
    BIAS = "bias"
    OTHER = "other"


class OptimizerKind(Enum):
    ADAM = "adam"
    SGD = "sgd"


class LossKind(Enum):
    MSE = "mse"
    COSINE = "cosine"


class AggregationMode(Enum):
    """Denominator used when weighting UE updates"""

    TOTAL_ALL_UES = "total_all_ues"
    TOTAL_SCHEDULED = "total_scheduled"


# ---------------------------------------------------------------- channel


@dataclass(frozen=True)
class ArrayConfig:
    """BS uniform linear array and OFDM numerology"""

    num_tx_antennas: int = 8
    antenna_spacing_ratio: float = 0.5
    num_subcarriers: int = 8
    bandwidth_hz: float = 70e6
    center_freq_hz: float = 2.655e9

    def __post_init__(self):
        if self.num_tx_antennas < 1:
            raise ConfigError("num_tx_antennas must be >= 1")
        if self.num_subcarriers < 1:
            raise ConfigError("num_subcarriers must be >= 1")
        if not self.antenna_spacing_ratio > 0:
            raise ConfigError("antenna_spacing_ratio must be > 0")
        if not (self.bandwidth_hz > 0 and self.center_freq_hz > 0):
            raise ConfigError("bandwidth_hz and center_freq_hz must be > 0")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.num_subcarriers

    def subcarrier_offsets_hz(self) -> np.ndarray:
        """Frequency offset of every subcarrier from the first one"""
        return np.arange(self.num_subcarriers) * self.subcarrier_spacing_hz


@dataclass(frozen=True)
class ScenarioParams:
    """Cluster channel model parameters of one scenario"""

    label: str = "deploy"
    num_clusters: int = 4
    num_subpaths: int = 10
    angle_spread_rad: float = 0.05
    delay_spread_s: float = 100e-9
    gain_decay: float = 1.5
    correlation_distance_m: float = 12.0
    line_of_sight: bool = False

    def __post_init__(self):
        if self.num_clusters < 1 or self.num_subpaths < 1:
            raise ConfigError(
                f"Scenario '{self.label}' needs at least one cluster and one subpath"
            )
        for name in ("angle_spread_rad", "delay_spread_s", "gain_decay"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"Scenario '{self.label}': {name} must be finite and >= 0")
        if not self.correlation_distance_m > 0:
            raise ConfigError(f"Scenario '{self.label}': correlation_distance_m must be > 0")


def scenario_preset(name: str) -> ScenarioParams:
    """Return one of the built-in scenario presets ("pretrain" or "deploy")"""
    if name not in _SCENARIO_PRESETS:
        raise ConfigError(
            f"Unknown scenario preset '{name}', expected one of {sorted(_SCENARIO_PRESETS)}"
        )
    return ScenarioParams(**_SCENARIO_PRESETS[name])


@dataclass(frozen=True)
class GeometryConfig:
    """Cell geometry and per-UE sample budget"""

    cell_radius_m: float = CELL_RADIUS_M
    min_bs_distance_m: float = MIN_BS_DISTANCE_M
    moving_radius_m: float = MOVING_RADIUS_M
    samples_per_ue: int = 500

    def __post_init__(self):
        if self.samples_per_ue < 10:
            raise ConfigError("samples_per_ue must be >= 10")
        if self.moving_radius_m < 0:
            raise ConfigError("moving_radius_m must be >= 0")


@dataclass(frozen=True)
class UePlacement:
    ue_id: int
    center_xy_m: Tuple[float, float]
    moving_radius_m: float
    cell_radius_m: float
    min_bs_distance_m: float

    @property
    def distance_m(self) -> float:
        return float(math.hypot(*self.center_xy_m))


@dataclass
class ClusterRealization:
    """Per-path angles, complex gains and delays, each of shape (clusters, subpaths)"""

    angles_rad: np.ndarray
    gains: np.ndarray
    delays_s: np.ndarray

    @property
    def num_paths(self) -> int:
        return int(self.gains.size)


@dataclass
class CsiSample:
    matrix: np.ndarray
    domain_tag: Domain


@dataclass(frozen=True)
class NormParams:
    """Affine map x -> (x - offset) / scale applied to real and imaginary parts"""

    offset: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError("NormParams.scale must be > 0")

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.offset) / self.scale

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.offset


@dataclass
class UeDataset:
    """Stacked angular-delay CSI matrices of one UE, shape (n, Nt, Nc) per split"""

    ue_id: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    norm_params: NormParams
    domain_tag: Domain = Domain.ANGULAR_DELAY

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise KeyError(f"Unknown split '{name}'")
        return getattr(self, name)

    def samples(self, name: str) -> List[CsiSample]:
        return [CsiSample(matrix, self.domain_tag) for matrix in self.split(name)]

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.train.shape[1]), int(self.train.shape[2])


# ---------------------------------------------------------------- learning


@dataclass(frozen=True)
class AutoencoderConfig:
    """Scaled CRNet: encoder branch kernels, width and CRBlock count"""

    nt: int = 8
    nc: int = 8
    codeword_dim: int = 8
    branch_kernels: Tuple[Tuple[int, int], Tuple[int, int]] = ((3, 3), (1, 9))
    width: int = 16
    num_crblocks: int = 2
    use_batchnorm: bool = True

    def __post_init__(self):
        if min(self.nt, self.nc, self.codeword_dim, self.width) < 1:
            raise ConfigError("nt, nc, codeword_dim and width must be positive")
        if self.num_crblocks < 1:
            raise ConfigError("num_crblocks must be >= 1")
        if not self.codeword_dim < 2 * self.nt * self.nc:
            raise ConfigError(
                f"codeword_dim {self.codeword_dim} must be < 2*nt*nc = {2 * self.nt * self.nc}"
            )
        if len(self.branch_kernels) != 2 or any(
            len(k) != 2 or min(k) < 1 for k in self.branch_kernels
        ):
            raise ConfigError("branch_kernels must be two positive (kh, kw) pairs")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    local_epochs: int = 2
    learning_rate: float = 1e-3
    lr_drop_factor: float = 0.1
    lr_patience: int = 20
    lr_min_improvement_db: float = LR_MIN_IMPROVEMENT_DB
    optimizer: OptimizerKind = OptimizerKind.ADAM
    loss: LossKind = LossKind.MSE

    def __post_init__(self):
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ConfigError("batch_size and local_epochs must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 < self.lr_drop_factor <= 1:
            raise ConfigError("lr_drop_factor must be in (0, 1]")
        if self.lr_patience < 1:
            raise ConfigError("lr_patience must be positive")


@dataclass(frozen=True)
class QuantPolicy:
    """Bit widths for uplink updates and downlink models; None disables the codec"""

    uplink_bits: Optional[int] = 2
    downlink_bits: Optional[int] = 8
    stochastic_rounding: bool = False
    quantize_roles: Tuple[ParamRole, ...] = (ParamRole.WEIGHT,)

    def __post_init__(self):
        for name in ("uplink_bits", "downlink_bits"):
            bits = getattr(self, name)
            if bits is not None and not 1 <= bits <= 32:
                raise ConfigError(f"{name} must be in [1, 32], got {bits}")
        if tuple(self.quantize_roles) != (ParamRole.WEIGHT,):
            raise ConfigError("Only weight tensors may be quantized")

    @classmethod
    def disabled(cls) -> "QuantPolicy":
        return cls(uplink_bits=None, downlink_bits=None)


@dataclass(frozen=True)
class FeelConfig:
    num_ues: int = 10
    scheduled_per_round: int = 3
    rounds: int = 300
    train: TrainConfig = field(default_factory=TrainConfig)
    quant: QuantPolicy = field(default_factory=QuantPolicy)
    aggregation: AggregationMode = AggregationMode.TOTAL_ALL_UES
    pretrain_epochs: int = 0

    def __post_init__(self):
        if not 1 <= self.scheduled_per_round <= self.num_ues:
            raise ConfigError(
                f"scheduled_per_round must be in [1, num_ues={self.num_ues}]"
            )
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")


@dataclass(frozen=True)
class PersonalizationConfig:
    epochs: int = 40
    learning_rate: float = 1e-3
    monitor_fraction: float = 1.0
    batch_size: int = 32
    optimizer: OptimizerKind = OptimizerKind.ADAM

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("personalization epochs must be >= 0")
        if not 0 < self.monitor_fraction <= 1:
            raise ConfigError("monitor_fraction must be in (0, 1]")
        if not self.learning_rate > 0 or self.batch_size < 1:
            raise ConfigError("learning_rate and batch_size must be positive")


# ---------------------------------------------------------------- results


@dataclass
class RoundRecord:
    round: int
    scheduled_ids: List[int]
    mean_local_loss: float
    gnmse_db: float
    cum_uplink_bits: int
    cum_downlink_bits: int
    learning_rate: float = 0.0


@dataclass
class RoundHistory:
    """Per-round FEEL log plus final test metrics"""

    records: List[RoundRecord] = field(default_factory=list)
    final_metrics: Dict[str, float] = field(default_factory=dict)
    total_local_steps: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def cum_uplink_bits(self) -> int:
        return self.records[-1].cum_uplink_bits if self.records else 0

    @property
    def cum_downlink_bits(self) -> int:
        return self.records[-1].cum_downlink_bits if self.records else 0


@dataclass
class TradeoffRow:
    epochs: int
    i_nmse_db: float
    g_nmse_db: float
    per_ue: List[Tuple[int, float, float]] = field(default_factory=list)


@dataclass
class MetricsReport:
    """Summary of one experiment run"""

    experiment: str
    config_hash: str
    frameworks: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    ledger: Dict[str, int] = field(default_factory=dict)
    trends: Dict[str, bool] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary format for YAML output"""
        result = {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "wall_clock_s": round(float(self.wall_clock_s), 3),
        }
        if self.frameworks:
            result["frameworks"] = {
                name: dict(values) for name, values in self.frameworks.items()
            }
        if self.ledger:
            result["ledger"] = {k: int(v) for k, v in self.ledger.items()}
        if self.trends:
            result["trends"] = {k: bool(v) for k, v in self.trends.items()}
        return result
