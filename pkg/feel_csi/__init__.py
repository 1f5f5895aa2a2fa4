"""
FEEL CSI Feedback

A desk-scale simulator of federated edge learning for CSI-feedback
autoencoders: channel generation, a small numpy network toolkit, FedAvg with
quantized transport, personalization and the experiment harness.
"""

try:
    from importlib.metadata import version as _pkg_version

    __version__ = _pkg_version("feel-csi-feedback")
except Exception:
    __version__ = "0.1.0"

from feel_csi._autoencoder import (
    build_model,
    compression_ratio,
    decode,
    encode,
    global_nmse,
    infer_config,
    individual_nmse,
    loss_cosine,
    loss_mse,
    nmse,
    nmse_db,
)
from feel_csi._binary_io import read_checkpoint, read_dataset, write_checkpoint, write_dataset
from feel_csi._channel import (
    build_ue_dataset,
    draw_ue_geometry,
    draw_ue_scenario,
    from_angular_delay,
    sample_channel,
    steering_vector,
    to_angular_delay,
)
from feel_csi._cli import main
from feel_csi._config import ExperimentConfig, config_hash, create_example_config, load_config
from feel_csi._exceptions import (
    ConfigError,
    DatasetExistsError,
    DomainError,
    EmptyDatasetError,
    FeelError,
    FormatError,
    InvalidGeometryError,
    InvariantViolation,
    MissingDatasetError,
    ShapeMismatchError,
    TemplateMismatchError,
    UndefinedInputError,
)
from feel_csi._feel import aggregate, run_cl, run_feel, run_il, schedule_ues
from feel_csi._harness import ExperimentRunner, evaluate_model, inspect_files
from feel_csi._models import (
    AggregationMode,
    ArrayConfig,
    AutoencoderConfig,
    Domain,
    FeelConfig,
    LossKind,
    MetricsReport,
    OptimizerKind,
    ParamRole,
    PersonalizationConfig,
    QuantPolicy,
    RoundHistory,
    ScenarioParams,
    TrainConfig,
    UeDataset,
)
from feel_csi._nn import ParamSet, flatten_params, unflatten
from feel_csi._personalize import fine_tune, monitor_and_select, tradeoff_sweep
from feel_csi._quant import dequantize, payload_bits, quantize
from feel_csi._trainer import adam_step, local_update

__all__ = [
    "__version__",
    "ExperimentRunner",
    "ExperimentConfig",
    "ArrayConfig",
    "ScenarioParams",
    "AutoencoderConfig",
    "TrainConfig",
    "QuantPolicy",
    "FeelConfig",
    "PersonalizationConfig",
    "AggregationMode",
    "Domain",
    "LossKind",
    "OptimizerKind",
    "ParamRole",
    "ParamSet",
    "UeDataset",
    "RoundHistory",
    "MetricsReport",
    "FeelError",
    "ConfigError",
    "InvalidGeometryError",
    "DomainError",
    "ShapeMismatchError",
    "UndefinedInputError",
    "EmptyDatasetError",
    "TemplateMismatchError",
    "DatasetExistsError",
    "MissingDatasetError",
    "InvariantViolation",
    "FormatError",
    "steering_vector",
    "draw_ue_geometry",
    "draw_ue_scenario",
    "sample_channel",
    "to_angular_delay",
    "from_angular_delay",
    "build_ue_dataset",
    "read_dataset",
    "write_dataset",
    "read_checkpoint",
    "write_checkpoint",
    "flatten_params",
    "unflatten",
    "build_model",
    "encode",
    "decode",
    "compression_ratio",
    "infer_config",
    "loss_mse",
    "loss_cosine",
    "nmse",
    "nmse_db",
    "global_nmse",
    "individual_nmse",
    "adam_step",
    "local_update",
    "quantize",
    "dequantize",
    "payload_bits",
    "schedule_ues",
    "aggregate",
    "run_feel",
    "run_cl",
    "run_il",
    "fine_tune",
    "monitor_and_select",
    "tradeoff_sweep",
    "load_config",
    "config_hash",
    "create_example_config",
    "evaluate_model",
    "inspect_files",
    "main",
]
