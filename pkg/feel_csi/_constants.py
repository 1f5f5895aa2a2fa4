"""
File-format magics, numerical constants and desk-scale defaults.
"""

DATASET_MAGIC = b"FEELCSI1"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"FEELNN01"
PAYLOAD_MAGIC = b"FEELQP01"

BASELINE_BITS = 32
RANGE_METADATA_BITS = 64

BATCHNORM_MOMENTUM = 0.9
BATCHNORM_EPS = 1e-10
LEAKY_SLOPE = 0.3

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Validation G-NMSE must improve by this much (dB) to reset the plateau count.
LR_MIN_IMPROVEMENT_DB = 0.01

SPLIT_RATIO = (8, 1, 1)

# Cell geometry defaults
CELL_RADIUS_M = 100.0
MIN_BS_DISTANCE_M = 10.0
MOVING_RADIUS_M = 5.0

# Parameters of the two cluster-model presets. "pretrain" has more clusters,
# a long correlation distance and no dominant path; "deploy" has one strong
# line-of-sight cluster and a few weak ones.
_SCENARIO_PRESETS = {
    "pretrain": {
        "label": "pretrain",
        "num_clusters": 6,
        "num_subpaths": 10,
        "angle_spread_rad": 0.12,
        "delay_spread_s": 300e-9,
        "gain_decay": 0.25,
        "correlation_distance_m": 50.0,
        "line_of_sight": False,
    },
    "deploy": {
        "label": "deploy",
        "num_clusters": 4,
        "num_subpaths": 10,
        "angle_spread_rad": 0.05,
        "delay_spread_s": 100e-9,
        "gain_decay": 1.5,
        "correlation_distance_m": 12.0,
        "line_of_sight": True,
    },
}

EXPERIMENT_IDS = (
    "compare-frameworks",
    "quant-sweep",
    "sample-sweep",
    "ue-sweep",
    "personalize-tradeoff",
    "local-epoch-sweep",
    "moving-range-sweep",
    "compression-sweep",
)

ROUNDS_CSV_COLUMNS = (
    "round",
    "scheduled_ids",
    "mean_local_loss",
    "gnmse_db",
    "cum_uplink_bits",
    "cum_downlink_bits",
)

SUMMARY_CSV_COLUMNS = (
    "run",
    "framework",
    "g_nmse_db",
    "i_nmse_db",
    "uplink_bits",
    "downlink_bits",
    "local_steps",
)

TRADEOFF_CSV_COLUMNS = ("epochs", "i_nmse_db", "g_nmse_db")
TRADEOFF_UE_CSV_COLUMNS = ("epochs", "ue_id", "i_nmse_db", "g_nmse_db")

# Summary tables round dB values; per-round logs keep full precision.
SUMMARY_DB_DECIMALS = 2

MANIFEST_NAME = "manifest.yaml"
REPORT_NAME = "report.yaml"
DATASET_SUFFIX = ".feelcsi"
CHECKPOINT_SUFFIX = ".feelnn"
