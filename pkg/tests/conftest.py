"""
pytest configuration and fixtures for feel-csi-feedback tests
"""

import shutil
import sys
import tempfile
from pathlib import Path
from typing import List

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))
from feel_csi import ArrayConfig, AutoencoderConfig, ScenarioParams, UeDataset, load_config
from feel_csi._channel import build_environment, build_ue_dataset
from feel_csi._models import UePlacement
from feel_csi._seeding import derive_rng

TINY_OVERRIDES = {
    "array.num_tx_antennas": 4,
    "array.num_subcarriers": 4,
    "model.codeword_dim": 4,
    "model.width": 2,
    "model.num_crblocks": 1,
    "model.branch_kernels": [[3, 3], [1, 3]],
    "geometry.samples_per_ue": 20,
    "feel.num_ues": 3,
    "feel.scheduled_per_round": 2,
    "feel.rounds": 2,
    "train.batch_size": 8,
    "train.local_epochs": 1,
    "personalize.epochs": 1,
    "personalize.batch_size": 8,
    "sweep.quant_bits": [2, 8],
    "sweep.sample_counts": [10, 20],
    "sweep.ue_counts": [2, 3],
    "sweep.epoch_grid": [0, 1, 2],
    "sweep.local_epochs": [1, 2],
    "sweep.moving_radii_m": [1.0, 5.0],
    "sweep.codeword_dims": [2, 4],
    "sweep.holdout_ues": 1,
    "master_seed": 11,
}


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests"""
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir)


@pytest.fixture
def tiny_array() -> ArrayConfig:
    return ArrayConfig(num_tx_antennas=4, num_subcarriers=4)


@pytest.fixture
def tiny_model_cfg() -> AutoencoderConfig:
    return AutoencoderConfig(
        nt=4, nc=4, codeword_dim=4, branch_kernels=((3, 3), (1, 3)), width=2, num_crblocks=1
    )


@pytest.fixture
def plain_model_cfg(tiny_model_cfg) -> AutoencoderConfig:
    """Tiny model without batch normalization (exact gradient-descent oracles)"""
    return AutoencoderConfig(
        nt=4, nc=4, codeword_dim=4, branch_kernels=((3, 3), (1, 3)), width=2, num_crblocks=1,
        use_batchnorm=False,
    )


@pytest.fixture
def deploy_scenario() -> ScenarioParams:
    return ScenarioParams(
        label="deploy",
        num_clusters=3,
        num_subpaths=4,
        angle_spread_rad=0.05,
        delay_spread_s=100e-9,
        gain_decay=1.5,
        correlation_distance_m=12.0,
        line_of_sight=True,
    )


def make_datasets(
    array: ArrayConfig,
    scenario: ScenarioParams,
    num_ues: int = 3,
    samples: int = 20,
    seed: int = 0,
) -> List[UeDataset]:
    """UEs on a 60 m arc facing the array, each with a distinct line-of-sight angle"""
    environment = build_environment(scenario, 100.0, derive_rng(seed, "environment"))
    datasets = []
    for ue_id in range(1, num_ues + 1):
        angle = -np.pi / 2 + np.pi * (ue_id - 0.5) / num_ues
        placement = UePlacement(
            ue_id=ue_id,
            center_xy_m=(60.0 * np.cos(angle), 60.0 * np.sin(angle)),
            moving_radius_m=2.0,
            cell_radius_m=100.0,
            min_bs_distance_m=10.0,
        )
        datasets.append(
            build_ue_dataset(
                placement, scenario, array, samples, derive_rng(seed, "samples", ue_id), environment
            )
        )
    return datasets


@pytest.fixture
def tiny_datasets(tiny_array, deploy_scenario) -> List[UeDataset]:
    """Three UEs with 20 samples each (16/2/2 split)"""
    return make_datasets(tiny_array, deploy_scenario)


@pytest.fixture
def tiny_config(temp_dir):
    """A complete experiment configuration small enough for unit tests"""
    overrides = dict(TINY_OVERRIDES)
    overrides["out_dir"] = str(temp_dir / "results")
    return load_config(None, overrides)
