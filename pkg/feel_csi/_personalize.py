"""
Fine-tuning personalization of the global model, fallback monitoring and
the performance/generalization tradeoff sweep.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._autoencoder import evaluate_nmse, global_nmse, mean_db, model_for, nmse, reconstruct, to_db
from ._constants import BASELINE_BITS
from ._exceptions import ConfigError, EmptyDatasetError
from ._models import NormParams, PersonalizationConfig, TradeoffRow, TrainConfig, UeDataset
from ._nn import ParamSet
from ._reporting import Reporter, ensure_reporter
from ._seeding import derive_rng
from ._trainer import OptimizerState, TrainingData, iterate_minibatches, train_step


def _train_config(pc: PersonalizationConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=pc.batch_size,
        local_epochs=max(1, pc.epochs),
        learning_rate=pc.learning_rate,
        optimizer=pc.optimizer,
    )


def fine_tune_checkpoints(
    global_ps: ParamSet,
    ds: UeDataset,
    pc: PersonalizationConfig,
    rng: np.random.Generator,
    epoch_grid: Sequence[int],
) -> Dict[int, ParamSet]:
    """One continuous fine-tuning run, snapshotted after every epoch count in the grid.

    The snapshot at ``e`` equals fine_tune with ``pc.epochs = e`` and the same rng.
    """
    if len(ds.train) == 0:
        raise EmptyDatasetError(f"UE {ds.ue_id} has an empty train split")
    grid = sorted(set(int(e) for e in epoch_grid))
    if grid and grid[0] < 0:
        raise ConfigError("Epoch counts must be >= 0")
    snapshots: Dict[int, ParamSet] = {}
    if 0 in grid:
        snapshots[0] = global_ps.copy()
    if not grid or grid[-1] == 0:
        return snapshots

    tc = _train_config(pc)
    model = model_for(global_ps)
    data = TrainingData.from_datasets([ds])
    work = global_ps.copy()
    state = OptimizerState.fresh(work)
    for epoch in range(1, grid[-1] + 1):
        for idx in iterate_minibatches(len(data), tc.batch_size, rng):
            train_step(model, work, data.batch(idx), tc.loss, tc.optimizer, state, tc.learning_rate)
        if epoch in grid:
            snapshots[epoch] = work.copy()
    return snapshots


def fine_tune(
    global_ps: ParamSet, ds: UeDataset, pc: PersonalizationConfig, rng: np.random.Generator
) -> ParamSet:
    """All parameters fine-tuned for pc.epochs at a fixed learning rate; input untouched"""
    return fine_tune_checkpoints(global_ps, ds, pc, rng, [pc.epochs])[pc.epochs]


def monitor_samples(ds: UeDataset, fraction: float = 1.0) -> np.ndarray:
    """The freshest ``fraction`` of the validation split (its tail)"""
    count = max(1, int(math.ceil(fraction * len(ds.val))))
    return ds.val[len(ds.val) - count :]


def monitor_and_select(
    personalized: ParamSet,
    global_ps: ParamSet,
    fresh_samples: np.ndarray,
    norm: NormParams,
) -> Tuple[ParamSet, bool]:
    """Keep the personalized model only if it is strictly better on fresh samples.

    Returns the chosen model and True when the personalized one was kept.
    """
    if len(fresh_samples) == 0:
        raise EmptyDatasetError("Monitoring needs at least one fresh sample")
    personal_err = nmse(fresh_samples, reconstruct(personalized, fresh_samples, norm))
    global_err = nmse(fresh_samples, reconstruct(global_ps, fresh_samples, norm))
    if personal_err < global_err:
        return personalized, True
    return global_ps, False


def personalize_ues(
    global_ps: ParamSet,
    datasets: Sequence[UeDataset],
    pc: PersonalizationConfig,
    rng: np.random.Generator,
    reporter: Optional[Reporter] = None,
) -> Tuple[Dict[int, ParamSet], Dict[int, bool]]:
    """Fine-tune and monitor every UE; returns chosen models and keep decisions"""
    reporter = ensure_reporter(reporter)
    base_seed = int(rng.integers(2**63))
    chosen, kept = {}, {}
    for ds in datasets:
        personal = fine_tune(global_ps, ds, pc, derive_rng(base_seed, "personalize", ds.ue_id))
        fresh = monitor_samples(ds, pc.monitor_fraction)
        chosen[ds.ue_id], kept[ds.ue_id] = monitor_and_select(
            personal, global_ps, fresh, ds.norm_params
        )
        reporter.log_verbose(
            f"UE {ds.ue_id}: {'personalized' if kept[ds.ue_id] else 'global'} model selected"
        )
    return chosen, kept


def tradeoff_sweep(
    global_ps: ParamSet,
    datasets: Sequence[UeDataset],
    epoch_grid: Sequence[int],
    pc: PersonalizationConfig,
    rng: np.random.Generator,
    reporter: Optional[Reporter] = None,
) -> List[TradeoffRow]:
    """I-NMSE and G-NMSE of the personalized models at every epoch count.

    I-NMSE averages each UE's model on its own test split; G-NMSE averages
    each UE's model on the mixed test set. Both are linear means in dB.
    """
    reporter = ensure_reporter(reporter)
    grid = [int(e) for e in epoch_grid]
    if not grid or grid[0] != 0 or grid != sorted(set(grid)):
        raise ConfigError(f"Epoch grid must be ascending and start at 0, got {grid}")
    base_seed = int(rng.integers(2**63))

    per_epoch: Dict[int, List[Tuple[int, float, float]]] = {e: [] for e in grid}
    for ds in datasets:
        snapshots = fine_tune_checkpoints(
            global_ps, ds, pc, derive_rng(base_seed, "personalize", ds.ue_id), grid
        )
        for epochs, ps in snapshots.items():
            per_epoch[epochs].append(
                (ds.ue_id, evaluate_nmse(ps, ds, "test"), global_nmse(ps, datasets, "test"))
            )
        reporter.log_verbose(f"UE {ds.ue_id}: swept {len(grid)} epoch counts")

    rows = []
    for epochs in grid:
        entries = per_epoch[epochs]
        rows.append(
            TradeoffRow(
                epochs=epochs,
                i_nmse_db=mean_db([i for _, i, _ in entries]),
                g_nmse_db=mean_db([g for _, _, g in entries]),
                per_ue=[(ue, to_db(i), to_db(g)) for ue, i, g in entries],
            )
        )
    return rows


def decoder_payload_bits(ps: ParamSet) -> int:
    """Bits to upload one personalized decoder at 32-bit precision"""
    return BASELINE_BITS * sum(e.value.size for e in ps if e.name.startswith("decoder."))
