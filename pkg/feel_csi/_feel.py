"""
FedAvg-based FEEL with quantized transport, plus the centralized (CL) and
individual (IL) learning baselines.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._autoencoder import build_model, global_nmse, individual_nmse, mean_db, to_db
from ._exceptions import ConfigError, ShapeMismatchError
from ._models import (
    AggregationMode,
    AutoencoderConfig,
    FeelConfig,
    QuantPolicy,
    RoundHistory,
    RoundRecord,
    TrainConfig,
    UeDataset,
)
from ._nn import ParamSet, flatten_params, unflatten
from ._quant import transport
from ._reporting import Reporter, ensure_reporter
from ._seeding import derive_rng
from ._trainer import (
    PlateauSchedule,
    TrainingData,
    local_update,
    steps_per_epoch,
    train_epochs,
    train_steps,
)


def pretrain_global(
    model_cfg: AutoencoderConfig,
    pretrain_datasets: Sequence[UeDataset],
    tc: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
) -> ParamSet:
    """w0: a fresh model, centrally trained on the pretrain scenario when epochs > 0"""
    w0 = build_model(model_cfg, rng)
    if epochs <= 0:
        return w0
    trained, _ = train_epochs(w0, TrainingData.from_datasets(pretrain_datasets), tc, rng, epochs)
    return trained


def schedule_ues(rng: np.random.Generator, num_ues: int, num_scheduled: int) -> List[int]:
    """M distinct UE ids from 1..K, uniformly without replacement, sorted"""
    if not 1 <= num_scheduled <= num_ues:
        raise ConfigError(f"Cannot schedule {num_scheduled} of {num_ues} UEs")
    picked = rng.choice(num_ues, size=num_scheduled, replace=False) + 1
    return sorted(int(i) for i in picked)


def aggregate(
    w: np.ndarray,
    deltas: Sequence[np.ndarray],
    sizes: Sequence[int],
    mode: AggregationMode = AggregationMode.TOTAL_ALL_UES,
    ue_ids: Optional[Sequence[int]] = None,
    total_size: Optional[int] = None,
) -> np.ndarray:
    """w + sum_i |D_i| / |D| * delta_i, summed in ascending UE-id order.

    In TOTAL_ALL_UES mode |D| is ``total_size`` (all K UEs), defaulting to the
    sum of ``sizes`` when every UE is present. TOTAL_SCHEDULED always uses the
    scheduled UEs' sum.
    """
    if len(deltas) != len(sizes):
        raise ShapeMismatchError(f"{len(deltas)} deltas but {len(sizes)} sizes")
    if any(size <= 0 for size in sizes):
        raise ConfigError("Dataset sizes must be positive")
    for delta in deltas:
        if delta.shape != w.shape:
            raise ShapeMismatchError(f"Delta of shape {delta.shape} does not match {w.shape}")
    ids = list(ue_ids) if ue_ids is not None else list(range(len(deltas)))
    if len(ids) != len(deltas):
        raise ShapeMismatchError(f"{len(ids)} UE ids for {len(deltas)} deltas")

    if mode == AggregationMode.TOTAL_SCHEDULED or total_size is None:
        denom = float(sum(sizes))
    else:
        denom = float(total_size)
    update = np.zeros_like(w)
    for i in sorted(range(len(ids)), key=lambda k: ids[k]):
        update += (sizes[i] / denom) * deltas[i]
    return w + update


def run_feel(
    cfg: FeelConfig,
    datasets: Sequence[UeDataset],
    rng: np.random.Generator,
    initial: ParamSet,
    reporter: Optional[Reporter] = None,
    on_round: Optional[Callable[[RoundRecord], None]] = None,
) -> Tuple[RoundHistory, ParamSet]:
    """FEEL training loop: each round broadcasts w, trains locally and aggregates the uplinked deltas.

    UE ``i`` (1-based) owns ``datasets[i - 1]``. The returned model is the
    BS's unquantized global model; validation uses it as well.
    """
    reporter = ensure_reporter(reporter)
    if len(datasets) != cfg.num_ues:
        raise ConfigError(f"FEEL expects {cfg.num_ues} datasets, got {len(datasets)}")
    tc, quant = cfg.train, cfg.quant
    base_seed = int(rng.integers(2**63))
    schedule_rng = derive_rng(base_seed, "schedule")
    lr_schedule = PlateauSchedule.from_config(tc)

    template = initial.copy()
    w = flatten_params(initial)
    sizes = [len(ds.train) for ds in datasets]
    total_size = sum(sizes)
    history = RoundHistory()
    cum_ul = cum_dl = 0

    for t in range(1, cfg.rounds + 1):
        broadcast, dl_bits = transport(
            w, template, quant.downlink_bits, quant.stochastic_rounding, derive_rng(base_seed, "downlink", t)
        )
        cum_dl += dl_bits
        received = unflatten(broadcast, template)
        scheduled = schedule_ues(schedule_rng, cfg.num_ues, cfg.scheduled_per_round)

        deltas, losses = [], []
        for ue_id in scheduled:
            ds = datasets[ue_id - 1]
            delta, epoch_losses = local_update(
                received, ds, tc, derive_rng(base_seed, "local", t, ue_id), lr=lr_schedule.lr
            )
            delta_rx, ul_bits = transport(
                delta,
                template,
                quant.uplink_bits,
                quant.stochastic_rounding,
                derive_rng(base_seed, "uplink", t, ue_id),
            )
            cum_ul += ul_bits
            reporter.log_debug(f"round {t} UE {ue_id}: local loss {epoch_losses[-1]:.5f}, uplink {ul_bits} bits")
            deltas.append(delta_rx)
            losses.append(epoch_losses[-1])
            history.total_local_steps += tc.local_epochs * steps_per_epoch(len(ds.train), tc.batch_size)

        w = aggregate(
            w,
            deltas,
            [sizes[i - 1] for i in scheduled],
            cfg.aggregation,
            ue_ids=scheduled,
            total_size=total_size,
        )
        gnmse_db = to_db(global_nmse(unflatten(w, template), datasets, "val"))
        record = RoundRecord(
            round=t,
            scheduled_ids=list(scheduled),
            mean_local_loss=float(np.mean(losses)),
            gnmse_db=gnmse_db,
            cum_uplink_bits=cum_ul,
            cum_downlink_bits=cum_dl,
            learning_rate=lr_schedule.lr,
        )
        history.records.append(record)
        if lr_schedule.update(gnmse_db):
            reporter.log_info(f"round {t}: learning rate dropped to {lr_schedule.lr:g}")
        reporter.log_verbose(
            f"round {t}: ues={scheduled} loss={record.mean_local_loss:.5f} "
            f"val G-NMSE={gnmse_db:.2f} dB"
        )
        if on_round is not None:
            on_round(record)

    final = unflatten(w, template)
    history.final_metrics = {
        "g_nmse_db": to_db(global_nmse(final, datasets, "test")),
        "i_nmse_db": mean_db(individual_nmse({ds.ue_id: final for ds in datasets}, datasets).values()),
    }
    return history, final


def final_broadcast(
    ps: ParamSet, quant: QuantPolicy, rng: Optional[np.random.Generator] = None
) -> Tuple[ParamSet, int]:
    """The global model as UEs receive it after downlink quantization, and its size in bits"""
    received, bits = transport(
        flatten_params(ps), ps, quant.downlink_bits, quant.stochastic_rounding, rng
    )
    return unflatten(received, ps), bits


def fair_step_budgets(total_local_steps: int, num_ues: int) -> Tuple[int, int]:
    """(CL steps, per-UE IL steps) matching FEEL's total gradient-step count"""
    return total_local_steps, max(1, total_local_steps // num_ues)


def run_cl(
    datasets: Sequence[UeDataset],
    tc: TrainConfig,
    rng: np.random.Generator,
    initial: ParamSet,
    num_steps: Optional[int] = None,
    reporter: Optional[Reporter] = None,
) -> ParamSet:
    """One model trained at the BS on every UE's train split.

    Without ``num_steps`` the model trains for tc.local_epochs epochs.
    """
    reporter = ensure_reporter(reporter)
    data = TrainingData.from_datasets(datasets)
    if num_steps is None:
        num_steps = tc.local_epochs * steps_per_epoch(len(data), tc.batch_size)

    def validate(ps: ParamSet) -> float:
        return to_db(global_nmse(ps, datasets, "val"))

    def on_epoch(epoch: int, loss: float, metric: float):
        reporter.log_verbose(f"CL epoch {epoch}: loss={loss:.5f} val G-NMSE={metric:.2f} dB")

    model, _ = train_steps(initial, data, tc, rng, num_steps, validate, on_epoch)
    return model


def run_il(
    datasets: Sequence[UeDataset],
    tc: TrainConfig,
    rng: np.random.Generator,
    initial: ParamSet,
    num_steps: Optional[int] = None,
    reporter: Optional[Reporter] = None,
) -> Dict[int, ParamSet]:
    """One private model per UE, each trained only on its own train split"""
    reporter = ensure_reporter(reporter)
    base_seed = int(rng.integers(2**63))
    models = {}
    for ds in datasets:
        data = TrainingData.from_datasets([ds])
        steps = num_steps
        if steps is None:
            steps = tc.local_epochs * steps_per_epoch(len(data), tc.batch_size)

        def validate(ps: ParamSet, ds=ds) -> float:
            return to_db(global_nmse(ps, [ds], "val"))

        models[ds.ue_id], _ = train_steps(
            initial, data, tc, derive_rng(base_seed, "il", ds.ue_id), steps, validate
        )
        reporter.log_verbose(f"IL model for UE {ds.ue_id} trained for {steps} steps")
    return models


def history_rows(history: RoundHistory) -> List[List[object]]:
    """Per-round rows in ROUNDS_CSV_COLUMNS order"""
    return [
        [
            r.round,
            ";".join(str(i) for i in r.scheduled_ids),
            r.mean_local_loss,
            r.gnmse_db,
            r.cum_uplink_bits,
            r.cum_downlink_bits,
        ]
        for r in history.records
    ]
