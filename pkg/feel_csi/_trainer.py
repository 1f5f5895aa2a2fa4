"""
Optimizers, mini-batch training loops and the FEEL local update.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ._autoencoder import Autoencoder, compute_loss, model_for
from ._channel import to_network_input
from ._constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from ._exceptions import EmptyDatasetError, ShapeMismatchError
from ._models import LossKind, OptimizerKind, TrainConfig, UeDataset
from ._nn import Grads, ParamSet, flatten_params

# ---------------------------------------------------------------- optimizers


@dataclass
class OptimizerState:
    """Adam moments per trainable tensor plus the step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def fresh(cls, ps: ParamSet) -> "OptimizerState":
        trainable = [e for e in ps if e.trainable]
        return cls(
            m={e.name: np.zeros_like(e.value) for e in trainable},
            v={e.name: np.zeros_like(e.value) for e in trainable},
        )

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
            self.beta1,
            self.beta2,
            self.eps,
        )


def _checked_grads(ps: ParamSet, grads: Grads):
    for name, g in grads.items():
        entry = ps.entry(name)
        if g.shape != entry.value.shape:
            raise ShapeMismatchError(
                f"Gradient for '{name}' has shape {g.shape}, parameter has {entry.value.shape}"
            )
        if entry.trainable:
            yield entry, g


def adam_step(
    ps: ParamSet, grads: Grads, state: OptimizerState, lr: float
) -> Tuple[ParamSet, OptimizerState]:
    """Adam with bias correction; updates ``ps`` and ``state`` in place and returns them"""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for entry, g in _checked_grads(ps, grads):
        m = state.m.setdefault(entry.name, np.zeros_like(entry.value))
        v = state.v.setdefault(entry.name, np.zeros_like(entry.value))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[entry.name] = m
        state.v[entry.name] = v
        entry.value = entry.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return ps, state


def sgd_step(ps: ParamSet, grads: Grads, lr: float) -> ParamSet:
    """w <- w - lr * grad, in place"""
    for entry, g in _checked_grads(ps, grads):
        entry.value = entry.value - lr * g
    return ps


class PlateauSchedule:
    """One-shot learning-rate drop when the validation metric stops improving.

    The rate is multiplied by ``drop_factor`` once, after ``patience``
    consecutive updates that fail to beat the best value by ``min_improvement``.
    """

    def __init__(
        self,
        initial_lr: float,
        drop_factor: float = 0.1,
        patience: int = 20,
        min_improvement: float = 0.01,
    ):
        self.lr = initial_lr
        self.drop_factor = drop_factor
        self.patience = patience
        self.min_improvement = min_improvement
        self.best: Optional[float] = None
        self.wait = 0
        self.dropped = False

    @classmethod
    def from_config(cls, tc: TrainConfig) -> "PlateauSchedule":
        return cls(tc.learning_rate, tc.lr_drop_factor, tc.lr_patience, tc.lr_min_improvement_db)

    def update(self, metric_db: float) -> bool:
        """Record one validation value (lower is better); True if the rate dropped now"""
        if self.best is None or metric_db < self.best - self.min_improvement:
            self.best = metric_db
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience and not self.dropped:
            self.lr *= self.drop_factor
            self.dropped = True
            return True
        return False


# ---------------------------------------------------------------- data


@dataclass
class TrainingData:
    """Normalized network inputs with the per-sample affine that produced them"""

    inputs: np.ndarray
    scales: np.ndarray
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.inputs)

    @classmethod
    def from_datasets(cls, datasets: Sequence[UeDataset], split: str = "train") -> "TrainingData":
        inputs, scales, offsets = [], [], []
        for ds in datasets:
            matrices = ds.split(split)
            inputs.append(to_network_input(matrices, ds.norm_params))
            scales.append(np.full(len(matrices), ds.norm_params.scale))
            offsets.append(np.full(len(matrices), ds.norm_params.offset))
        if not inputs:
            raise EmptyDatasetError("No datasets given")
        return cls(np.concatenate(inputs), np.concatenate(scales), np.concatenate(offsets))

    def batch(self, index: np.ndarray) -> "TrainingData":
        return TrainingData(self.inputs[index], self.scales[index], self.offsets[index])


def steps_per_epoch(num_samples: int, batch_size: int) -> int:
    """Mini-batches per epoch; the last partial batch is kept"""
    return int(math.ceil(num_samples / batch_size))


def iterate_minibatches(
    num_samples: int, batch_size: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    order = rng.permutation(num_samples)
    for start in range(0, num_samples, batch_size):
        yield order[start : start + batch_size]


# ---------------------------------------------------------------- training loops


def train_step(
    model: Autoencoder,
    ps: ParamSet,
    batch: TrainingData,
    loss_kind: LossKind,
    optimizer: OptimizerKind,
    state: OptimizerState,
    lr: float,
) -> float:
    """One forward/backward/update on ``batch``; mutates ``ps`` and ``state``"""
    y, tape = model.forward(ps, batch.inputs, training=True)
    loss, dy = compute_loss(loss_kind, batch.inputs, y, batch.scales, batch.offsets)
    _, grads = model.backward(ps, tape, dy)
    if optimizer == OptimizerKind.ADAM:
        adam_step(ps, grads, state, lr)
    else:
        sgd_step(ps, grads, lr)
    model.network.apply_updates(ps, tape)
    return loss


def _require_samples(data: TrainingData):
    if len(data) == 0:
        raise EmptyDatasetError("Training split is empty")


def train_epochs(
    ps: ParamSet,
    data: TrainingData,
    tc: TrainConfig,
    rng: np.random.Generator,
    epochs: int,
    lr: Optional[float] = None,
) -> Tuple[ParamSet, List[float]]:
    """Train a copy of ``ps`` for ``epochs`` epochs with fresh optimizer state.

    Returns the trained copy and the mean batch loss of every epoch.
    """
    _require_samples(data)
    model = model_for(ps)
    work = ps.copy()
    state = OptimizerState.fresh(work)
    lr = tc.learning_rate if lr is None else lr
    history = []
    for _ in range(epochs):
        losses = [
            train_step(model, work, data.batch(idx), tc.loss, tc.optimizer, state, lr)
            for idx in iterate_minibatches(len(data), tc.batch_size, rng)
        ]
        history.append(float(np.mean(losses)))
    return work, history


def train_steps(
    ps: ParamSet,
    data: TrainingData,
    tc: TrainConfig,
    rng: np.random.Generator,
    num_steps: int,
    validate: Optional[Callable[[ParamSet], float]] = None,
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
) -> Tuple[ParamSet, List[float]]:
    """Centralized training for exactly ``num_steps`` mini-batch steps.

    Epochs reshuffle as in train_epochs and the final epoch may stop early.
    When ``validate`` is given it is called after every full epoch and drives
    a PlateauSchedule built from ``tc``.
    """
    _require_samples(data)
    model = model_for(ps)
    work = ps.copy()
    state = OptimizerState.fresh(work)
    schedule = PlateauSchedule.from_config(tc)
    history: List[float] = []
    done = 0
    epoch = 0
    while done < num_steps:
        losses = []
        for idx in iterate_minibatches(len(data), tc.batch_size, rng):
            if done >= num_steps:
                break
            losses.append(
                train_step(model, work, data.batch(idx), tc.loss, tc.optimizer, state, schedule.lr)
            )
            done += 1
        epoch += 1
        history.append(float(np.mean(losses)))
        if validate is not None:
            metric = validate(work)
            schedule.update(metric)
            if on_epoch is not None:
                on_epoch(epoch, history[-1], metric)
    return work, history


def local_update(
    ps: ParamSet,
    ds: UeDataset,
    tc: TrainConfig,
    rng: np.random.Generator,
    lr: Optional[float] = None,
) -> Tuple[np.ndarray, List[float]]:
    """E local epochs from ``ps`` on the UE's train split.

    Returns flat(w_after) - flat(w_before) and the per-epoch loss history;
    ``ps`` itself is left untouched.
    """
    if len(ds.train) == 0:
        raise EmptyDatasetError(f"UE {ds.ue_id} has an empty train split")
    data = TrainingData.from_datasets([ds])
    trained, history = train_epochs(ps, data, tc, rng, tc.local_epochs, lr)
    return flatten_params(trained) - flatten_params(ps), history
