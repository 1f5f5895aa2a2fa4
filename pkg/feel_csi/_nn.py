"""
Minimal layer toolkit with reverse-mode gradients.

Layers are stateless descriptions; their tensors live in a ParamSet keyed by
``<layer name>.<tensor>``. Every layer implements::

    forward(ps, x, training, updates) -> (y, cache)
    backward(ps, cache, dy) -> (dx, {param name: gradient})

``updates`` collects new values for non-trainable tensors (batch-norm running
statistics) produced by a training-mode forward pass.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ._constants import BATCHNORM_EPS, BATCHNORM_MOMENTUM, LEAKY_SLOPE
from ._exceptions import ShapeMismatchError, TemplateMismatchError
from ._models import ParamRole

Grads = Dict[str, np.ndarray]


# ---------------------------------------------------------------- ParamSet


@dataclass
class ParamEntry:
    name: str
    value: np.ndarray
    role: ParamRole
    trainable: bool = True


class ParamSet:
    """Ordered named tensors of one model; order is fixed at construction"""

    def __init__(self, entries: Sequence[ParamEntry] = (), architecture: Any = None):
        self.entries: List[ParamEntry] = []
        self._index: Dict[str, int] = {}
        self.architecture = architecture
        for entry in entries:
            self.add(entry)

    def add(self, entry: ParamEntry):
        if entry.name in self._index:
            raise TemplateMismatchError(f"Duplicate parameter name '{entry.name}'")
        entry.value = np.asarray(entry.value, dtype=np.float64)
        self._index[entry.name] = len(self.entries)
        self.entries.append(entry)

    def entry(self, name: str) -> ParamEntry:
        return self.entries[self._index[name]]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[self._index[name]].value

    def __setitem__(self, name: str, value: np.ndarray):
        entry = self.entry(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != entry.value.shape:
            raise ShapeMismatchError(
                f"Parameter '{name}' has shape {entry.value.shape}, got {value.shape}"
            )
        entry.value = value

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self) -> Iterator[ParamEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def num_elements(self, role: Optional[ParamRole] = None) -> int:
        return int(
            sum(e.value.size for e in self.entries if role is None or e.role == role)
        )

    def signature(self) -> Tuple[Tuple[str, Tuple[int, ...], ParamRole], ...]:
        return tuple((e.name, e.value.shape, e.role) for e in self.entries)

    def copy(self) -> "ParamSet":
        return ParamSet(
            [ParamEntry(e.name, e.value.copy(), e.role, e.trainable) for e in self.entries],
            architecture=self.architecture,
        )

    def bitwise_equal(self, other: "ParamSet") -> bool:
        if self.signature() != other.signature():
            return False
        return all(
            a.value.tobytes() == b.value.tobytes() for a, b in zip(self.entries, other.entries)
        )


def flatten_params(ps: ParamSet) -> np.ndarray:
    """Concatenate every tensor in entry order"""
    if not len(ps):
        return np.zeros(0, dtype=np.float64)
    return np.concatenate([e.value.ravel() for e in ps])


def unflatten(vector: np.ndarray, template: ParamSet) -> ParamSet:
    """Inverse of flatten_params using the template's names, shapes and roles"""
    vector = np.asarray(vector, dtype=np.float64)
    expected = template.num_elements()
    if vector.ndim != 1 or vector.size != expected:
        raise ShapeMismatchError(
            f"Vector of length {vector.size} does not match template with {expected} elements"
        )
    entries = []
    offset = 0
    for e in template:
        size = e.value.size
        value = vector[offset : offset + size].reshape(e.value.shape).copy()
        entries.append(ParamEntry(e.name, value, e.role, e.trainable))
        offset += size
    return ParamSet(entries, architecture=template.architecture)


def flatten_grads(grads: Grads, template: ParamSet) -> np.ndarray:
    """Gradient dict as a flat vector aligned with flatten_params; missing entries are 0"""
    parts = []
    for e in template:
        g = grads.get(e.name)
        parts.append(np.zeros(e.value.size) if g is None else g.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def glorot_uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int
) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------- layers


class Layer:
    """Base layer without parameters"""

    def __init__(self, name: str):
        self.name = name

    def init_params(self, rng: np.random.Generator) -> List[ParamEntry]:
        return []

    def forward(self, ps: ParamSet, x: np.ndarray, training: bool = False, updates=None):
        raise NotImplementedError

    def backward(self, ps: ParamSet, cache, dy: np.ndarray) -> Tuple[np.ndarray, Grads]:
        raise NotImplementedError

    def output_channels(self, in_channels: int) -> int:
        return in_channels

    def param(self, suffix: str) -> str:
        return f"{self.name}.{suffix}"


class Dense(Layer):
    """y = x W^T + b with W of shape (out, in)"""

    def __init__(self, name: str, in_features: int, out_features: int, bias: bool = True):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.bias = bias

    def init_params(self, rng):
        entries = [
            ParamEntry(
                self.param("weight"),
                glorot_uniform(
                    rng, (self.out_features, self.in_features), self.in_features, self.out_features
                ),
                ParamRole.WEIGHT,
            )
        ]
        if self.bias:
            entries.append(
                ParamEntry(self.param("bias"), np.zeros(self.out_features), ParamRole.BIAS)
            )
        return entries

    def forward(self, ps, x, training=False, updates=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatchError(
                f"{self.name}: expected (n, {self.in_features}) input, got {x.shape}"
            )
        y = x @ ps[self.param("weight")].T
        if self.bias:
            y = y + ps[self.param("bias")]
        return y, x

    def backward(self, ps, cache, dy):
        x = cache
        grads = {self.param("weight"): dy.T @ x}
        if self.bias:
            grads[self.param("bias")] = dy.sum(axis=0)
        return dy @ ps[self.param("weight")], grads


class Conv2d(Layer):
    """Stride-1 convolution with zero "same" padding, weight (out, in, kh, kw)"""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: Tuple[int, int],
        bias: bool = False,
    ):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.bias = bias

    def output_channels(self, in_channels):
        return self.out_channels

    def _padding(self):
        kh, kw = self.kernel
        top, left = (kh - 1) // 2, (kw - 1) // 2
        return (top, kh - 1 - top), (left, kw - 1 - left)

    def init_params(self, rng):
        kh, kw = self.kernel
        shape = (self.out_channels, self.in_channels, kh, kw)
        entries = [
            ParamEntry(
                self.param("weight"),
                glorot_uniform(rng, shape, self.in_channels * kh * kw, self.out_channels * kh * kw),
                ParamRole.WEIGHT,
            )
        ]
        if self.bias:
            entries.append(
                ParamEntry(self.param("bias"), np.zeros(self.out_channels), ParamRole.BIAS)
            )
        return entries

    def forward(self, ps, x, training=False, updates=None):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"{self.name}: expected (n, {self.in_channels}, h, w) input, got {x.shape}"
            )
        n, _, h, w = x.shape
        (pt, pb), (pl, pr) = self._padding()
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        weight = ps[self.param("weight")]
        y = np.zeros((n, self.out_channels, h, w))
        kh, kw = self.kernel
        for i in range(kh):
            for j in range(kw):
                y += np.einsum("nchw,oc->nohw", xp[:, :, i : i + h, j : j + w], weight[:, :, i, j])
        if self.bias:
            y += ps[self.param("bias")][None, :, None, None]
        return y, (xp, x.shape)

    def backward(self, ps, cache, dy):
        xp, shape = cache
        _, _, h, w = shape
        (pt, _), (pl, _) = self._padding()
        weight = ps[self.param("weight")]
        dweight = np.zeros_like(weight)
        dxp = np.zeros_like(xp)
        kh, kw = self.kernel
        for i in range(kh):
            for j in range(kw):
                window = xp[:, :, i : i + h, j : j + w]
                dweight[:, :, i, j] = np.einsum("nohw,nchw->oc", dy, window)
                dxp[:, :, i : i + h, j : j + w] += np.einsum("nohw,oc->nchw", dy, weight[:, :, i, j])
        grads = {self.param("weight"): dweight}
        if self.bias:
            grads[self.param("bias")] = dy.sum(axis=(0, 2, 3))
        return dxp[:, :, pt : pt + h, pl : pl + w], grads


class BatchNorm(Layer):
    """Per-channel batch normalization over every axis except axis 1.

    Training mode normalizes with batch statistics and records new running
    statistics in ``updates``; inference mode uses the running statistics.
    """

    def __init__(
        self,
        name: str,
        channels: int,
        momentum: float = BATCHNORM_MOMENTUM,
        eps: float = BATCHNORM_EPS,
    ):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

    def init_params(self, rng):
        c = self.channels
        return [
            ParamEntry(self.param("gamma"), np.ones(c), ParamRole.OTHER),
            ParamEntry(self.param("beta"), np.zeros(c), ParamRole.OTHER),
            ParamEntry(self.param("running_mean"), np.zeros(c), ParamRole.OTHER, trainable=False),
            ParamEntry(self.param("running_var"), np.ones(c), ParamRole.OTHER, trainable=False),
        ]

    def _bshape(self, x):
        return (1, self.channels) + (1,) * (x.ndim - 2)

    def forward(self, ps, x, training=False, updates=None):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeMismatchError(f"{self.name}: expected {self.channels} channels, got {x.shape}")
        axes = tuple(a for a in range(x.ndim) if a != 1)
        bshape = self._bshape(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if updates is not None:
                m = self.momentum
                updates[self.param("running_mean")] = m * ps[self.param("running_mean")] + (1 - m) * mean
                updates[self.param("running_var")] = m * ps[self.param("running_var")] + (1 - m) * var
        else:
            mean = ps[self.param("running_mean")]
            var = ps[self.param("running_var")]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        y = ps[self.param("gamma")].reshape(bshape) * xhat + ps[self.param("beta")].reshape(bshape)
        return y, (xhat, inv_std, training, axes)

    def backward(self, ps, cache, dy):
        xhat, inv_std, training, axes = cache
        bshape = self._bshape(dy)
        grads = {
            self.param("gamma"): np.sum(dy * xhat, axis=axes),
            self.param("beta"): np.sum(dy, axis=axes),
        }
        dxhat = dy * ps[self.param("gamma")].reshape(bshape)
        if not training:
            return dxhat * inv_std.reshape(bshape), grads
        count = dy.size // self.channels
        sum_dxhat = np.sum(dxhat, axis=axes).reshape(bshape)
        sum_dxhat_xhat = np.sum(dxhat * xhat, axis=axes).reshape(bshape)
        dx = (inv_std.reshape(bshape) / count) * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx, grads


class LeakyReLU(Layer):
    def __init__(self, name: str, slope: float = LEAKY_SLOPE):
        super().__init__(name)
        self.slope = slope

    def forward(self, ps, x, training=False, updates=None):
        positive = x > 0
        return np.where(positive, x, self.slope * x), positive

    def backward(self, ps, cache, dy):
        return np.where(cache, dy, self.slope * dy), {}


class Sigmoid(Layer):
    def forward(self, ps, x, training=False, updates=None):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, ps, cache, dy):
        return dy * cache * (1.0 - cache), {}


class Flatten(Layer):
    def forward(self, ps, x, training=False, updates=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, ps, cache, dy):
        return dy.reshape(cache), {}


class Reshape(Layer):
    def __init__(self, name: str, shape: Tuple[int, ...]):
        super().__init__(name)
        self.shape = tuple(shape)

    def output_channels(self, in_channels):
        return self.shape[0]

    def forward(self, ps, x, training=False, updates=None):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeMismatchError(f"{self.name}: cannot reshape {x.shape} to {self.shape}")
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, ps, cache, dy):
        return dy.reshape(cache), {}


# ---------------------------------------------------------------- composites


class Sequential(Layer):
    def __init__(self, name: str, layers: Sequence[Layer]):
        super().__init__(name)
        self.layers = list(layers)

    def init_params(self, rng):
        entries = []
        for layer in self.layers:
            entries.extend(layer.init_params(rng))
        return entries

    def output_channels(self, in_channels):
        for layer in self.layers:
            in_channels = layer.output_channels(in_channels)
        return in_channels

    def forward(self, ps, x, training=False, updates=None):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(ps, x, training, updates)
            caches.append(cache)
        return x, caches

    def backward(self, ps, cache, dy):
        grads: Grads = {}
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache)):
            dy, layer_grads = layer.backward(ps, layer_cache, dy)
            grads.update(layer_grads)
        return dy, grads


class Parallel(Layer):
    """Feeds the same input to every branch and concatenates along channels"""

    def __init__(self, name: str, branches: Sequence[Layer]):
        super().__init__(name)
        self.branches = list(branches)

    def init_params(self, rng):
        entries = []
        for branch in self.branches:
            entries.extend(branch.init_params(rng))
        return entries

    def output_channels(self, in_channels):
        return sum(b.output_channels(in_channels) for b in self.branches)

    def forward(self, ps, x, training=False, updates=None):
        outputs, caches = [], []
        for branch in self.branches:
            y, cache = branch.forward(ps, x, training, updates)
            outputs.append(y)
            caches.append(cache)
        splits = np.cumsum([y.shape[1] for y in outputs])[:-1]
        return np.concatenate(outputs, axis=1), (caches, splits)

    def backward(self, ps, cache, dy):
        caches, splits = cache
        grads: Grads = {}
        dx = None
        for branch, branch_cache, dy_part in zip(
            self.branches, caches, np.split(dy, splits, axis=1)
        ):
            dxb, branch_grads = branch.backward(ps, branch_cache, dy_part)
            grads.update(branch_grads)
            dx = dxb if dx is None else dx + dxb
        return dx, grads


class ReZero(Layer):
    """y = x + alpha * branch(x), alpha a trainable scalar starting at 0"""

    def __init__(self, name: str, branch: Layer):
        super().__init__(name)
        self.branch = branch

    def init_params(self, rng):
        return self.branch.init_params(rng) + [
            ParamEntry(self.param("alpha"), np.zeros(1), ParamRole.OTHER)
        ]

    def forward(self, ps, x, training=False, updates=None):
        b, cache = self.branch.forward(ps, x, training, updates)
        if b.shape != x.shape:
            raise ShapeMismatchError(f"{self.name}: branch output {b.shape} != input {x.shape}")
        return x + ps[self.param("alpha")][0] * b, (b, cache)

    def backward(self, ps, cache, dy):
        b, branch_cache = cache
        alpha = ps[self.param("alpha")][0]
        dxb, grads = self.branch.backward(ps, branch_cache, alpha * dy)
        grads[self.param("alpha")] = np.array([np.sum(dy * b)])
        return dy + dxb, grads


# ---------------------------------------------------------------- network


@dataclass
class GradientTape:
    """Caches and pending running-statistic updates of one training-mode pass"""

    cache: Any
    updates: Dict[str, np.ndarray] = field(default_factory=dict)


class Network:
    """Root layer plus the plumbing to build, run and differentiate it"""

    def __init__(self, root: Layer, architecture: Any = None):
        self.root = root
        self.architecture = architecture

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        return ParamSet(self.root.init_params(rng), architecture=self.architecture)

    def forward(
        self, ps: ParamSet, x: np.ndarray, training: bool = False
    ) -> Tuple[np.ndarray, Optional[GradientTape]]:
        """Returns the output and, in training mode only, the tape for backward"""
        updates: Dict[str, np.ndarray] = {}
        y, cache = self.root.forward(ps, x, training, updates)
        if not training:
            return y, None
        return y, GradientTape(cache, updates)

    def predict(self, ps: ParamSet, x: np.ndarray) -> np.ndarray:
        return self.forward(ps, x, training=False)[0]

    def backward(
        self, ps: ParamSet, tape: GradientTape, dy: np.ndarray
    ) -> Tuple[np.ndarray, Grads]:
        return self.root.backward(ps, tape.cache, dy)

    @staticmethod
    def apply_updates(ps: ParamSet, tape: GradientTape):
        for name, value in tape.updates.items():
            ps[name] = value
