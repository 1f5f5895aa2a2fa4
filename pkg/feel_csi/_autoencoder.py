"""
Scaled CRNet autoencoder: model assembly, losses and NMSE metrics.
"""

import math
import re
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._channel import batch_from_angular_delay, batch_to_angular_delay, from_network_output, to_network_input
from ._exceptions import ShapeMismatchError, TemplateMismatchError, UndefinedInputError
from ._models import AutoencoderConfig, LossKind, NormParams, UeDataset
from ._nn import (
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    GradientTape,
    Grads,
    Layer,
    LeakyReLU,
    Network,
    Parallel,
    ParamSet,
    ReZero,
    Reshape,
    Sequential,
    Sigmoid,
)

EVAL_CHUNK = 256


def _transpose(kernel: Tuple[int, int]) -> Tuple[int, int]:
    return kernel[1], kernel[0]


def _conv_stack(
    name: str, in_channels: int, width: int, kernels: Sequence[Tuple[int, int]]
) -> List[Layer]:
    layers: List[Layer] = []
    channels = in_channels
    for i, kernel in enumerate(kernels):
        if i:
            layers.append(LeakyReLU(f"{name}.act{i - 1}"))
        layers.append(Conv2d(f"{name}.conv{i}", channels, width, kernel))
        channels = width
    return layers


def _crblock(name: str, width: int) -> Layer:
    """Multi-resolution residual block; normalization-free, bias-free"""
    branch = Sequential(
        name + ".branch",
        [
            Parallel(
                name + ".paths",
                [
                    Sequential(name + ".path1", _conv_stack(name + ".path1", 2, width, [(3, 3), (1, 9), (9, 1)])),
                    Sequential(name + ".path2", _conv_stack(name + ".path2", 2, width, [(1, 5), (5, 1)])),
                ],
            ),
            LeakyReLU(name + ".act"),
            Conv2d(name + ".fusion", 2 * width, 2, (1, 1)),
        ],
    )
    return ReZero(name, branch)


class Autoencoder:
    """Encoder and decoder networks sharing one ParamSet namespace"""

    def __init__(self, cfg: AutoencoderConfig):
        self.cfg = cfg
        size = 2 * cfg.nt * cfg.nc
        k0, k1 = (tuple(k) for k in cfg.branch_kernels)
        w = cfg.width

        fusion: List[Layer] = [Conv2d("encoder.fusion.conv", 2 * w, 2, (1, 1))]
        if cfg.use_batchnorm:
            fusion.append(BatchNorm("encoder.fusion.bn", 2))
        encoder = Sequential(
            "encoder",
            [
                Parallel(
                    "encoder.branches",
                    [
                        Sequential(
                            "encoder.branch_a",
                            _conv_stack("encoder.branch_a", 2, w, [k0, k1, _transpose(k1)])
                            + [LeakyReLU("encoder.branch_a.out")],
                        ),
                        Sequential(
                            "encoder.branch_b",
                            _conv_stack("encoder.branch_b", 2, w, [k0])
                            + [LeakyReLU("encoder.branch_b.out")],
                        ),
                    ],
                ),
                *fusion,
                LeakyReLU("encoder.fusion.act"),
                Flatten("encoder.flatten"),
                Dense("encoder.dense", size, cfg.codeword_dim),
            ],
        )

        head: List[Layer] = [Conv2d("decoder.head.conv", 2, 2, (5, 5))]
        if cfg.use_batchnorm:
            head.append(BatchNorm("decoder.head.bn", 2))
        decoder = Sequential(
            "decoder",
            [
                Dense("decoder.dense", cfg.codeword_dim, size, bias=False),
                Reshape("decoder.reshape", (2, cfg.nt, cfg.nc)),
                *head,
                LeakyReLU("decoder.head.act"),
                *[_crblock(f"decoder.crblock{i + 1}", w) for i in range(cfg.num_crblocks)],
                Sigmoid("decoder.sigmoid"),
            ],
        )
        self.encoder = Network(encoder, cfg)
        self.decoder = Network(decoder, cfg)
        self.network = Network(Sequential("autoencoder", [encoder, decoder]), cfg)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return 2, self.cfg.nt, self.cfg.nc

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        return self.network.init_params(rng)

    def check_input(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(
                f"Expected input of shape (n, {', '.join(map(str, self.input_shape))}), got {x.shape}"
            )
        return x

    def forward(
        self, ps: ParamSet, x: np.ndarray, training: bool = False
    ) -> Tuple[np.ndarray, Optional[GradientTape]]:
        return self.network.forward(ps, self.check_input(x), training)

    def backward(self, ps: ParamSet, tape: GradientTape, dy: np.ndarray) -> Tuple[np.ndarray, Grads]:
        return self.network.backward(ps, tape, dy)

    def predict(self, ps: ParamSet, x: np.ndarray) -> np.ndarray:
        """Inference-mode reconstruction, evaluated in fixed-size chunks"""
        self.check_input(x)
        if len(x) <= EVAL_CHUNK:
            return self.network.predict(ps, x)
        return np.concatenate(
            [self.network.predict(ps, x[i : i + EVAL_CHUNK]) for i in range(0, len(x), EVAL_CHUNK)]
        )


@lru_cache(maxsize=32)
def _autoencoder(cfg: AutoencoderConfig) -> Autoencoder:
    return Autoencoder(cfg)


@lru_cache(maxsize=32)
def _layout(cfg: AutoencoderConfig):
    return _autoencoder(cfg).init_params(np.random.default_rng(0)).signature()


def model_for(ps: ParamSet) -> Autoencoder:
    """Architecture of ``ps``, inferred from its tensor shapes when not attached"""
    cfg = ps.architecture if isinstance(ps.architecture, AutoencoderConfig) else infer_config(ps)
    return _autoencoder(cfg)


def build_model(cfg: AutoencoderConfig, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases, zero ReZero scalars"""
    return _autoencoder(cfg).init_params(rng)


def infer_config(
    ps: ParamSet, nt: Optional[int] = None, nc: Optional[int] = None
) -> AutoencoderConfig:
    """Recover the AutoencoderConfig that produced ``ps`` from its shapes.

    The flattened size only fixes nt*nc; without explicit nt/nc a square
    layout is assumed.
    """
    if isinstance(ps.architecture, AutoencoderConfig) and nt is None and nc is None:
        return ps.architecture
    try:
        dense = ps["encoder.dense.weight"]
        conv0 = ps["encoder.branch_a.conv0.weight"]
        conv1 = ps["encoder.branch_a.conv1.weight"]
    except KeyError as e:
        raise TemplateMismatchError(f"Not an autoencoder checkpoint: missing {e}") from e
    codeword_dim, size = dense.shape
    cells = size // 2
    if nt is None and nc is None:
        side = math.isqrt(cells)
        if side * side != cells:
            raise TemplateMismatchError(
                f"Cannot infer nt/nc from {cells} cells; pass the dataset shape"
            )
        nt = nc = side
    elif nt is None:
        nt = cells // nc
    elif nc is None:
        nc = cells // nt
    if nt * nc != cells:
        raise TemplateMismatchError(f"Model expects {cells} cells, got nt={nt}, nc={nc}")
    blocks = [n for n in ps.names() if re.fullmatch(r"decoder\.crblock\d+\.alpha", n)]
    cfg = AutoencoderConfig(
        nt=nt,
        nc=nc,
        codeword_dim=int(codeword_dim),
        branch_kernels=(tuple(conv0.shape[2:]), tuple(conv1.shape[2:])),
        width=int(conv0.shape[0]),
        num_crblocks=len(blocks),
        use_batchnorm="encoder.fusion.bn.gamma" in ps,
    )
    if ps.signature() != _layout(cfg):
        raise TemplateMismatchError("Parameter layout does not match any autoencoder configuration")
    return cfg


def compression_ratio(cfg: AutoencoderConfig) -> float:
    """gamma = 2*nt*nc / codeword_dim"""
    return 2.0 * cfg.nt * cfg.nc / cfg.codeword_dim


def encode(ps: ParamSet, h_normalized: np.ndarray) -> np.ndarray:
    """Codeword(s) for one (2, nt, nc) input or a batch of them"""
    model = model_for(ps)
    single = h_normalized.ndim == 3
    x = h_normalized[None] if single else h_normalized
    s = model.encoder.predict(ps, model.check_input(x))
    return s[0] if single else s


def decode(ps: ParamSet, codeword: np.ndarray) -> np.ndarray:
    model = model_for(ps)
    single = codeword.ndim == 1
    s = codeword[None] if single else codeword
    if s.shape[1] != model.cfg.codeword_dim:
        raise ShapeMismatchError(
            f"Codeword length {s.shape[1]} != codeword_dim {model.cfg.codeword_dim}"
        )
    y = model.decoder.predict(ps, s)
    return y[0] if single else y


# ---------------------------------------------------------------- losses


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Shape mismatch: {a.shape} vs {b.shape}")


def _batched(h: np.ndarray, sample_ndim: int) -> np.ndarray:
    return h[None] if h.ndim == sample_ndim else h


def loss_mse(h: np.ndarray, h_hat: np.ndarray) -> float:
    """Squared Frobenius norm of the error per sample, averaged over the batch.

    Axis 0 is the batch axis; a 2-D input is a single sample.
    """
    _check_same_shape(h, h_hat)
    diff = h_hat - h
    if diff.ndim <= 2:
        return float(np.sum(np.abs(diff) ** 2))
    return float(np.sum(np.abs(diff) ** 2) / diff.shape[0])


def loss_mse_grad(h: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    """d loss_mse / d h_hat for a real batch"""
    _check_same_shape(h, h_hat)
    return 2.0 * (h_hat - h) / h.shape[0]


def _cosine_terms(h: np.ndarray, h_hat: np.ndarray):
    z = np.sum(np.conj(h_hat) * h, axis=-2)  # (n, Nc)
    a = np.linalg.norm(h_hat, axis=-2)
    b = np.linalg.norm(h, axis=-2)
    defined = (a > 0) & (b > 0)
    denom = np.where(defined, a * b, 1.0)
    c = np.where(defined, np.abs(z) / denom, 0.0)
    return z, a, b, c, defined


def loss_cosine(h_tilde: np.ndarray, h_tilde_hat: np.ndarray) -> float:
    """Negative mean per-subcarrier cosine similarity; zero-norm columns contribute 0"""
    _check_same_shape(h_tilde, h_tilde_hat)
    h = _batched(h_tilde, 2)
    h_hat = _batched(h_tilde_hat, 2)
    _, _, _, c, _ = _cosine_terms(h, h_hat)
    return float(-np.mean(c))


def loss_cosine_grad(h_tilde: np.ndarray, h_tilde_hat: np.ndarray) -> np.ndarray:
    """Gradient of loss_cosine as d/dRe + j*d/dIm with respect to h_tilde_hat"""
    _check_same_shape(h_tilde, h_tilde_hat)
    h = _batched(h_tilde, 2)
    h_hat = _batched(h_tilde_hat, 2)
    z, a, b, c, defined = _cosine_terms(h, h_hat)
    ok = defined & (np.abs(z) > 0)
    safe_z = np.where(ok, np.abs(z), 1.0)
    safe_ab = np.where(ok, a * b, 1.0)
    safe_a2 = np.where(ok, a * a, 1.0)
    coef1 = np.where(ok, np.conj(z) / (safe_z * safe_ab), 0.0)
    coef2 = np.where(ok, c / safe_a2, 0.0)
    grad_c = coef1[:, None, :] * h - coef2[:, None, :] * h_hat
    n, _, nc = h.shape
    grad = -grad_c / (n * nc)
    return grad.reshape(h_tilde_hat.shape)


def _denormalize_batch(values: np.ndarray, scales, offsets) -> np.ndarray:
    shape = (-1, 1, 1, 1)
    raw = values * np.reshape(scales, shape) + np.reshape(offsets, shape)
    return raw[:, 0] + 1j * raw[:, 1]


def compute_loss(
    kind: LossKind,
    x: np.ndarray,
    y: np.ndarray,
    scales: Union[float, np.ndarray] = 1.0,
    offsets: Union[float, np.ndarray] = 0.0,
) -> Tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the network output ``y``.

    ``x`` and ``y`` are normalized (n, 2, nt, nc) batches whose per-sample
    affine is given by ``scales`` and ``offsets``. MSE works in the
    normalized domain; the cosine loss compares spatial-frequency CSI.
    """
    if kind == LossKind.MSE:
        return loss_mse(x, y), loss_mse_grad(x, y)
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (len(x),))
    offsets = np.broadcast_to(np.asarray(offsets, dtype=np.float64), (len(x),))
    h_sf = batch_from_angular_delay(_denormalize_batch(x, scales, offsets))
    h_hat_sf = batch_from_angular_delay(_denormalize_batch(y, scales, offsets))
    loss = loss_cosine(h_sf, h_hat_sf)
    grad_ad = batch_to_angular_delay(loss_cosine_grad(h_sf, h_hat_sf))
    dy = np.stack([grad_ad.real, grad_ad.imag], axis=1) * scales.reshape(-1, 1, 1, 1)
    return loss, dy


# ---------------------------------------------------------------- metrics


def nmse_per_sample(h: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    _check_same_shape(h, h_hat)
    h = _batched(h, 2)
    h_hat = _batched(h_hat, 2)
    axes = tuple(range(1, h.ndim))
    power = np.sum(np.abs(h) ** 2, axis=axes)
    if np.any(power == 0):
        raise UndefinedInputError("NMSE is undefined for an all-zero reference")
    return np.sum(np.abs(h - h_hat) ** 2, axis=axes) / power


def nmse(h: np.ndarray, h_hat: np.ndarray) -> float:
    """Mean over samples of ||H - H_hat||^2 / ||H||^2 (linear)"""
    return float(np.mean(nmse_per_sample(h, h_hat)))


def to_db(value: float) -> float:
    if value == 0:
        return float("-inf")
    return 10.0 * math.log10(value)


def nmse_db(h: np.ndarray, h_hat: np.ndarray) -> float:
    return to_db(nmse(h, h_hat))


def reconstruct(ps: ParamSet, matrices: np.ndarray, norm: NormParams) -> np.ndarray:
    """Denormalized angular-delay reconstruction of a stack of CSI matrices"""
    x = to_network_input(matrices, norm)
    return from_network_output(model_for(ps).predict(ps, x), norm)


def evaluate_nmse(ps: ParamSet, ds: UeDataset, split: str = "test") -> float:
    matrices = ds.split(split)
    return nmse(matrices, reconstruct(ps, matrices, ds.norm_params))


def global_nmse(ps: ParamSet, datasets: Sequence[UeDataset], split: str = "test") -> float:
    """NMSE of one model over the pooled split of every UE"""
    ratios = [
        nmse_per_sample(ds.split(split), reconstruct(ps, ds.split(split), ds.norm_params))
        for ds in datasets
    ]
    return float(np.mean(np.concatenate(ratios)))


def individual_nmse(
    models: Dict[int, ParamSet], datasets: Sequence[UeDataset], split: str = "test"
) -> Dict[int, float]:
    """Per-UE NMSE of each UE's own model on its own split"""
    return {ds.ue_id: evaluate_nmse(models[ds.ue_id], ds, split) for ds in datasets}


def mean_db(values: Sequence[float]) -> float:
    """Arithmetic mean in the linear domain, reported in dB"""
    return to_db(float(np.mean(list(values))))


def constant_predictor_nmse(matrices: np.ndarray, norm: NormParams) -> float:
    """NMSE of always predicting 0.5 in the normalized domain"""
    value = norm.denormalize(0.5)
    return nmse(matrices, np.full(matrices.shape, value + 1j * value))
