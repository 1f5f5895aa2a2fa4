"""
Tests for the autoencoder assembly, losses and NMSE metrics
"""

from types import SimpleNamespace

import numpy as np
import pytest

from feel_csi import (
    AutoencoderConfig,
    ConfigError,
    LossKind,
    ParamRole,
    ShapeMismatchError,
    TemplateMismatchError,
    UndefinedInputError,
    build_model,
    compression_ratio,
    decode,
    encode,
    global_nmse,
    infer_config,
    loss_cosine,
    loss_mse,
    nmse,
    nmse_db,
)
from feel_csi._autoencoder import (
    compute_loss,
    constant_predictor_nmse,
    evaluate_nmse,
    individual_nmse,
    loss_cosine_grad,
    loss_mse_grad,
    mean_db,
    model_for,
    to_db,
)
from feel_csi._channel import from_network_output, to_network_input
from feel_csi._models import NormParams
from feel_csi._nn import ParamSet, flatten_params, unflatten

EPS = 1e-6


def expected_layout(cfg: AutoencoderConfig):
    """(weight elements, non-weight elements, weight tensors) counted layer by layer"""
    (a_h, a_w), (b_h, b_w) = cfg.branch_kernels
    w = cfg.width
    size = 2 * cfg.nt * cfg.nc
    convs = [
        2 * w * a_h * a_w,  # branch_a.conv0
        w * w * b_h * b_w,  # branch_a.conv1
        w * w * b_w * b_h,  # branch_a.conv2
        2 * w * a_h * a_w,  # branch_b.conv0
        2 * w * 2,  # fusion 1x1
        size * cfg.codeword_dim,  # encoder.dense
        cfg.codeword_dim * size,  # decoder.dense
        2 * 2 * 25,  # head 5x5
    ]
    block = [2 * w * 9, w * w * 9, w * w * 9, 2 * w * 5, w * w * 5, 2 * w * 2]
    weights = sum(convs) + cfg.num_crblocks * sum(block)
    tensors = len(convs) + cfg.num_crblocks * len(block)
    others = cfg.codeword_dim + cfg.num_crblocks
    if cfg.use_batchnorm:
        others += 2 * 4 * 2
    return weights, others, tensors


class TestModelLayout:
    def test_default_parameter_counts(self):
        ps = build_model(AutoencoderConfig(), np.random.default_rng(0))
        weights = [e for e in ps if e.role == ParamRole.WEIGHT]
        assert ps.num_elements(ParamRole.WEIGHT) == 20196
        assert ps.num_elements() - ps.num_elements(ParamRole.WEIGHT) == 26
        assert len(weights) == 20

    @pytest.mark.parametrize(
        "cfg",
        [
            AutoencoderConfig(),
            AutoencoderConfig(nt=4, nc=4, codeword_dim=4, width=2, num_crblocks=1),
            AutoencoderConfig(nt=4, nc=2, codeword_dim=3, branch_kernels=((1, 1), (2, 3)), width=3,
                              num_crblocks=3, use_batchnorm=False),
        ],
    )
    def test_counts_match_layer_formula(self, cfg):
        ps = build_model(cfg, np.random.default_rng(0))
        weights, others, tensors = expected_layout(cfg)
        assert ps.num_elements(ParamRole.WEIGHT) == weights
        assert ps.num_elements() - weights == others
        assert sum(1 for e in ps if e.role == ParamRole.WEIGHT) == tensors

    def test_parameter_names(self, tiny_model_cfg):
        names = build_model(tiny_model_cfg, np.random.default_rng(0)).names()
        for name in (
            "encoder.branch_a.conv0.weight",
            "encoder.branch_b.conv0.weight",
            "encoder.fusion.bn.gamma",
            "encoder.dense.weight",
            "encoder.dense.bias",
            "decoder.dense.weight",
            "decoder.head.conv.weight",
            "decoder.crblock1.alpha",
        ):
            assert name in names
        assert "decoder.dense.bias" not in names

    def test_initialization(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        assert np.all(ps["encoder.dense.bias"] == 0)
        assert np.all(ps["decoder.crblock1.alpha"] == 0)
        fan = 2 * 3 * 3 + 2 * 3 * 3
        limit = np.sqrt(6.0 / fan)
        assert np.max(np.abs(ps["encoder.branch_a.conv0.weight"])) <= limit

    def test_same_seed_same_model(self, tiny_model_cfg):
        a = build_model(tiny_model_cfg, np.random.default_rng(4))
        b = build_model(tiny_model_cfg, np.random.default_rng(4))
        assert a.bitwise_equal(b)


class TestEncodeDecode:
    def test_shapes_and_output_range(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).random((5, 2, 4, 4))
        s = encode(ps, x)
        assert s.shape == (5, 4)
        y = decode(ps, s)
        assert y.shape == (5, 2, 4, 4)
        assert np.all((y > 0) & (y < 1))
        assert encode(ps, x[0]).shape == (4,)
        assert decode(ps, s[0]).shape == (2, 4, 4)

    def test_inference_deterministic(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).random((3, 2, 4, 4))
        assert decode(ps, encode(ps, x)).tobytes() == decode(ps, encode(ps, x)).tobytes()

    def test_crblocks_are_identity_while_alpha_is_zero(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        changed = ps.copy()
        rng = np.random.default_rng(2)
        for entry in changed:
            if entry.name.startswith("decoder.crblock1.") and entry.role == ParamRole.WEIGHT:
                changed[entry.name] = rng.standard_normal(entry.value.shape)
        s = np.random.default_rng(3).standard_normal((2, 4))
        np.testing.assert_array_equal(decode(ps, s), decode(changed, s))

    @pytest.mark.edge_case
    def test_wrong_input_shape(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError):
            encode(ps, np.zeros((1, 2, 4, 5)))
        with pytest.raises(ShapeMismatchError):
            decode(ps, np.zeros((1, 5)))

    def test_compression_ratio(self):
        assert compression_ratio(AutoencoderConfig(nt=32, nc=32, codeword_dim=128)) == 16.0
        assert compression_ratio(AutoencoderConfig()) == 16.0
        assert compression_ratio(SimpleNamespace(nt=4, nc=4, codeword_dim=32)) == 1.0

    @pytest.mark.edge_case
    def test_codeword_must_compress(self):
        with pytest.raises(ConfigError):
            AutoencoderConfig(nt=4, nc=4, codeword_dim=32)


class TestInferConfig:
    def test_recovers_config_without_architecture(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        bare = unflatten(flatten_params(ps), ps)
        bare.architecture = None
        assert infer_config(bare) == tiny_model_cfg
        assert model_for(bare).cfg == tiny_model_cfg

    def test_non_square_needs_shape(self):
        cfg = AutoencoderConfig(nt=4, nc=2, codeword_dim=4, width=2, num_crblocks=1)
        ps = build_model(cfg, np.random.default_rng(0))
        ps.architecture = None
        assert infer_config(ps, nt=4, nc=2) == cfg
        with pytest.raises(TemplateMismatchError):
            infer_config(ps)

    @pytest.mark.edge_case
    def test_foreign_layout_rejected(self):
        with pytest.raises(TemplateMismatchError):
            infer_config(ParamSet())


class TestLosses:
    def test_mse_examples(self):
        x = np.random.default_rng(0).random((1, 2, 8, 8))
        assert loss_mse(x, x) == 0.0
        assert loss_mse(x, x + 0.1) == pytest.approx(1.28)

    def test_mse_is_batch_mean(self):
        x = np.zeros((4, 2, 2, 2))
        y = np.ones((4, 2, 2, 2))
        assert loss_mse(x, y) == pytest.approx(8.0)

    def test_mse_gradient(self):
        rng = np.random.default_rng(1)
        x, y = rng.random((3, 2, 2, 2)), rng.random((3, 2, 2, 2))
        grad = loss_mse_grad(x, y)
        numeric = np.zeros_like(y)
        for idx in np.ndindex(y.shape):
            up, down = y.copy(), y.copy()
            up[idx] += EPS
            down[idx] -= EPS
            numeric[idx] = (loss_mse(x, up) - loss_mse(x, down)) / (2 * EPS)
        np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)

    def test_cosine_examples(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))
        assert loss_cosine(h, h) == pytest.approx(-1.0)
        assert loss_cosine(h, (0.3 - 2.0j) * h) == pytest.approx(-1.0)
        value = loss_cosine(h, rng.standard_normal(h.shape) + 0j)
        assert -1.0 <= value <= 0.0

    def test_cosine_orthogonal_columns(self):
        h = np.zeros((2, 3), dtype=complex)
        h_hat = np.zeros((2, 3), dtype=complex)
        h[0], h_hat[1] = 1.0, 1.0
        assert loss_cosine(h, h_hat) == 0.0

    @pytest.mark.edge_case
    def test_cosine_zero_column_contributes_zero(self):
        h = np.ones((2, 2), dtype=complex)
        h_hat = np.ones((2, 2), dtype=complex)
        h_hat[:, 1] = 0.0
        assert loss_cosine(h, h_hat) == pytest.approx(-0.5)

    def test_cosine_gradient(self):
        rng = np.random.default_rng(3)
        h = rng.standard_normal((2, 3, 4)) + 1j * rng.standard_normal((2, 3, 4))
        h_hat = rng.standard_normal((2, 3, 4)) + 1j * rng.standard_normal((2, 3, 4))
        grad = loss_cosine_grad(h, h_hat)
        numeric = np.zeros_like(h_hat)
        for idx in np.ndindex(h_hat.shape):
            for unit in (1.0, 1j):
                up, down = h_hat.copy(), h_hat.copy()
                up[idx] += unit * EPS
                down[idx] -= unit * EPS
                numeric[idx] += unit * (loss_cosine(h, up) - loss_cosine(h, down)) / (2 * EPS)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    @pytest.mark.parametrize("kind", [LossKind.MSE, LossKind.COSINE])
    def test_compute_loss_gradient_wrt_network_output(self, kind):
        rng = np.random.default_rng(4)
        x, y = rng.random((2, 2, 3, 3)), rng.random((2, 2, 3, 3))
        scales, offsets = np.array([0.5, 2.0]), np.array([-0.3, -1.1])
        _, dy = compute_loss(kind, x, y, scales, offsets)
        numeric = np.zeros_like(y)
        for idx in np.ndindex(y.shape):
            up, down = y.copy(), y.copy()
            up[idx] += EPS
            down[idx] -= EPS
            numeric[idx] = (
                compute_loss(kind, x, up, scales, offsets)[0]
                - compute_loss(kind, x, down, scales, offsets)[0]
            ) / (2 * EPS)
        np.testing.assert_allclose(dy, numeric, rtol=1e-5, atol=1e-8)


class TestEndToEndGradient:
    @pytest.mark.parametrize("use_batchnorm", [True, False])
    def test_autoencoder_backprop_matches_finite_differences(self, use_batchnorm):
        cfg = AutoencoderConfig(
            nt=4, nc=4, codeword_dim=4, branch_kernels=((3, 3), (1, 3)), width=2,
            num_crblocks=1, use_batchnorm=use_batchnorm,
        )
        rng = np.random.default_rng(5)
        ps = build_model(cfg, rng)
        ps["decoder.crblock1.alpha"] = np.array([0.6])
        model = model_for(ps)
        x = rng.random((3, 2, 4, 4))

        def loss():
            y, _ = model.forward(ps, x, training=True)
            return compute_loss(LossKind.MSE, x, y)[0]

        y, tape = model.forward(ps, x, training=True)
        _, dy = compute_loss(LossKind.MSE, x, y)
        _, grads = model.backward(ps, tape, dy)

        for entry in ps:
            if not entry.trainable:
                continue
            flat = entry.value.reshape(-1)
            for i in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + EPS
                plus = loss()
                flat[i] = orig - EPS
                minus = loss()
                flat[i] = orig
                numeric = (plus - minus) / (2 * EPS)
                analytic = grads[entry.name].reshape(-1)[i]
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7), entry.name


class TestNmse:
    def test_examples(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((3, 4, 4)) + 1j * rng.standard_normal((3, 4, 4))
        assert nmse(h, h) == 0.0
        assert nmse_db(h, h) == float("-inf")
        assert nmse(h, np.zeros_like(h)) == pytest.approx(1.0)
        assert nmse_db(h, np.zeros_like(h)) == pytest.approx(0.0)
        assert nmse(h, 2 * h) == pytest.approx(1.0)

    @pytest.mark.edge_case
    def test_zero_reference_is_undefined(self):
        h = np.zeros((2, 4, 4), dtype=complex)
        with pytest.raises(UndefinedInputError):
            nmse(h, h)

    def test_db_helpers(self):
        assert to_db(0.0) == float("-inf")
        assert to_db(0.1) == pytest.approx(-10.0)
        assert mean_db([0.1, 0.01]) == pytest.approx(10 * np.log10(0.055))

    @pytest.mark.parametrize("offset,scale", [(-1.0, 2.0), (-0.01, 0.05), (3.0, 7.5)])
    def test_normalization_round_trip_is_lossless(self, offset, scale):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((4, 4, 4)) + 1j * rng.standard_normal((4, 4, 4))
        norm = NormParams(offset=offset, scale=scale)
        back = from_network_output(to_network_input(h, norm), norm)
        assert nmse(h, back) < 1e-20

    def test_constant_predictor_of_zero(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((4, 2, 2)) + 1j * rng.standard_normal((4, 2, 2))
        assert constant_predictor_nmse(h, NormParams(offset=-1.0, scale=2.0)) == pytest.approx(1.0)

    def test_global_and_individual(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        per_ue = individual_nmse({ds.ue_id: ps for ds in tiny_datasets}, tiny_datasets)
        assert set(per_ue) == {1, 2, 3}
        for ds in tiny_datasets:
            assert per_ue[ds.ue_id] == evaluate_nmse(ps, ds)
        # equal test splits, so the pooled mean equals the mean of the per-UE values
        assert global_nmse(ps, tiny_datasets) == pytest.approx(np.mean(list(per_ue.values())))
