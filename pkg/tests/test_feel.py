"""
Tests for scheduling, aggregation, the FEEL loop and the CL/IL baselines
"""

import numpy as np
import pytest

from feel_csi import (
    AggregationMode,
    ConfigError,
    FeelConfig,
    OptimizerKind,
    QuantPolicy,
    ShapeMismatchError,
    TrainConfig,
    aggregate,
    build_model,
    global_nmse,
    run_cl,
    run_feel,
    run_il,
    schedule_ues,
)
from feel_csi._autoencoder import compute_loss, model_for
from feel_csi._feel import fair_step_budgets, final_broadcast, history_rows, pretrain_global
from feel_csi._models import LossKind, scenario_preset
from feel_csi._nn import flatten_grads, flatten_params, unflatten
from feel_csi._quant import full_precision_bits, payload_bits, quantize
from feel_csi._trainer import TrainingData

from .conftest import make_datasets


def _gd_config(rounds, num_ues=3, lr=0.05):
    return FeelConfig(
        num_ues=num_ues,
        scheduled_per_round=num_ues,
        rounds=rounds,
        train=TrainConfig(
            batch_size=64, local_epochs=1, learning_rate=lr, optimizer=OptimizerKind.SGD,
            lr_patience=1000,
        ),
        quant=QuantPolicy.disabled(),
    )


class TestScheduling:
    def test_all_ues_when_m_equals_k(self):
        assert schedule_ues(np.random.default_rng(0), 5, 5) == [1, 2, 3, 4, 5]

    def test_distinct_sorted_in_range(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            ids = schedule_ues(rng, 10, 3)
            assert len(set(ids)) == 3 and ids == sorted(ids)
            assert all(1 <= i <= 10 for i in ids)

    def test_uniform_frequency(self):
        rng = np.random.default_rng(2)
        counts = np.zeros(5)
        rounds = 10000
        for _ in range(rounds):
            for i in schedule_ues(rng, 5, 2):
                counts[i - 1] += 1
        np.testing.assert_allclose(counts / rounds, 0.4, atol=0.02)

    @pytest.mark.edge_case
    @pytest.mark.parametrize("k,m", [(3, 4), (3, 0)])
    def test_invalid_counts(self, k, m):
        with pytest.raises(ConfigError):
            schedule_ues(np.random.default_rng(0), k, m)


class TestAggregate:
    def test_all_scheduled_equal_sizes(self):
        w, d = np.array([1.0, -1.0]), np.array([0.5, 0.25])
        out = aggregate(w, [d, d, d], [10, 10, 10], ue_ids=[1, 2, 3], total_size=30)
        np.testing.assert_allclose(out, w + d)

    def test_partial_participation_uses_all_ue_total(self):
        w, d = np.zeros(2), np.array([2.0, 4.0])
        out = aggregate(w, [d], [50], AggregationMode.TOTAL_ALL_UES, ue_ids=[1], total_size=100)
        np.testing.assert_allclose(out, d / 2)

    def test_partial_participation_scheduled_total(self):
        w, d = np.zeros(2), np.array([2.0, 4.0])
        out = aggregate(w, [d], [50], AggregationMode.TOTAL_SCHEDULED, ue_ids=[1], total_size=100)
        np.testing.assert_allclose(out, d)

    def test_size_weighted(self):
        w = np.array([1.0, 1.0])
        d1, d2 = np.array([4.0, 0.0]), np.array([0.0, 4.0])
        out = aggregate(w, [d1, d2], [100, 300], ue_ids=[1, 2], total_size=400)
        np.testing.assert_allclose(out, w + 0.25 * d1 + 0.75 * d2)

    def test_result_independent_of_arrival_order(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal(50)
        deltas = [rng.standard_normal(50) for _ in range(4)]
        sizes, ids = [7, 11, 13, 17], [4, 1, 3, 2]
        a = aggregate(w, deltas, sizes, ue_ids=ids, total_size=100)
        order = [2, 0, 3, 1]
        b = aggregate(
            w,
            [deltas[i] for i in order],
            [sizes[i] for i in order],
            ue_ids=[ids[i] for i in order],
            total_size=100,
        )
        assert a.tobytes() == b.tobytes()

    @pytest.mark.edge_case
    def test_mismatched_inputs(self):
        w = np.zeros(3)
        with pytest.raises(ShapeMismatchError):
            aggregate(w, [np.zeros(3)], [1, 2])
        with pytest.raises(ShapeMismatchError):
            aggregate(w, [np.zeros(4)], [1])
        with pytest.raises(ConfigError):
            aggregate(w, [np.zeros(3)], [0])


class TestRunFeel:
    def test_matches_centralized_gradient_descent(self, plain_model_cfg, tiny_datasets):
        rounds, lr = 20, 0.05
        initial = build_model(plain_model_cfg, np.random.default_rng(0))
        _, final = run_feel(_gd_config(rounds, lr=lr), tiny_datasets, np.random.default_rng(1), initial)

        model = model_for(initial)
        sizes = [len(ds.train) for ds in tiny_datasets]
        total = sum(sizes)
        data = [TrainingData.from_datasets([ds]) for ds in tiny_datasets]
        w = flatten_params(initial)
        for _ in range(rounds):
            ps = unflatten(w, initial)
            step = np.zeros_like(w)
            for size, batch in zip(sizes, data):
                y, tape = model.forward(ps, batch.inputs, training=True)
                _, dy = compute_loss(LossKind.MSE, batch.inputs, y)
                _, grads = model.backward(ps, tape, dy)
                step += size / total * flatten_grads(grads, ps)
            w = w - lr * step
        np.testing.assert_allclose(flatten_params(final), w, rtol=0, atol=1e-9)

    def test_history_and_ledger(self, tiny_model_cfg, tiny_datasets):
        cfg = FeelConfig(
            num_ues=3, scheduled_per_round=2, rounds=3,
            train=TrainConfig(batch_size=8, local_epochs=1),
            quant=QuantPolicy(uplink_bits=2, downlink_bits=8),
        )
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        seen = []
        history, final = run_feel(
            cfg, tiny_datasets, np.random.default_rng(1), initial, on_round=seen.append
        )
        assert len(history) == 3 and seen == history.records
        per_round_dl = payload_bits(quantize(initial, 8))
        per_update_ul = payload_bits(quantize(initial, 2))
        assert history.cum_downlink_bits == 3 * per_round_dl
        assert history.cum_uplink_bits == 3 * 2 * per_update_ul
        for t, record in enumerate(history.records, start=1):
            assert record.round == t
            assert len(record.scheduled_ids) == 2
            assert record.cum_downlink_bits == t * per_round_dl
            assert np.isfinite(record.gnmse_db) and np.isfinite(record.mean_local_loss)
        assert history.total_local_steps == 3 * 2 * 2
        assert set(history.final_metrics) == {"g_nmse_db", "i_nmse_db"}
        assert history.final_metrics["g_nmse_db"] == pytest.approx(
            10 * np.log10(global_nmse(final, tiny_datasets))
        )

    def test_same_seed_bitwise_identical(self, tiny_model_cfg, tiny_datasets):
        cfg = FeelConfig(
            num_ues=3, scheduled_per_round=2, rounds=2,
            train=TrainConfig(batch_size=8, local_epochs=1),
            quant=QuantPolicy(uplink_bits=2, downlink_bits=8, stochastic_rounding=True),
        )
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        h1, f1 = run_feel(cfg, tiny_datasets, np.random.default_rng(5), initial)
        h2, f2 = run_feel(cfg, tiny_datasets, np.random.default_rng(5), initial)
        assert history_rows(h1) == history_rows(h2)
        assert f1.bitwise_equal(f2)

    def test_unquantized_transport_counts_full_precision(self, tiny_model_cfg, tiny_datasets):
        cfg = _gd_config(2)
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        history, _ = run_feel(cfg, tiny_datasets, np.random.default_rng(0), initial)
        full = full_precision_bits(initial)
        assert history.cum_downlink_bits == 2 * full
        assert history.cum_uplink_bits == 2 * 3 * full

    @pytest.mark.edge_case
    def test_dataset_count_must_match(self, tiny_model_cfg, tiny_datasets):
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            run_feel(_gd_config(1, num_ues=2), tiny_datasets, np.random.default_rng(0), initial)

    def test_history_rows(self, tiny_model_cfg, tiny_datasets):
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        history, _ = run_feel(_gd_config(1), tiny_datasets, np.random.default_rng(0), initial)
        (row,) = history_rows(history)
        assert row[0] == 1 and row[1] == "1;2;3"
        assert len(row) == 6


class TestBaselines:
    def test_single_ue_frameworks_agree(self, plain_model_cfg, tiny_array, deploy_scenario):
        datasets = make_datasets(tiny_array, deploy_scenario, num_ues=1, samples=20, seed=3)
        cfg = _gd_config(15, num_ues=1)
        initial = build_model(plain_model_cfg, np.random.default_rng(0))
        history, feel_model = run_feel(cfg, datasets, np.random.default_rng(1), initial)
        cl_steps, il_steps = fair_step_budgets(history.total_local_steps, 1)
        assert cl_steps == il_steps == 15
        cl_model = run_cl(datasets, cfg.train, np.random.default_rng(2), initial, cl_steps)
        il_model = run_il(datasets, cfg.train, np.random.default_rng(3), initial, il_steps)[1]
        g = [10 * np.log10(global_nmse(m, datasets)) for m in (feel_model, cl_model, il_model)]
        assert max(g) - min(g) < 0.1

    def test_il_returns_one_model_per_ue(self, tiny_model_cfg, tiny_datasets):
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        models = run_il(tiny_datasets, TrainConfig(batch_size=8), np.random.default_rng(0), initial, 2)
        assert sorted(models) == [1, 2, 3]
        assert not models[1].bitwise_equal(models[2])

    def test_cl_default_budget_is_local_epochs(self, tiny_model_cfg, tiny_datasets):
        initial = build_model(tiny_model_cfg, np.random.default_rng(0))
        model = run_cl(tiny_datasets, TrainConfig(batch_size=16, local_epochs=1), np.random.default_rng(0), initial)
        assert not model.bitwise_equal(initial)

    def test_fair_step_budgets(self):
        assert fair_step_budgets(300, 10) == (300, 30)
        assert fair_step_budgets(5, 10) == (5, 1)


class TestPretrainAndBroadcast:
    def test_disabled_pretraining_is_fresh_model(self, tiny_model_cfg, tiny_datasets):
        w0 = pretrain_global(tiny_model_cfg, tiny_datasets, TrainConfig(), 0, np.random.default_rng(3))
        assert w0.bitwise_equal(build_model(tiny_model_cfg, np.random.default_rng(3)))

    def test_pretraining_improves_on_pretrain_data(self, tiny_model_cfg, tiny_array):
        datasets = make_datasets(tiny_array, scenario_preset("pretrain"), num_ues=3, samples=40, seed=8)
        tc = TrainConfig(batch_size=16, learning_rate=3e-3)
        fresh = pretrain_global(tiny_model_cfg, datasets, tc, 0, np.random.default_rng(0))
        trained = pretrain_global(tiny_model_cfg, datasets, tc, 30, np.random.default_rng(0))
        assert global_nmse(trained, datasets) < global_nmse(fresh, datasets)

    def test_final_broadcast(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        received, bits = final_broadcast(ps, QuantPolicy(downlink_bits=8))
        assert bits == payload_bits(quantize(ps, 8))
        assert received.names() == ps.names()
        same, full = final_broadcast(ps, QuantPolicy.disabled())
        assert same.bitwise_equal(ps) and full == full_precision_bits(ps)
