"""
Tests for fine-tuning personalization, fallback monitoring and the tradeoff sweep
"""

import numpy as np
import pytest

from feel_csi import (
    ArrayConfig,
    ConfigError,
    EmptyDatasetError,
    PersonalizationConfig,
    TrainConfig,
    UeDataset,
    build_model,
    fine_tune,
    global_nmse,
    monitor_and_select,
    tradeoff_sweep,
)
from feel_csi._autoencoder import evaluate_nmse, mean_db, nmse, reconstruct
from feel_csi._personalize import (
    decoder_payload_bits,
    fine_tune_checkpoints,
    monitor_samples,
    personalize_ues,
)
from feel_csi._trainer import TrainingData, train_epochs

from .conftest import make_datasets


class TestFineTune:
    def test_zero_epochs_is_identity(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        out = fine_tune(ps, tiny_datasets[0], PersonalizationConfig(epochs=0), np.random.default_rng(1))
        assert out.bitwise_equal(ps)
        assert out is not ps

    def test_global_model_untouched(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        before = ps.copy()
        out = fine_tune(ps, tiny_datasets[0], PersonalizationConfig(epochs=2, batch_size=8), np.random.default_rng(1))
        assert ps.bitwise_equal(before)
        assert not out.bitwise_equal(ps)

    def test_checkpoints_match_separate_runs(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        pc = PersonalizationConfig(epochs=2, batch_size=8)
        snapshots = fine_tune_checkpoints(ps, tiny_datasets[1], pc, np.random.default_rng(4), [0, 1, 2])
        assert sorted(snapshots) == [0, 1, 2]
        assert snapshots[0].bitwise_equal(ps)
        assert snapshots[2].bitwise_equal(fine_tune(ps, tiny_datasets[1], pc, np.random.default_rng(4)))
        one = PersonalizationConfig(epochs=1, batch_size=8)
        assert snapshots[1].bitwise_equal(fine_tune(ps, tiny_datasets[1], one, np.random.default_rng(4)))

    def test_personalized_beats_global_on_own_data(self, tiny_model_cfg, tiny_array, deploy_scenario):
        (ds,) = make_datasets(tiny_array, deploy_scenario, num_ues=1, samples=50, seed=2)
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        out = fine_tune(ps, ds, PersonalizationConfig(epochs=200), np.random.default_rng(1))
        assert evaluate_nmse(out, ds) < evaluate_nmse(ps, ds)

    @pytest.mark.edge_case
    def test_empty_train_split(self, tiny_model_cfg, tiny_datasets):
        ds = tiny_datasets[0]
        empty = UeDataset(ds.ue_id, ds.train[:0], ds.val, ds.test, ds.norm_params)
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        with pytest.raises(EmptyDatasetError):
            fine_tune(ps, empty, PersonalizationConfig(epochs=1), np.random.default_rng(0))


class TestMonitor:
    def test_tie_returns_global(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        ds = tiny_datasets[0]
        chosen, kept = monitor_and_select(ps.copy(), ps, ds.val, ds.norm_params)
        assert chosen is ps and kept is False

    def test_selection_follows_fresh_sample_distribution(self, tiny_model_cfg, deploy_scenario):
        array = ArrayConfig(num_tx_antennas=4, num_subcarriers=4)
        own, distant = make_datasets(array, deploy_scenario, num_ues=2, samples=60, seed=5)
        tc = TrainConfig(batch_size=16, learning_rate=3e-3)
        start = build_model(tiny_model_cfg, np.random.default_rng(0))
        personalized, _ = train_epochs(
            start, TrainingData.from_datasets([own]), tc, np.random.default_rng(1), 60
        )
        distant_model, _ = train_epochs(
            start, TrainingData.from_datasets([distant]), tc, np.random.default_rng(2), 60
        )

        chosen, kept = monitor_and_select(personalized, start, own.test, own.norm_params)
        assert kept and chosen is personalized

        chosen, kept = monitor_and_select(personalized, distant_model, distant.test, distant.norm_params)
        assert not kept and chosen is distant_model

    def test_never_returns_strictly_worse_model(self, tiny_model_cfg, tiny_datasets):
        ds = tiny_datasets[2]
        models = [build_model(tiny_model_cfg, np.random.default_rng(s)) for s in range(4)]

        def err(m):
            return nmse(ds.val, reconstruct(m, ds.val, ds.norm_params))

        for a in models:
            for b in models:
                chosen, _ = monitor_and_select(a, b, ds.val, ds.norm_params)
                assert err(chosen) == min(err(a), err(b))

    def test_monitor_samples_take_freshest_tail(self, tiny_datasets):
        ds = tiny_datasets[0]
        np.testing.assert_array_equal(monitor_samples(ds, 1.0), ds.val)
        np.testing.assert_array_equal(monitor_samples(ds, 0.5), ds.val[-1:])

    @pytest.mark.edge_case
    def test_no_fresh_samples(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        ds = tiny_datasets[0]
        with pytest.raises(EmptyDatasetError):
            monitor_and_select(ps, ps, ds.val[:0], ds.norm_params)

    def test_personalize_every_ue(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        pc = PersonalizationConfig(epochs=1, batch_size=8)
        chosen, kept = personalize_ues(ps, tiny_datasets, pc, np.random.default_rng(0))
        assert sorted(chosen) == sorted(kept) == [1, 2, 3]
        for ue_id, flag in kept.items():
            assert (chosen[ue_id] is ps) != flag


class TestTradeoff:
    def test_rows_and_epoch_zero_equals_global(self, tiny_model_cfg, tiny_datasets):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        pc = PersonalizationConfig(batch_size=8)
        rows = tradeoff_sweep(ps, tiny_datasets, [0, 1, 3], pc, np.random.default_rng(0))
        assert [r.epochs for r in rows] == [0, 1, 3]
        first = rows[0]
        assert first.i_nmse_db == pytest.approx(mean_db([evaluate_nmse(ps, ds) for ds in tiny_datasets]))
        assert first.g_nmse_db == pytest.approx(10 * np.log10(global_nmse(ps, tiny_datasets)))
        for row in rows:
            assert [ue for ue, _, _ in row.per_ue] == [1, 2, 3]

    @pytest.mark.edge_case
    @pytest.mark.parametrize("grid", [[], [1, 2], [0, 2, 1], [0, 0, 1]])
    def test_invalid_grid(self, tiny_model_cfg, tiny_datasets, grid):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            tradeoff_sweep(ps, tiny_datasets, grid, PersonalizationConfig(), np.random.default_rng(0))


def test_decoder_payload_bits(tiny_model_cfg):
    ps = build_model(tiny_model_cfg, np.random.default_rng(0))
    decoder = sum(e.value.size for e in ps if e.name.startswith("decoder."))
    assert decoder_payload_bits(ps) == 32 * decoder
    assert 0 < decoder < ps.num_elements()
