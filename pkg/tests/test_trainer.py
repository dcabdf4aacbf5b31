import math

import numpy as np
import pytest

from depsrl.errors import ConfigError, NumericError
from depsrl.model import ModelConfig, MultitaskModel
from depsrl.numerics import Tensor
from depsrl.report import aggregate_reports
from depsrl.trainer import (
    DEFAULT_EPOCHS,
    BatchCycler,
    TaskSampler,
    TrainConfig,
    build_model,
    evaluate_checkpoint,
    srl_report,
    train_multitask,
    train_single,
)

FAST = TrainConfig(epochs=2, batch_size=4, encoder_dropout=0.0, dp_dropout=0.0, lstm_dropout=0.0)


@pytest.fixture
def data(synth):
    return synth[:12]


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.srl_ratio, c.max_tokens) == (2e-3, 0.5, 320)

    @pytest.mark.parametrize(
        "bad",
        [{"srl_ratio": 1.5}, {"dp_loss_scale": -1.0}, {"batch_size": 0}, {"encoder_dropout": 1.0}, {"target_metric": "LAS"}],
    )
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_zero_loss_scale_allowed(self):
        assert TrainConfig(dp_loss_scale=0.0).dp_loss_scale == 0.0

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ConfigError, match="lr"):
            TrainConfig.from_dict({"lr": 0.1})


class TestSampling:
    def test_cycler_covers_each_pass(self):
        c = BatchCycler(list(range(10)), 3, np.random.default_rng(0))
        assert c.batches_per_pass == 4
        seen = [x for _ in range(4) for x in c.next()]
        assert sorted(seen) == list(range(10))

    def test_cycler_empty(self):
        with pytest.raises(ConfigError):
            BatchCycler([], 2, np.random.default_rng(0))

    def test_sampler_extremes(self):
        rng = np.random.default_rng(0)
        assert {TaskSampler(1.0, rng).draw() for _ in range(100)} == {"srl"}
        assert {TaskSampler(0.0, rng).draw() for _ in range(100)} == {"dp"}


class TestSingle:
    def test_zero_epochs_keeps_init(self, data, tiny_config):
        result = train_single("dp", FAST.replace(epochs=0), data, model_config=tiny_config)
        fresh = build_model(tiny_config, FAST, dp_train=data)
        assert result.history == []
        for k, v in fresh.state_dict().items():
            np.testing.assert_array_equal(result.model.state_dict()[k], v)

    def test_history_records(self, data, tiny_config):
        result = train_single("srl", FAST, data, model_config=tiny_config)
        assert [h["epoch"] for h in result.history] == [1, 2]
        h = result.history[0]
        assert h["metric"] == "micro_f1" and h["dp_loss"] is None
        assert h["srl_steps"] == math.ceil(len(data) / 4)
        assert result.best_value == max(r["value"] for r in result.history)

    def test_deterministic(self, data, tiny_config):
        a = train_single("dp", FAST, data, model_config=tiny_config)
        b = train_single("dp", FAST, data, model_config=tiny_config)
        assert a.history == b.history
        for k, v in a.model.state_dict().items():
            np.testing.assert_array_equal(b.model.state_dict()[k], v)

    def test_seed_matters(self, data, tiny_config):
        a = train_single("dp", FAST, data, model_config=tiny_config)
        b = train_single("dp", FAST.replace(seed=1), data, model_config=tiny_config)
        assert a.history != b.history

    def test_default_epochs(self, data, tiny_config):
        seen = []
        train_single("dp", FAST.replace(epochs=None), data[:4], model_config=tiny_config, callback=lambda e, v: seen.append(e))
        assert len(seen) == DEFAULT_EPOCHS["dp"]

    def test_callback_stops(self, data, tiny_config):
        result = train_single("dp", FAST.replace(epochs=5), data, model_config=tiny_config, callback=lambda e, v: e == 2)
        assert result.pruned_at == 2 and len(result.history) == 2

    def test_non_finite_loss(self, data, tiny_config, monkeypatch):
        monkeypatch.setattr(MultitaskModel, "srl_loss", lambda self, *a, **k: Tensor(float("nan")))
        with pytest.raises(NumericError, match="epoch 1, step 1"):
            train_single("srl", FAST, data, model_config=tiny_config)

    def test_unknown_task(self, data):
        with pytest.raises(ConfigError):
            train_single("ner", FAST, data)
        with pytest.raises(ConfigError):
            train_single("dp", FAST, [])


class TestMultitask:
    def test_zero_loss_scale_freezes_dp_head(self, data, tiny_config):
        config = FAST.replace(dp_loss_scale=0.0, weight_decay=0.0, srl_ratio=0.5)
        result = train_multitask(config, data, data, model_config=tiny_config)
        fresh = build_model(tiny_config, config, dp_train=data, srl_train=data)
        assert sum(h["dp_steps"] for h in result.history) > 0
        for k, p in fresh.dp.params.items():
            np.testing.assert_array_equal(result.model.dp.params[k].data, p.data)
        assert not np.array_equal(result.model.encoder.params["encoder.token_embedding"].data, fresh.encoder.params["encoder.token_embedding"].data)

    def test_epoch_is_a_pass_of_srl_batches(self, data, tiny_config):
        result = train_multitask(FAST.replace(srl_ratio=0.4), data, data, model_config=tiny_config)
        for h in result.history:
            assert h["srl_steps"] == math.ceil(len(data) / 4)
            assert h["steps"] == h["srl_steps"] + h["dp_steps"]

    def test_default_dp_mode_is_root_known(self, data, tiny_config):
        result = train_multitask(FAST.replace(epochs=1), data, data)
        assert result.model.config.dp_mode == "root_known"

    def test_needs_both(self, data):
        with pytest.raises(ConfigError):
            train_multitask(FAST, data, [])


class TestEvaluate:
    def test_checkpoint_round_trip(self, data, tiny_config, tmp_path):
        result = train_single("srl", FAST, data, model_config=tiny_config)
        result.model.save(tmp_path / "ckpt")
        direct = evaluate_checkpoint(result.model, data, "srl")
        loaded = evaluate_checkpoint(tmp_path / "ckpt", data, "srl", setting="morpheme")
        assert direct.metrics == loaded.metrics

    def test_dp_report(self, data, tiny_config):
        result = train_single("dp", FAST, data, model_config=tiny_config)
        rep = evaluate_checkpoint(result.model, data, "dp")
        assert set(rep.metrics) == {"UAS", "LAS", "ROOT"}
        assert rep.meta["counts"]["tokens"] == sum(map(len, data))

    def test_setting_mismatch(self, data, tiny_config):
        model = build_model(tiny_config, FAST, dp_train=data)
        with pytest.raises(ConfigError):
            evaluate_checkpoint(model, data, "dp", setting="root_known")
        with pytest.raises(ConfigError, match="no SRL head"):
            evaluate_checkpoint(model, data, "srl")

    def test_untrained_model_is_poor(self, synth):
        model = build_model(ModelConfig(embed_size=16, hidden_size=32, n_layers=1), TrainConfig(), srl_train=synth)
        assert srl_report(model, synth).metrics["micro_f1"] < 0.2

    def test_multi_seed_aggregate(self, data, tiny_config):
        reports = []
        for seed in range(5):
            model = train_single("srl", FAST.replace(epochs=1, seed=seed), data, model_config=tiny_config).model
            reports.append(evaluate_checkpoint(model, data, "srl"))
        agg = aggregate_reports(reports)
        values = [r.metrics["micro_f1"] for r in reports]
        assert agg.n_runs == 5
        assert agg.mean["micro_f1"] == pytest.approx(np.mean(values))
        assert agg.std["micro_f1"] == pytest.approx(np.std(values, ddof=1))
