import numpy as np
import pytest

from pdanet.data import synth_generate
from pdanet.errors import ConfigurationError, ContractError, DimensionError, FormatError, TrainingError
from pdanet.losses import PcrConfig
from pdanet.model import build_model
from pdanet.trainer import (
    Checkpoint,
    OptimConfig,
    checkpoint_from_bytes,
    checkpoint_from_training,
    checkpoint_to_bytes,
    load_checkpoint,
    lr_at,
    restore,
    save_checkpoint,
    select_lambda,
    sgd_step,
    train,
)

DESK = dict(lr_backbone=0.01, lr_head=0.05)


@pytest.fixture(scope="module")
def tiny_set():
    return synth_generate(16, seed=3, image_size=16)


def tiny_model(seed=0, mode="S_CW"):
    return build_model(mode, seed=seed, dtype="float64", image_size=16)


def params_bytes(model):
    return {k: v.values.tobytes() for k, v in model.named_parameters().items()}


class TestSgd:
    def test_fixed_point(self):
        p, v = sgd_step(np.array([1.0, -2.0]), np.zeros(2), np.zeros(2), 0.1, 0.9, 0.0)
        np.testing.assert_array_equal(p, [1.0, -2.0])
        np.testing.assert_array_equal(v, [0.0, 0.0])

    def test_substitution(self):
        p, v = sgd_step(1.0, 0.5, 0.0, 0.1, 0.9, 0.0)
        assert abs(p - 0.95) < 1e-15 and v == 0.5

    def test_two_steps_match_scalar_oracle(self):
        lr, mom, wd = 0.05, 0.8, 0.01
        p, v = 0.7, 0.0
        grads = [0.3, -1.1]
        qp, qv = np.array(p), np.array(v)
        for g in grads:
            v = mom * v + g + wd * p
            p = p - lr * v
            qp, qv = sgd_step(qp, np.array(g), qv, lr, mom, wd)
        assert abs(qp - p) < 1e-12 and abs(qv - v) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            sgd_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, 0.9, 0.0)


class TestSchedule:
    def test_paper_rates(self):
        cfg = OptimConfig(epochs=300, drop_at_epoch=250)
        assert lr_at(0, cfg) == (0.001, 0.01)
        assert lr_at(249, cfg) == (0.001, 0.01)
        bb, head = lr_at(250, cfg)
        assert abs(bb - 0.0001) < 1e-18 and abs(head - 0.001) < 1e-18

    def test_factor_one_constant(self):
        cfg = OptimConfig(epochs=20, drop_factor=1.0)
        assert {lr_at(e, cfg) for e in range(20)} == {(0.001, 0.01)}

    def test_out_of_range(self):
        cfg = OptimConfig(epochs=5)
        for e in (-1, 5):
            with pytest.raises(ContractError):
                lr_at(e, cfg)

    @pytest.mark.parametrize(
        "kwargs", [{"epochs": 0}, {"momentum": 1.0}, {"batch_size": 0}, {"epochs": 5, "drop_at_epoch": 5}, {"lr_head": -1}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            OptimConfig(**kwargs)

    def test_default_drop_last_sixth(self):
        assert OptimConfig(epochs=300).drop_epoch == 250


class TestTrain:
    def test_history_and_lr_zero_fixed_point(self, tiny_set):
        m = tiny_model()
        before = params_bytes(m)
        res = train(m, tiny_set[:12], tiny_set[12:], "mse", OptimConfig(epochs=3, lr_backbone=0, lr_head=0))
        assert params_bytes(m) == before
        assert [r["epoch"] for r in res.history] == [0, 1, 2]
        assert all("val_loss" in r for r in res.history)

    def test_deterministic(self, tiny_set):
        cfg = OptimConfig(epochs=4, seed=9, **DESK)
        a, b = tiny_model(), tiny_model()
        ha = train(a, tiny_set, (), "mse", cfg).history
        hb = train(b, tiny_set, (), "mse", cfg).history
        assert ha == hb and params_bytes(a) == params_bytes(b)

    def test_pcr_lambda_zero_matches_mse(self, tiny_set):
        cfg = OptimConfig(epochs=4, **DESK)
        a, b = tiny_model(), tiny_model()
        ha = train(a, tiny_set, tiny_set[:4], "mse", cfg).history
        hb = train(b, tiny_set, tiny_set[:4], "pcr", cfg, PcrConfig(0.0)).history
        assert ha == hb and params_bytes(a) == params_bytes(b)

    def test_divergence_names_epoch_and_batch(self, tiny_set):
        m = tiny_model()
        with pytest.raises(TrainingError) as info:
            train(m, tiny_set, (), "mse", OptimConfig(epochs=50, lr_backbone=1e6, lr_head=1e6))
        assert info.value.epoch is not None and info.value.batch is not None

    def test_empty_train_split(self):
        with pytest.raises(ContractError):
            train(tiny_model(), [], (), "mse", OptimConfig(epochs=1))

    @pytest.mark.slow
    def test_reference_decrease(self):
        # reference configuration: 64 samples, seed 42, 200 epochs; observed ratio 56x
        samples = synth_generate(64, seed=42)
        m = build_model("S_CW", seed=42, dtype="float32")
        h = train(m, samples, (), "mse", OptimConfig(epochs=200, seed=42, **DESK)).history
        assert h[0]["train_loss"] / h[-1]["train_loss"] >= 10


class TestCheckpoint:
    def test_round_trip_bitwise(self, tiny_set):
        m = tiny_model()
        res = train(m, tiny_set, (), "mse", OptimConfig(epochs=2, **DESK))
        ck = checkpoint_from_training(m, res.state, "mode = S_CW\n")
        back = checkpoint_from_bytes(checkpoint_to_bytes(ck))
        assert back.epoch == 2 and back.config == ck.config
        for name in ck.params:
            assert back.params[name].tobytes() == ck.params[name].tobytes()
            assert back.velocities[name].tobytes() == ck.velocities[name].tobytes()

    def test_file_round_trip(self, tmp_path):
        ck = Checkpoint({"a": np.arange(6.0).reshape(2, 3)}, {}, 7, "x")
        save_checkpoint(ck, tmp_path / "c.pdck")
        back = load_checkpoint(tmp_path / "c.pdck")
        np.testing.assert_array_equal(back.params["a"], ck.params["a"])
        assert back.epoch == 7

    def test_truncated(self):
        buf = checkpoint_to_bytes(Checkpoint({"a": np.ones(3)}))
        for cut in (2, 10, len(buf) - 1):
            with pytest.raises(FormatError):
                checkpoint_from_bytes(buf[:cut])

    def test_bad_magic_and_version(self):
        buf = checkpoint_to_bytes(Checkpoint({"a": np.ones(3)}))
        with pytest.raises(FormatError):
            checkpoint_from_bytes(b"XXXX" + buf[4:])
        with pytest.raises(FormatError, match="version"):
            checkpoint_from_bytes(buf[:4] + b"\x09\x00" + buf[6:])

    def test_missing_parameter_named(self):
        m = tiny_model()
        ck = checkpoint_from_training(m)
        del ck.params["head.W_out"]
        with pytest.raises(FormatError, match="head.W_out"):
            restore(m, ck)

    def test_shape_mismatch_named(self):
        m = tiny_model()
        ck = checkpoint_from_training(m)
        ck.params["head.b_out"] = np.zeros(4)
        with pytest.raises(FormatError, match="head.b_out"):
            restore(m, ck)

    def test_resume_equivalence(self, tiny_set):
        cfg = OptimConfig(epochs=10, **DESK)
        full = tiny_model()
        h_full = train(full, tiny_set, (), "mse", cfg).history

        first = tiny_model()
        res = train(first, tiny_set, (), "mse", cfg, stop_epoch=5)
        ck = checkpoint_from_bytes(checkpoint_to_bytes(checkpoint_from_training(first, res.state)))
        resumed = tiny_model(seed=123)
        state = restore(resumed, ck)
        h_rest = train(resumed, tiny_set, (), "mse", cfg, state=state).history
        assert res.history + h_rest == h_full
        assert params_bytes(resumed) == params_bytes(full)


class TestSelectLambda:
    def factory(self):
        return tiny_model()

    def test_singleton(self, tiny_set):
        best, table = select_lambda(self.factory, tiny_set[:12], tiny_set[12:], [0], OptimConfig(epochs=1))
        assert best == 0 and len(table) == 1

    def test_duplicates_and_argmin(self, tiny_set):
        best, table = select_lambda(
            self.factory, tiny_set[:12], tiny_set[12:], [1, 0, 1, 0.5, 0], OptimConfig(epochs=2, **DESK)
        )
        assert [lam for lam, _ in table] == [0, 0.5, 1]
        scores = dict(table)
        assert all(scores[best] <= s for s in scores.values())
        assert best == min(lam for lam, s in table if s == scores[best])

    def test_diverging_candidate_scores_inf(self, tiny_set):
        cfg = OptimConfig(epochs=3, lr_backbone=1e5, lr_head=1e5)
        with pytest.raises(TrainingError):
            select_lambda(self.factory, tiny_set[:12], tiny_set[12:], [0, 1], cfg)

    def test_empty_grid(self, tiny_set):
        with pytest.raises(ConfigurationError):
            select_lambda(self.factory, tiny_set, tiny_set, [], OptimConfig(epochs=1))
