"""Trainer behavior: condition dropping, EMA, presets, determinism, checkpoints."""

import zipfile

import numpy as np
import pytest
import torch

from exedit.augment import identity_policy
from exedit.datasets import generate_toy_dataset, make_training_sample
from exedit.encoder import MODE_ALL_TOKENS, MODE_BOTTLENECK
from exedit.errors import CheckpointError, CheckpointVersionError, ParameterError
from exedit.sampling import GuidanceConfig, edit_image
from exedit.training import (
    PRESETS,
    TrainConfig,
    draw_condition_drops,
    ema_update,
    init_train_state,
    load_checkpoint,
    load_edit_model,
    preset_config,
    pretrain_prior,
    run_training,
    save_checkpoint,
    to_edit_model,
    train_step,
)


def _state_bytes(module):
    return b"".join(v.numpy().tobytes() for v in module.state_dict().values())


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.cond_drop_prob == 0.2
        assert cfg.ema_decay == 0.999
        assert cfg.learning_rate == 1e-4

    @pytest.mark.parametrize("kw", [{"cond_drop_prob": 1.5}, {"ema_decay": -0.1}, {"learning_rate": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            TrainConfig(**kw)


class TestConditionDropping:
    def test_drop_frequency_in_band(self):
        rng = np.random.default_rng(0)
        drops = draw_condition_drops(rng, 10_000, 0.2)
        assert 0.18 <= drops.mean() <= 0.22

    def test_zero_prob_never_drops_and_v_gets_no_gradient(self, toy_dataset, small_encoder):
        cfg = preset_config("baseline", base_width=16, depth=2, batch_size=4)
        assert cfg.cond_drop_prob == 0.0
        state = init_train_state(cfg, small_encoder)
        v_before = state.null_cond.v.detach().clone()
        rng = np.random.default_rng(1)
        batch = [make_training_sample(toy_dataset[i], identity_policy(), rng, distort_masks=False) for i in range(4)]
        train_step(state, batch, rng)
        assert state.null_cond.v.grad is None or torch.count_nonzero(state.null_cond.v.grad) == 0
        assert torch.equal(state.null_cond.v.detach(), v_before)


class TestEmaUpdate:
    def test_decay_zero_copies_current(self):
        shadow = {"w": torch.zeros(3)}
        ema_update(shadow, [("w", torch.nn.Parameter(torch.ones(3)))], 0.0)
        assert torch.equal(shadow["w"], torch.ones(3))

    def test_decay_one_keeps_shadow(self):
        shadow = {"w": torch.zeros(3)}
        ema_update(shadow, [("w", torch.nn.Parameter(torch.ones(3)))], 1.0)
        assert torch.equal(shadow["w"], torch.zeros(3))

    def test_hand_computed_value(self):
        shadow = {"w": torch.zeros(1)}
        ema_update(shadow, [("w", torch.nn.Parameter(torch.ones(1)))], 0.9)
        np.testing.assert_allclose(shadow["w"].numpy(), [0.1], rtol=1e-6)

    def test_shape_mismatch(self):
        shadow = {"w": torch.zeros(2)}
        with pytest.raises(ParameterError):
            ema_update(shadow, [("w", torch.nn.Parameter(torch.ones(3)))], 0.5)


class TestTrainStep:
    def test_empty_batch_rejected(self, tiny_state):
        with pytest.raises(ParameterError):
            train_step(tiny_state, [], np.random.default_rng(0))

    def test_single_batch_overfit(self, small_encoder):
        # 500 steps on one fully fixed batch must reduce the loss >= 10x.
        rng = np.random.default_rng(0)
        ds = generate_toy_dataset(8, (16, 16), rng)
        cfg = preset_config(
            "classifier_free", base_width=16, depth=2, batch_size=4,
            learning_rate=1e-3, prior_steps=0,
        )
        state = init_train_state(cfg, small_encoder)
        batch = [make_training_sample(ds[i], identity_policy(), rng) for i in range(4)]
        losses = [train_step(state, batch, np.random.default_rng(777)) for _ in range(500)]
        assert losses[0] / losses[-1] >= 10, f"only {losses[0] / losses[-1]:.1f}x"

    def test_encoder_untouched_by_training(self, toy_dataset, small_encoder):
        before = _state_bytes(small_encoder)
        cfg = preset_config("classifier_free", base_width=16, depth=2, batch_size=4, prior_steps=0)
        state = init_train_state(cfg, small_encoder)
        run_training(state, toy_dataset, 3, np.random.default_rng(5))
        assert _state_bytes(small_encoder) == before

    def test_deterministic_loss_trajectory(self, toy_dataset, small_encoder):
        cfg = preset_config("classifier_free", base_width=16, depth=2, batch_size=4, prior_steps=0)
        runs = []
        for _ in range(2):
            state = init_train_state(cfg, small_encoder)
            run_training(state, toy_dataset, 5, np.random.default_rng(3))
            runs.append(state.loss_history)
        assert runs[0] == runs[1]

    def test_nonfinite_loss_aborts_with_numeric_error(self, toy_dataset, small_encoder):
        from exedit.errors import NumericError

        cfg = preset_config("classifier_free", base_width=16, depth=2, batch_size=2, prior_steps=0)
        state = init_train_state(cfg, small_encoder)
        with torch.no_grad():
            state.denoiser.stem.weight.fill_(1e30)
        rng = np.random.default_rng(0)
        batch = [make_training_sample(toy_dataset[0], identity_policy(), rng)]
        with pytest.raises(NumericError):
            train_step(state, batch, rng)


class TestPriorStage:
    def test_zero_steps_leaves_state_unchanged(self, toy_dataset, tiny_config, small_encoder):
        state = init_train_state(tiny_config, small_encoder)
        before = _state_bytes(state.denoiser)
        pretrain_prior(state, toy_dataset, 0, np.random.default_rng(0))
        assert _state_bytes(state.denoiser) == before
        assert state.step == 0

    def test_prior_trains_v(self, toy_dataset, small_encoder):
        cfg = preset_config("prior", base_width=16, depth=2, batch_size=4)
        state = init_train_state(cfg, small_encoder)
        v_before = state.null_cond.v.detach().clone()
        pretrain_prior(state, toy_dataset, 2, np.random.default_rng(0))
        assert not torch.equal(state.null_cond.v.detach(), v_before)


class TestPresetLadder:
    def test_preset_names_match_ablation_rows(self):
        assert PRESETS == ("baseline", "prior", "augmentation", "bottleneck", "classifier_free")

    def test_truth_table(self):
        rows = {name: preset_config(name) for name in PRESETS}
        # baseline: all-tokens conditioning, nothing else enabled
        b = rows["baseline"]
        assert (b.condition_mode, b.prior_steps, b.augment, b.distort_masks, b.cond_drop_prob, b.guidance_scale) == (
            MODE_ALL_TOKENS, 0, False, False, 0.0, 1.0)
        p = rows["prior"]
        assert p.prior_steps > 0 and not p.augment and p.condition_mode == MODE_ALL_TOKENS
        a = rows["augmentation"]
        assert a.prior_steps > 0 and a.augment and a.distort_masks and a.condition_mode == MODE_ALL_TOKENS
        k = rows["bottleneck"]
        assert k.augment and k.condition_mode == MODE_BOTTLENECK and k.cond_drop_prob == 0.0
        c = rows["classifier_free"]
        assert c.condition_mode == MODE_BOTTLENECK and c.cond_drop_prob == 0.2 and c.guidance_scale == 5.0

    def test_unknown_preset(self):
        with pytest.raises(ParameterError):
            preset_config("everything")


class TestCheckpoint:
    def _trained_state(self, toy_dataset, small_encoder, steps=2):
        cfg = preset_config("classifier_free", base_width=16, depth=2, batch_size=2, prior_steps=0)
        state = init_train_state(cfg, small_encoder)
        run_training(state, toy_dataset, steps, np.random.default_rng(2))
        return state

    def test_bitwise_round_trip(self, tmp_path, toy_dataset, small_encoder):
        state = self._trained_state(toy_dataset, small_encoder)
        path = tmp_path / "model.ckpt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)

        for (na, pa), (nb, pb) in zip(state.named_trainable(), loaded.named_trainable()):
            assert na == nb
            assert torch.equal(pa.detach(), pb.detach()), na
        for k in state.ema:
            assert torch.equal(state.ema[k], loaded.ema[k]), k
        for k, v in state.encoder.state_dict().items():
            assert torch.equal(v, loaded.encoder.state_dict()[k])
        assert loaded.config == state.config
        assert loaded.step == state.step
        np.testing.assert_array_equal(loaded.schedule.signal_coef, state.schedule.signal_coef)

    def test_sampling_reproduces_after_round_trip(self, tmp_path, toy_dataset, small_encoder):
        state = self._trained_state(toy_dataset, small_encoder)
        path = tmp_path / "model.ckpt"
        save_checkpoint(state, path)

        src = toy_dataset[0].image
        from exedit.masks import box_mask

        mask = box_mask(toy_dataset[0].boxes[0], src.shape[:2])
        ref = toy_dataset[1].image
        g = GuidanceConfig(scale=3.0, num_steps=6, seed=9)
        before = edit_image(to_edit_model(state), src, mask, ref, g)
        after = edit_image(load_edit_model(path), src, mask, ref, g)
        np.testing.assert_array_equal(before, after)

    def test_truncated_file_is_format_error(self, tmp_path, toy_dataset, small_encoder):
        state = self._trained_state(toy_dataset, small_encoder, steps=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(state, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_names_both_versions(self, tmp_path, toy_dataset, small_encoder):
        state = self._trained_state(toy_dataset, small_encoder, steps=1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(state, path)

        # Rewrite the manifest with a future format version.
        bumped = tmp_path / "bumped.ckpt"
        with zipfile.ZipFile(path) as zin, zipfile.ZipFile(bumped, "w") as zout:
            for name in zin.namelist():
                data = zin.read(name)
                if name == "manifest":
                    data = data.replace(b"format_version=1", b"format_version=99")
                zout.writestr(name, data)
        with pytest.raises(CheckpointVersionError) as exc:
            load_checkpoint(bumped)
        assert "99" in str(exc.value) and "1" in str(exc.value)

    def test_not_a_zip_is_format_error(self, tmp_path):
        path = tmp_path / "garbage.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
