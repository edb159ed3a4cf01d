"""Guidance algebra, reverse steps, and the edit contract."""

import numpy as np
import pytest

import exedit.sampling as sampling
from exedit.diffusion import build_schedule, forward_noise
from exedit.errors import ParameterError, ShapeError
from exedit.masks import box_mask
from exedit.sampling import (
    GuidanceConfig,
    combine_guidance,
    denoise_step,
    edit_image,
    guided_noise_prediction,
    strided_timesteps,
)


class TestGuidanceAlgebra:
    def test_scale_one_collapses_to_conditional(self):
        rng = np.random.default_rng(0)
        ec, en = rng.standard_normal((2, 8, 8, 3)).astype(np.float32)
        assert combine_guidance(ec, en, 1.0) is ec

    def test_scale_zero_collapses_to_null(self):
        rng = np.random.default_rng(1)
        ec, en = rng.standard_normal((2, 8, 8, 3)).astype(np.float32)
        assert combine_guidance(ec, en, 0.0) is en

    def test_scalar_probe(self):
        # null 0.2, cond 0.5, s=5 -> 0.2 + 5*(0.5-0.2) = 1.7
        out = combine_guidance(np.float64(0.5), np.float64(0.2), 5.0)
        np.testing.assert_allclose(out, 1.7, rtol=1e-12)

    def test_affinity_in_scale(self):
        rng = np.random.default_rng(2)
        ec, en = rng.standard_normal((2, 16, 16, 3))
        e0 = combine_guidance(ec, en, 0.0)
        e1 = combine_guidance(ec, en, 1.0)
        for s in rng.uniform(-0.5, 8.0, size=20):
            lhs = combine_guidance(ec, en, float(s))
            rhs = e0 + s * (e1 - e0)
            np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_exactly_two_denoiser_evaluations(self, tiny_model, monkeypatch):
        calls = {"n": 0}
        real = sampling.predict_noise

        def counting(*args, **kwargs):
            calls["n"] += 1
            return real(*args, **kwargs)

        monkeypatch.setattr(sampling, "predict_noise", counting)
        rng = np.random.default_rng(3)
        y = rng.standard_normal((32, 32, 3)).astype(np.float32)
        ms = rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32)
        mask = np.zeros((32, 32), np.uint8)
        mask[4:12, 4:12] = 1
        from exedit.encoder import adapt, encode_reference, null_tokens

        cond = adapt(tiny_model.adapter, encode_reference(tiny_model.encoder, ms, "bottleneck"))
        null = null_tokens(tiny_model.null_cond, tiny_model.adapter)
        out = guided_noise_prediction(tiny_model, y, ms, mask, 3, cond, null, 5.0)
        assert calls["n"] == 2
        assert out.shape == y.shape

    def test_negative_scale_rejected(self, tiny_model):
        with pytest.raises(ParameterError):
            guided_noise_prediction(tiny_model, None, None, None, 0, None, None, -1.0)


class TestStridedTimesteps:
    def test_covers_range_descending(self):
        ts = strided_timesteps(200, 50)
        assert ts[0] == 199 and ts[-1] == 0
        assert all(a > b for a, b in zip(ts, ts[1:]))

    def test_single_step_starts_at_terminal(self):
        assert strided_timesteps(200, 1) == [199]

    def test_bounds(self):
        with pytest.raises(ParameterError):
            strided_timesteps(10, 11)
        with pytest.raises(ParameterError):
            strided_timesteps(10, 0)


class TestDenoiseStep:
    def test_perfect_epsilon_inverts_forward(self):
        schedule = build_schedule(50, 1e-3, 0.05)
        rng = np.random.default_rng(4)
        y0 = rng.uniform(-0.9, 0.9, (8, 8, 3))
        eps = rng.standard_normal((8, 8, 3))
        for t in (5, 25, 49):
            y_t = forward_noise(y0, t, eps, schedule)
            estimate = denoise_step(y_t, t, -1, eps, schedule, eta=0.0)
            np.testing.assert_allclose(estimate, y0, atol=1e-5)

    def test_deterministic_at_eta_zero(self):
        schedule = build_schedule(50, 1e-3, 0.05)
        rng = np.random.default_rng(5)
        y = rng.standard_normal((8, 8, 3))
        eps = rng.standard_normal((8, 8, 3))
        a = denoise_step(y, 30, 10, eps, schedule, eta=0.0)
        b = denoise_step(y, 30, 10, eps, schedule, eta=0.0)
        np.testing.assert_array_equal(a, b)

    def test_eta_requires_rng(self):
        schedule = build_schedule(50, 1e-3, 0.05)
        y = np.zeros((8, 8, 3))
        with pytest.raises(ParameterError):
            denoise_step(y, 30, 10, y, schedule, eta=0.5, rng=None)

    def test_order_constraint(self):
        schedule = build_schedule(50, 1e-3, 0.05)
        y = np.zeros((8, 8, 3))
        with pytest.raises(ParameterError):
            denoise_step(y, 10, 10, y, schedule)

    def test_single_step_schedule_smoke(self, tiny_model, toy_dataset):
        src = toy_dataset[0].image
        mask = box_mask(toy_dataset[0].boxes[0], src.shape[:2])
        out = edit_image(tiny_model, src, mask, toy_dataset[1].image, GuidanceConfig(num_steps=1, seed=0))
        assert np.all(np.isfinite(out))


class TestGuidanceConfig:
    def test_defaults(self):
        g = GuidanceConfig()
        assert g.scale == 5.0 and g.num_steps == 50 and g.eta == 0.0

    @pytest.mark.parametrize("kw", [{"scale": -1}, {"num_steps": 0}, {"eta": 2.0}])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            GuidanceConfig(**kw)


class TestEditImage:
    def test_empty_mask_returns_source_bitwise(self, tiny_model, toy_dataset):
        src = toy_dataset[0].image
        out = edit_image(tiny_model, src, np.zeros(src.shape[:2], np.uint8), toy_dataset[1].image,
                         GuidanceConfig(num_steps=4, seed=0))
        np.testing.assert_array_equal(out, src)

    def test_unmasked_region_bit_identical(self, tiny_model, toy_dataset):
        src = toy_dataset[2].image
        mask = box_mask(toy_dataset[2].boxes[0], src.shape[:2])
        out = edit_image(tiny_model, src, mask, toy_dataset[3].image, GuidanceConfig(num_steps=6, seed=1))
        assert np.array_equal(out[mask == 0], src[mask == 0])
        assert np.sum(np.abs(out[mask == 0] - src[mask == 0])) == 0.0

    def test_deterministic_per_seed(self, tiny_model, toy_dataset):
        src = toy_dataset[4].image
        mask = box_mask(toy_dataset[4].boxes[0], src.shape[:2])
        g = GuidanceConfig(num_steps=6, seed=11)
        a = edit_image(tiny_model, src, mask, toy_dataset[5].image, g)
        b = edit_image(tiny_model, src, mask, toy_dataset[5].image, g)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self, tiny_model, toy_dataset):
        src = toy_dataset[4].image
        mask = box_mask(toy_dataset[4].boxes[0], src.shape[:2])
        a = edit_image(tiny_model, src, mask, toy_dataset[5].image, GuidanceConfig(num_steps=6, seed=1))
        b = edit_image(tiny_model, src, mask, toy_dataset[5].image, GuidanceConfig(num_steps=6, seed=2))
        assert not np.array_equal(a, b)

    def test_disconnected_mask_rejected(self, tiny_model, toy_dataset):
        src = toy_dataset[0].image
        mask = np.zeros(src.shape[:2], np.uint8)
        mask[2:5, 2:5] = 1
        mask[20:23, 20:23] = 1
        with pytest.raises(ParameterError):
            edit_image(tiny_model, src, mask, toy_dataset[1].image, GuidanceConfig(num_steps=4))

    def test_mask_shape_mismatch_rejected(self, tiny_model, toy_dataset):
        src = toy_dataset[0].image
        with pytest.raises(ShapeError):
            edit_image(tiny_model, src, np.zeros((16, 16), np.uint8), toy_dataset[1].image,
                       GuidanceConfig(num_steps=4))

    def test_too_many_steps_rejected(self, tiny_model, toy_dataset):
        src = toy_dataset[0].image
        mask = box_mask(toy_dataset[0].boxes[0], src.shape[:2])
        with pytest.raises(ParameterError):
            edit_image(tiny_model, src, mask, toy_dataset[1].image,
                       GuidanceConfig(num_steps=tiny_model.schedule.T + 1))

    def test_ancestral_path_runs(self, tiny_model, toy_dataset):
        src = toy_dataset[6].image
        mask = box_mask(toy_dataset[6].boxes[0], src.shape[:2])
        out = edit_image(tiny_model, src, mask, toy_dataset[1].image,
                         GuidanceConfig(num_steps=6, seed=3, eta=1.0))
        assert np.all(np.isfinite(out))
        assert np.array_equal(out[mask == 0], src[mask == 0])
