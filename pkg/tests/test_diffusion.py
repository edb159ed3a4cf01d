"""Noise schedule, forward process, and training-loss contracts."""

import numpy as np
import pytest
import torch

from exedit.datasets import TrainingSample
from exedit.diffusion import build_schedule, forward_noise, training_loss
from exedit.errors import NumericError, ParameterError, ShapeError


def _sample_from(target, mask_value=0.0):
    mask = np.zeros(target.shape[:2], dtype=np.uint8)
    mask[2:5, 2:5] = 1
    masked = np.where(mask[:, :, None] == 1, np.float32(mask_value), target)
    return TrainingSample(masked_source=masked, mask=mask, reference=target, target=target)


class TestBuildSchedule:
    def test_zero_noise_identity(self):
        s = build_schedule(1, 0.0, 0.0)
        assert s.signal_coef.tolist() == [1.0]
        assert s.noise_coef.tolist() == [0.0]

    def test_two_step_hand_computed(self):
        # cumprod(0.5, 0.5) -> (0.5, 0.25); sqrt -> (0.70711, 0.5); noise sqrt(1-.) -> (0.70711, 0.86603)
        s = build_schedule(2, 0.5, 0.5)
        np.testing.assert_allclose(s.signal_coef, [np.sqrt(0.5), 0.5], atol=1e-9)
        np.testing.assert_allclose(s.noise_coef, [np.sqrt(0.5), np.sqrt(0.75)], atol=1e-9)

    def test_long_schedule_terminal_noise_dominated(self):
        # Oracle: direct cumulative product.
        T = 1000
        betas = np.linspace(1e-4, 0.02, T)
        expected_terminal = np.sqrt(np.prod(1 - betas))
        s = build_schedule(T, 1e-4, 0.02)
        assert s.signal_coef[-1] < 0.05
        np.testing.assert_allclose(s.signal_coef[-1], expected_terminal, rtol=1e-10)

    def test_default_schedule_satisfies_invariants(self):
        s = build_schedule()
        s.validate()
        np.testing.assert_allclose(s.signal_coef**2 + s.noise_coef**2, 1.0, atol=1e-9)
        assert np.all(np.diff(s.signal_coef) < 0)
        assert np.all(np.diff(s.noise_coef) > 0)
        assert s.signal_coef[-1] <= 0.05

    @pytest.mark.parametrize("args", [(0, 0.1, 0.2), (10, -0.1, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0)])
    def test_invalid_parameters(self, args):
        with pytest.raises(ParameterError):
            build_schedule(*args)


class TestForwardNoise:
    def test_identity_at_zero_noise(self):
        s = build_schedule(1, 0.0, 0.0)
        y0 = np.random.default_rng(0).uniform(-1, 1, (8, 8, 3)).astype(np.float32)
        eps = np.random.default_rng(1).standard_normal((8, 8, 3)).astype(np.float32)
        np.testing.assert_array_equal(forward_noise(y0, 0, eps, s), y0)

    def test_zero_epsilon_scales_signal(self):
        s = build_schedule(10, 0.1, 0.3)
        y0 = np.random.default_rng(0).uniform(-1, 1, (8, 8, 3))
        out = forward_noise(y0, 4, np.zeros_like(y0), s)
        np.testing.assert_allclose(out, s.signal_coef[4] * y0, rtol=1e-12)

    def test_pure_noise_scales_noise_coef(self):
        # Construct a schedule where noise_coef[t] = 0.5: alpha_bar = 0.75 at t=0.
        s = build_schedule(1, 0.25, 0.25)
        np.testing.assert_allclose(s.noise_coef[0], 0.5, atol=1e-12)
        y0 = np.zeros((8, 8, 3))
        out = forward_noise(y0, 0, np.ones_like(y0), s)
        np.testing.assert_allclose(out, 0.5, atol=1e-12)

    def test_out_of_range_timestep(self):
        s = build_schedule(5, 0.1, 0.2)
        y0 = np.zeros((8, 8, 3))
        with pytest.raises(IndexError):
            forward_noise(y0, 5, y0, s)
        with pytest.raises(IndexError):
            forward_noise(y0, -1, y0, s)

    def test_shape_mismatch(self):
        s = build_schedule(5, 0.1, 0.2)
        with pytest.raises(ShapeError):
            forward_noise(np.zeros((8, 8, 3)), 0, np.zeros((8, 9, 3)), s)

    def test_linearity_superposition(self):
        s = build_schedule(20, 1e-3, 0.1)
        rng = np.random.default_rng(7)
        y0a, y0b = rng.standard_normal((2, 8, 8, 3))
        ea, eb = rng.standard_normal((2, 8, 8, 3))
        a, b = 0.3, -1.7
        lhs = forward_noise(a * y0a + b * y0b, 9, a * ea + b * eb, s)
        rhs = a * forward_noise(y0a, 9, ea, s) + b * forward_noise(y0b, 9, eb, s)
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_empirical_moments(self):
        # mean(y_t) ~= signal * mean(y0) within 3 SE; var(y_t - signal*y0) ~= noise^2 within 5%.
        s = build_schedule(50, 1e-3, 0.05)
        t = 30
        rng = np.random.default_rng(5)
        y0 = rng.uniform(-1, 1, (8, 8, 3))
        n_draws = 10_000
        eps = rng.standard_normal((n_draws,) + y0.shape)
        y_t = s.signal_coef[t] * y0[None] + s.noise_coef[t] * eps
        n_vals = n_draws * y0.size
        se = s.noise_coef[t] / np.sqrt(n_vals)
        assert abs(y_t.mean() - s.signal_coef[t] * y0.mean()) < 3 * se
        resid_var = (y_t - s.signal_coef[t] * y0[None]).var()
        assert abs(resid_var - s.noise_coef[t] ** 2) / s.noise_coef[t] ** 2 < 0.05


class TestTrainingLoss:
    def setup_method(self):
        self.schedule = build_schedule(10, 1e-3, 0.1)
        rng = np.random.default_rng(0)
        self.target = rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
        self.sample = _sample_from(self.target)
        self.eps = rng.standard_normal((8, 8, 3)).astype(np.float32)

    def test_perfect_prediction_zero_loss(self):
        predictor = lambda y_t, ms, mk, t, c: self.eps
        assert training_loss(predictor, self.sample, None, 3, self.eps, self.schedule) == 0.0

    def test_constant_offset_unit_loss(self):
        predictor = lambda y_t, ms, mk, t, c: self.eps + 1.0
        loss = training_loss(predictor, self.sample, None, 3, self.eps, self.schedule)
        np.testing.assert_allclose(loss, 1.0, rtol=1e-6)

    def test_nonfinite_prediction_raises(self):
        predictor = lambda y_t, ms, mk, t, c: np.full_like(self.eps, np.nan)
        with pytest.raises(NumericError):
            training_loss(predictor, self.sample, None, 3, self.eps, self.schedule)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            training_loss(
                lambda *a: self.eps, self.sample, None, 3, self.eps[:, :4], self.schedule
            )

    def test_permutation_invariance(self):
        # Applying one permutation to both prediction and target leaves the loss unchanged.
        rng = np.random.default_rng(3)
        perm = rng.permutation(self.eps.size)
        eps = self.eps.astype(np.float64)
        pred = rng.standard_normal(eps.shape)

        base = training_loss(lambda *a: pred, self.sample, None, 3, eps, self.schedule)
        eps_p = eps.ravel()[perm].reshape(eps.shape)
        pred_p = pred.ravel()[perm].reshape(pred.shape)
        permuted = training_loss(lambda *a: pred_p, self.sample, None, 3, eps_p, self.schedule)
        np.testing.assert_allclose(base, permuted, rtol=1e-12)

    def test_differentiable_with_torch(self):
        target = torch.from_numpy(self.target).double()
        mask = torch.zeros(8, 8, dtype=torch.float64)
        sample = TrainingSample(
            masked_source=target.clone(), mask=mask, reference=None, target=target
        )
        eps = torch.from_numpy(self.eps).double()
        w = torch.randn(1, dtype=torch.float64, requires_grad=True)
        predictor = lambda y_t, ms, mk, t, c: w * y_t
        loss = training_loss(predictor, sample, None, 3, eps, self.schedule)
        loss.backward()
        assert w.grad is not None and torch.isfinite(w.grad).all()
