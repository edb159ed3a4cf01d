"""Forward diffusion: noise schedule, noising process, and the denoising loss.

The forward process is variance preserving: y_t = a_t * y0 + b_t * eps with
a_t^2 + b_t^2 = 1, where a_t is the square root of the cumulative product of
(1 - beta_i). The denoiser is trained to predict eps from y_t by mean squared
error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

# Desk-scale default: 200 steps with the 1000-step DDPM beta range compressed
# 5x so the terminal signal level stays noise-dominated (< 0.05).
DEFAULT_T = 200
DEFAULT_BETA_START = 5e-4
DEFAULT_BETA_END = 0.1


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep signal/noise coefficients for t in [0, T)."""

    T: int
    signal_coef: np.ndarray  # sqrt(cumprod(1 - beta)), in (0, 1]
    noise_coef: np.ndarray   # sqrt(1 - cumprod(1 - beta)), in [0, 1)
    beta_start: float
    beta_end: float

    def validate(self, terminal_max: float = 0.05) -> None:
        """Check the production-schedule invariants.

        Degenerate schedules (T=1, zero betas) are constructible for tests but
        do not pass this check.
        """
        s, n = self.signal_coef, self.noise_coef
        if len(s) != self.T or len(n) != self.T:
            raise ParameterError("coefficient arrays must have length T")
        if not (np.all(s > 0) and np.all(s <= 1)):
            raise ParameterError("signal coefficients must lie in (0, 1]")
        if not (np.all(n >= 0) and np.all(n < 1)):
            raise ParameterError("noise coefficients must lie in [0, 1)")
        if self.T > 1 and not (np.all(np.diff(s) < 0) and np.all(np.diff(n) > 0)):
            raise ParameterError("signal must strictly decrease and noise strictly increase")
        if np.max(np.abs(s**2 + n**2 - 1.0)) > 1e-9:
            raise ParameterError("schedule is not variance preserving")
        if s[-1] > terminal_max:
            raise ParameterError(
                f"terminal signal coefficient {s[-1]:.4f} exceeds {terminal_max}"
            )


def build_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build a variance-preserving linear-beta schedule.

    Args:
        T: number of diffusion steps, >= 1.
        beta_start, beta_end: per-step variance range, 0 <= start <= end < 1.
    """
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not (0.0 <= beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"betas must satisfy 0 <= start <= end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    signal = np.sqrt(alpha_bar)
    noise = np.sqrt(1.0 - alpha_bar)
    return NoiseSchedule(
        T=T, signal_coef=signal, noise_coef=noise,
        beta_start=float(beta_start), beta_end=float(beta_end),
    )


def _check_t(t: int, T: int) -> int:
    t = int(t)
    if not 0 <= t < T:
        raise IndexError(f"timestep {t} out of range [0, {T})")
    return t


def forward_noise(y0, t: int, epsilon, schedule: NoiseSchedule):
    """Noise a clean image to timestep t: signal*y0 + noise*epsilon.

    Works elementwise on numpy arrays or torch tensors of matching shape.
    """
    t = _check_t(t, schedule.T)
    if tuple(y0.shape) != tuple(epsilon.shape):
        raise ShapeError(f"epsilon shape {tuple(epsilon.shape)} != y0 shape {tuple(y0.shape)}")
    s = float(schedule.signal_coef[t])
    n = float(schedule.noise_coef[t])
    return s * y0 + n * epsilon


def _all_finite(x) -> bool:
    if isinstance(x, np.ndarray):
        return bool(np.all(np.isfinite(x)))
    # torch tensor (duck-typed to avoid importing torch here)
    return bool(x.isfinite().all())


def training_loss(predictor, sample, cond, t: int, epsilon, schedule: NoiseSchedule):
    """Denoising objective: mean squared error between predicted and true noise.

    Args:
        predictor: callable (y_t, masked_source, mask, t, cond) -> noise prediction.
        sample: TrainingSample with mutually consistent shapes.
        cond: condition tokens forwarded to the predictor.
        t: timestep index.
        epsilon: noise with the target's shape.
        schedule: noise schedule.

    Returns a scalar (array or tensor, matching the input types); differentiable
    when called with torch tensors.
    """
    target = sample.target
    if tuple(epsilon.shape) != tuple(target.shape):
        raise ShapeError(
            f"epsilon shape {tuple(epsilon.shape)} != target shape {tuple(target.shape)}"
        )
    y_t = forward_noise(target, t, epsilon, schedule)
    pred = predictor(y_t, sample.masked_source, sample.mask, t, cond)
    if tuple(pred.shape) != tuple(epsilon.shape):
        raise ShapeError(f"predictor output shape {tuple(pred.shape)} != noise shape")
    if not _all_finite(pred):
        raise NumericError("predictor produced non-finite values")
    return ((pred - epsilon) ** 2).mean()
