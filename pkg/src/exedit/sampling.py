"""Guided reverse diffusion and compositing into the source image.

Each denoising step evaluates the noise predictor twice, once with the
reference condition and once with the learnable null condition, and combines
the two as eps_null + scale * (eps_cond - eps_null). The final output is
composited so pixels outside the mask come from the source bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .datasets import apply_mask_fill
from .denoiser import predict_noise
from .diffusion import NoiseSchedule
from .encoder import ConditionTokens, adapt, encode_reference, null_tokens
from .errors import ParameterError, ShapeError
from .imgio import validate_image
from .masks import mask_is_binary, mask_is_connected
from .torchutil import image_to_tensor, mask_to_tensor, tensor_to_image
from .training import EditModel


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 5.0
    num_steps: int = 50
    eta: float = 0.0  # 0 = deterministic reverse process
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ParameterError(f"guidance scale must be >= 0, got {self.scale}")
        if self.num_steps < 1:
            raise ParameterError(f"num_steps must be >= 1, got {self.num_steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must be in [0, 1], got {self.eta}")


def combine_guidance(eps_cond, eps_null, s: float):
    """eps_null + s * (eps_cond - eps_null); exact passthrough at s in {0, 1}."""
    s = float(s)
    if s == 1.0:
        return eps_cond
    if s == 0.0:
        return eps_null
    return eps_null + s * (eps_cond - eps_null)


def guided_noise_prediction(
    model: EditModel,
    y_t: np.ndarray,
    masked_source: np.ndarray,
    mask: np.ndarray,
    t: int,
    cond: ConditionTokens,
    null: ConditionTokens,
    s: float,
) -> np.ndarray:
    """Classifier-free guided noise prediction from exactly two denoiser evaluations."""
    if s < 0:
        raise ParameterError(f"guidance scale must be >= 0, got {s}")
    eps_cond = predict_noise(model.denoiser, y_t, masked_source, mask, t, cond)
    eps_null = predict_noise(model.denoiser, y_t, masked_source, mask, t, null)
    return combine_guidance(eps_cond, eps_null, s)


def strided_timesteps(T: int, num_steps: int) -> list[int]:
    """Descending timestep sequence of length <= num_steps covering [0, T-1]."""
    if not 1 <= num_steps <= T:
        raise ParameterError(f"num_steps must be in [1, {T}], got {num_steps}")
    # Always start at the terminal timestep; a 1-step schedule is [T-1].
    ts = np.unique(np.linspace(T - 1, 0, num_steps).round().astype(int))
    return [int(t) for t in ts[::-1]]


def denoise_step(
    y_t,
    t_from: int,
    t_to: int,
    epsilon_hat,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    rng: np.random.Generator | None = None,
    clip_estimate: bool = True,
):
    """One strided reverse update: rebuild the clean estimate from epsilon_hat
    and re-noise to t_to (t_to = -1 means a final, fully denoised output).

    Deterministic when eta == 0; otherwise rng supplies the ancestral noise.
    Accepts numpy arrays or torch tensors.
    """
    if t_to >= t_from:
        raise ParameterError(f"t_to ({t_to}) must be < t_from ({t_from})")
    s_from = float(schedule.signal_coef[t_from])
    n_from = float(schedule.noise_coef[t_from])

    y0_hat = (y_t - n_from * epsilon_hat) / s_from
    if clip_estimate:
        y0_hat = y0_hat.clip(-1.0, 1.0)
    if t_to < 0:
        return y0_hat

    s_to = float(schedule.signal_coef[t_to])
    n_to = float(schedule.noise_coef[t_to])
    sigma = 0.0
    if eta > 0.0 and n_from > 0.0:
        sigma = eta * (n_to / n_from) * np.sqrt(max(1.0 - (s_from / s_to) ** 2, 0.0))
    direction = np.sqrt(max(n_to**2 - sigma**2, 0.0))
    out = s_to * y0_hat + direction * epsilon_hat
    if sigma > 0.0:
        if rng is None:
            raise ParameterError("eta > 0 requires an rng for ancestral noise")
        z = rng.standard_normal(tuple(y_t.shape))
        if isinstance(y_t, torch.Tensor):
            z = torch.from_numpy(z.astype(np.float32))
        else:
            z = z.astype(y_t.dtype, copy=False)
        out = out + sigma * z
    return out


def edit_image(
    model: EditModel,
    source: np.ndarray,
    mask: np.ndarray,
    reference: np.ndarray,
    g: GuidanceConfig,
) -> np.ndarray:
    """Run the full guided reverse process and composite into the source.

    The region where mask == 0 is returned bit-identical to the source. An
    all-zero mask short-circuits to the unchanged source.
    """
    source = validate_image(np.asarray(source, dtype=np.float32), "source")
    mask = np.asarray(mask)
    if mask.shape != source.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} != source spatial size {source.shape[:2]}")
    if not mask_is_binary(mask):
        raise ParameterError("mask values must be 0 or 1")
    mask = mask.astype(np.uint8)
    if mask.sum() == 0:
        return source.copy()
    if not mask_is_connected(mask):
        raise ParameterError("mask 1-region must be 4-connected")
    reference = validate_image(np.asarray(reference, dtype=np.float32), "reference")

    schedule = model.schedule
    if g.num_steps > schedule.T:
        raise ParameterError(f"num_steps {g.num_steps} exceeds schedule length {schedule.T}")

    cond = adapt(model.adapter, encode_reference(model.encoder, reference, model.config.condition_mode))
    null = null_tokens(model.null_cond, model.adapter)
    cond_t = torch.from_numpy(cond.tokens).unsqueeze(0)
    null_t = torch.from_numpy(null.tokens).unsqueeze(0)

    rng = np.random.default_rng(g.seed)
    H, W = source.shape[:2]
    y = torch.from_numpy(rng.standard_normal((1, 3, H, W)).astype(np.float32))
    ms = image_to_tensor(apply_mask_fill(source, mask))
    mk = mask_to_tensor(mask)

    ts = strided_timesteps(schedule.T, g.num_steps)
    with torch.no_grad():
        for i, t_from in enumerate(ts):
            t_to = ts[i + 1] if i + 1 < len(ts) else -1
            tt = torch.tensor([t_from])
            eps_cond = model.denoiser(y, ms, mk, tt, cond_t)
            eps_null = model.denoiser(y, ms, mk, tt, null_t)
            eps_hat = combine_guidance(eps_cond, eps_null, g.scale)
            y = denoise_step(y, t_from, t_to, eps_hat, schedule, eta=g.eta, rng=rng)

    generated = np.clip(tensor_to_image(y), -1.0, 1.0)
    return np.where(mask[:, :, None] == 1, generated, source).astype(np.float32)
