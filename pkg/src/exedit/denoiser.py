"""Conditional noise predictor: a small convolutional U-shape.

Inputs are concatenated along channels (noisy image, masked source, mask; 7
channels for RGB), the timestep enters through a sinusoidal embedding added in
every residual block, and the condition tokens enter through a single
cross-attention block at the lowest resolution. The first-layer weights that
read the masked source and mask are zero at initialization, so a fresh model
ignores those inputs entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import ConditionTokens
from .errors import NumericError, ParameterError, ShapeError
from .torchutil import image_to_tensor, mask_to_tensor, seeded_init_, tensor_to_image

IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class DenoiserConfig:
    base_width: int = 32
    depth: int = 3          # number of resolution levels
    attention_dim: int = 64
    time_embed_dim: int = 64

    def __post_init__(self):
        for name in ("base_width", "depth", "attention_dim", "time_embed_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.time_embed_dim % 2 != 0:
            raise ParameterError("time_embed_dim must be even")

    @property
    def in_channels(self) -> int:
        # noisy image + masked source + mask
        return 2 * IMAGE_CHANNELS + 1

    @property
    def channels(self) -> list[int]:
        return [self.base_width * min(2**i, 2) for i in range(self.depth)]


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard log-spaced sin/cos embedding of integer timesteps."""
    half = dim // 2
    scale = math.log(10000.0) / max(half - 1, 1)
    freqs = torch.exp(-scale * torch.arange(half, dtype=torch.float64)).to(t.device)
    args = t.to(freqs.dtype)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _groups(ch: int) -> int:
    # Keep >= 2 channels per group: with a single condition token the
    # cross-attention output is spatially constant per channel, and
    # single-channel groups would cancel such a shift exactly.
    for g in (8, 4, 2, 1):
        if ch % g == 0 and ch // g >= 2:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(ch_in), ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, ch_out)
        self.norm2 = nn.GroupNorm(_groups(ch_out), ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Single-head cross-attention from feature-map positions to condition tokens."""

    def __init__(self, ch: int, attn_dim: int):
        super().__init__()
        self.scale = attn_dim**-0.5
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.to_q = nn.Linear(ch, attn_dim)
        self.to_k = nn.Linear(attn_dim, attn_dim)
        self.to_v = nn.Linear(attn_dim, attn_dim)
        self.to_out = nn.Linear(attn_dim, ch)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        B, C, H, W = x.shape
        f = self.norm(x).flatten(2).transpose(1, 2)       # (B, HW, C)
        q = self.to_q(f)
        k = self.to_k(cond)
        v = self.to_v(cond)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        out = self.to_out(attn @ v)                        # (B, HW, C)
        return x + out.transpose(1, 2).reshape(B, C, H, W)


class Denoiser(nn.Module):
    """Noise predictor over (noisy image, masked source, mask, timestep, tokens)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        chs = config.channels
        td = config.time_embed_dim

        self.stem = nn.Conv2d(config.in_channels, chs[0], 3, padding=1)
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))

        self.down_res = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i in range(config.depth - 1):
            self.down_res.append(ResBlock(chs[i], chs[i], td))
            self.downs.append(nn.Conv2d(chs[i], chs[i + 1], 3, stride=2, padding=1))

        self.mid_res = ResBlock(chs[-1], chs[-1], td)
        self.attn = CrossAttention(chs[-1], config.attention_dim)

        self.ups = nn.ModuleList()
        self.up_res = nn.ModuleList()
        for i in reversed(range(config.depth - 1)):
            self.ups.append(nn.Conv2d(chs[i + 1], chs[i], 3, padding=1))
            self.up_res.append(ResBlock(2 * chs[i], chs[i], td))

        self.head_norm = nn.GroupNorm(_groups(chs[0]), chs[0])
        self.head = nn.Conv2d(chs[0], IMAGE_CHANNELS, 3, padding=1)

    def forward(
        self,
        y_t: torch.Tensor,
        masked_source: torch.Tensor,
        mask: torch.Tensor,
        t: torch.Tensor,
        cond: torch.Tensor,
    ) -> torch.Tensor:
        """All tensors batched: images (B, 3, H, W), mask (B, 1, H, W),
        t (B,) integer timesteps, cond (B, L, attention_dim)."""
        x = torch.cat([y_t, masked_source, mask], dim=1)
        temb = self.time_mlp(
            sinusoidal_embedding(t, self.config.time_embed_dim).to(x.dtype)
        )

        skips = []
        h = self.stem(x)
        for res, down in zip(self.down_res, self.downs):
            h = res(h, temb)
            skips.append(h)
            h = down(h)

        h = self.mid_res(h, temb)
        h = self.attn(h, cond)

        for up, res, skip in zip(self.ups, self.up_res, reversed(skips)):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = res(torch.cat([h, skip], dim=1), temb)

        return self.head(F.silu(self.head_norm(h)))


def init_denoiser(config: DenoiserConfig, rng: np.random.Generator) -> Denoiser:
    """Seeded random init, with the stem weights that multiply the masked-source
    and mask channels set exactly to zero."""
    model = seeded_init_(Denoiser(config), rng)
    with torch.no_grad():
        model.stem.weight[:, IMAGE_CHANNELS:, :, :].zero_()
    return model


def _as_batch(model: Denoiser, y_t, masked_source, mask, t: int, cond: ConditionTokens):
    y = image_to_tensor(np.asarray(y_t, dtype=np.float32))
    ms = image_to_tensor(np.asarray(masked_source, dtype=np.float32))
    mk = mask_to_tensor(np.asarray(mask))
    if y.shape != ms.shape:
        raise ShapeError(f"masked source shape {tuple(ms.shape)} != y_t shape {tuple(y.shape)}")
    if mk.shape[-2:] != y.shape[-2:]:
        raise ShapeError(f"mask spatial size {tuple(mk.shape[-2:])} != image {tuple(y.shape[-2:])}")
    tokens = torch.from_numpy(cond.tokens).unsqueeze(0)
    if tokens.shape[-1] != model.config.attention_dim:
        raise ShapeError(
            f"condition dimension {tokens.shape[-1]} != attention_dim {model.config.attention_dim}"
        )
    return y, ms, mk, torch.tensor([int(t)]), tokens


def predict_noise(
    model: Denoiser,
    y_t: np.ndarray,
    masked_source: np.ndarray,
    mask: np.ndarray,
    t: int,
    cond: ConditionTokens,
) -> np.ndarray:
    """Numpy-facing single-image wrapper around the torch forward pass."""
    if not (np.all(np.isfinite(y_t)) and np.all(np.isfinite(masked_source))):
        raise NumericError("non-finite values in denoiser inputs")
    y, ms, mk, tt, tokens = _as_batch(model, y_t, masked_source, mask, t, cond)
    with torch.no_grad():
        out = model(y, ms, mk, tt, tokens)
    return tensor_to_image(out)
