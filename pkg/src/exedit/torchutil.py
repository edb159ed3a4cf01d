"""Torch helpers: seeded deterministic initialization and array conversion."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


def seeded_init_(module: nn.Module, rng: np.random.Generator) -> nn.Module:
    """Initialize weights deterministically from a numpy generator.

    Conv/linear weights are uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)),
    biases zero, normalization affine parameters at identity. Iteration
    follows module definition order, so a fixed generator state yields
    bit-identical parameters.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            w = m.weight
            fan_in = w.shape[1] * (w.shape[2] * w.shape[3] if w.dim() == 4 else 1)
            bound = 1.0 / np.sqrt(fan_in)
            vals = rng.uniform(-bound, bound, size=tuple(w.shape)).astype(np.float32)
            with torch.no_grad():
                w.copy_(torch.from_numpy(vals))
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
    return module


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float array -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(img, -1, 0), dtype=np.float32)).unsqueeze(0)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float32 array."""
    if t.dim() == 4:
        t = t[0]
    return np.moveaxis(t.detach().cpu().numpy(), 0, -1).astype(np.float32)


def mask_to_tensor(mask: np.ndarray) -> torch.Tensor:
    """(H, W) mask -> (1, 1, H, W) float32 tensor."""
    return torch.from_numpy(mask.astype(np.float32)).view(1, 1, *mask.shape)


def stack_images(images: list[np.ndarray]) -> torch.Tensor:
    """List of (H, W, 3) arrays -> (B, 3, H, W) float32 tensor."""
    arr = np.stack([np.moveaxis(im, -1, 0) for im in images]).astype(np.float32)
    return torch.from_numpy(arr)
