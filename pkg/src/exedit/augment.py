"""Reference-image augmentation: flip, rotation, blur, elastic deformation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError

BLUR_SIGMA_RANGE = (0.5, 1.5)
ELASTIC_GRID = 4
ELASTIC_AMPLITUDE = 0.10  # fraction of the image extent


@dataclass(frozen=True)
class AugmentationPolicy:
    """Application probabilities and limits for reference augmentation."""

    flip_prob: float = 0.5
    rotate_limit_degrees: float = 20.0
    blur_prob: float = 0.3
    elastic_prob: float = 0.3

    def __post_init__(self):
        for name in ("flip_prob", "blur_prob", "elastic_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {p}")
        if self.rotate_limit_degrees < 0:
            raise ParameterError("rotate_limit_degrees must be >= 0")


def identity_policy() -> AugmentationPolicy:
    return AugmentationPolicy(flip_prob=0.0, rotate_limit_degrees=0.0, blur_prob=0.0, elastic_prob=0.0)


def horizontal_flip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def _elastic(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Warp by a coarse random displacement field, bilinearly upsampled."""
    H, W = img.shape[:2]
    amp_y = ELASTIC_AMPLITUDE * H
    amp_x = ELASTIC_AMPLITUDE * W
    field = rng.uniform(-1.0, 1.0, size=(ELASTIC_GRID, ELASTIC_GRID, 2))

    gy = np.linspace(0, ELASTIC_GRID - 1, H)
    gx = np.linspace(0, ELASTIC_GRID - 1, W)
    coords = np.stack(np.meshgrid(gy, gx, indexing="ij"))  # (2, H, W)
    dy = ndimage.map_coordinates(field[:, :, 0], coords, order=1, mode="nearest") * amp_y
    dx = ndimage.map_coordinates(field[:, :, 1], coords, order=1, mode="nearest") * amp_x

    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    sample = np.stack([yy + dy, xx + dx])
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(img[:, :, c], sample, order=1, mode="reflect")
    return out


def augment_reference(
    x_r: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Apply flip / rotation / blur / elastic per the policy.

    Output has the input's shape with values clipped to [-1, 1]. With the
    identity policy the input is returned bit-for-bit (as a copy).
    """
    img = np.asarray(x_r, dtype=np.float32)
    touched = False

    if rng.random() < policy.flip_prob:
        img = horizontal_flip(img)
        touched = True

    angle = float(rng.uniform(-policy.rotate_limit_degrees, policy.rotate_limit_degrees))
    if angle != 0.0:
        img = ndimage.rotate(img, angle, axes=(1, 0), reshape=False, order=1, mode="nearest")
        touched = True

    if rng.random() < policy.blur_prob:
        sigma = float(rng.uniform(*BLUR_SIGMA_RANGE))
        img = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0))
        touched = True

    if rng.random() < policy.elastic_prob:
        img = _elastic(img, rng)
        touched = True

    if not touched:
        return img.copy() if img is x_r else img
    return np.clip(img, -1.0, 1.0).astype(np.float32)
