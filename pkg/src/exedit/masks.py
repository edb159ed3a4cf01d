"""Bounding boxes, binary edit masks, and brush-like mask distortion.

A distorted mask is built from a bounding box by sampling 20 points per box
edge along the edge's Bezier curve (the segment itself for straight edges),
jittering each coordinate by an integer offset, and rasterizing the resulting
closed polygon with even-odd fill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw
from scipy import ndimage

from .errors import ParameterError, ShapeError

POINTS_PER_EDGE = 20
OFFSET_RANGE = (1, 5)  # inclusive magnitude range of the coordinate jitter

# 4-connectivity structuring element for component labeling.
_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: (x, y) is the top-left pixel, (w, h) the extent."""

    x: int
    y: int
    w: int
    h: int

    def validate(self, image_size: tuple[int, int]) -> "BBox":
        H, W = image_size
        if self.w < 4 or self.h < 4:
            raise ParameterError(f"box extent must be >= 4 px, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0 or self.x + self.w > W or self.y + self.h > H:
            raise ParameterError(f"box {self} not inside image {W}x{H}")
        if self.w * self.h > (H * W) // 2:
            raise ParameterError(f"box area {self.w * self.h} exceeds half the image area")
        return self

    def corners(self) -> np.ndarray:
        """Corner pixels in clockwise order starting at the top-left."""
        x1, y1 = self.x + self.w - 1, self.y + self.h - 1
        return np.array(
            [[self.x, self.y], [x1, self.y], [x1, y1], [self.x, y1]], dtype=np.float64
        )


def mask_is_binary(mask: np.ndarray) -> bool:
    return bool(np.isin(mask, (0, 1)).all())


def mask_is_connected(mask: np.ndarray) -> bool:
    """True if the 1-region is non-empty and 4-connected."""
    if mask.sum() == 0:
        return False
    _, n = ndimage.label(mask, structure=_CONN4)
    return n == 1


def validate_mask(mask: np.ndarray, image_size: tuple[int, int] | None = None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    if image_size is not None and mask.shape != tuple(image_size):
        raise ShapeError(f"mask shape {mask.shape} != image size {image_size}")
    if not mask_is_binary(mask):
        raise ParameterError("mask values must be 0 or 1")
    if not mask_is_connected(mask):
        raise ParameterError("mask 1-region must be non-empty and 4-connected")
    return mask.astype(np.uint8)


def bbox_of_mask(mask: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ParameterError("mask is empty")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def box_mask(box: BBox, image_size: tuple[int, int]) -> np.ndarray:
    """Exact rectangular mask of the box."""
    box.validate(image_size)
    H, W = image_size
    mask = np.zeros((H, W), dtype=np.uint8)
    mask[box.y : box.y + box.h, box.x : box.x + box.w] = 1
    return mask


def _edge_points(p0: np.ndarray, p1: np.ndarray, n: int) -> np.ndarray:
    # Degree-1 Bezier through the edge endpoints is the segment itself.
    t = np.linspace(0.0, 1.0, n)[:, None]
    return p0[None, :] * (1 - t) + p1[None, :] * t


def _rasterize_polygon(points: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    H, W = image_size
    im = PILImage.new("L", (W, H), 0)
    draw = ImageDraw.Draw(im)
    draw.polygon([(float(x), float(y)) for x, y in points], fill=1, outline=1)
    return np.asarray(im, dtype=np.uint8)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=_CONN4)
    if n <= 1:
        return mask
    sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, n + 1))
    keep = int(np.argmax(sizes)) + 1
    return (labels == keep).astype(np.uint8)


def distort_mask(
    box: BBox,
    image_size: tuple[int, int],
    rng: np.random.Generator,
    points_per_edge: int = POINTS_PER_EDGE,
    offset_range: tuple[int, int] = OFFSET_RANGE,
) -> np.ndarray:
    """Randomized brush-like mask derived from a bounding box.

    Samples `points_per_edge` points along each box edge, offsets each
    coordinate by a random integer with magnitude in `offset_range` (either
    sign), and fills the closed polygon through all points. Self-intersections
    are resolved by even-odd fill and the largest 4-connected component is
    kept. With offset_range=(0, 0) the result is the exact box rectangle.
    """
    box.validate(image_size)
    H, W = image_size
    corners = box.corners()

    pts = []
    for i in range(4):
        pts.append(_edge_points(corners[i], corners[(i + 1) % 4], points_per_edge))
    pts = np.concatenate(pts, axis=0)

    lo, hi = offset_range
    if hi > 0:
        mags = rng.integers(max(lo, 1), hi, size=pts.shape, endpoint=True)
        signs = rng.integers(0, 2, size=pts.shape) * 2 - 1
        pts = pts + mags * signs

    pts[:, 0] = np.clip(pts[:, 0], 0, W - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0, H - 1)

    mask = _largest_component(_rasterize_polygon(pts, image_size))
    if mask.sum() == 0:
        raise ParameterError("distorted mask is empty after clipping")
    return mask
