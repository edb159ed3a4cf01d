"""Training data: self-supervised pair synthesis, the procedural toy dataset,
and annotation-directory I/O.

A training sample is built from an annotated image by picking one box,
cropping it as the reference, distorting the box into the edit mask, and
blanking the masked region of the source. The dataset directory format is
``images/<name>.png`` plus ``annotations.json`` holding
``[{"file": name, "boxes": [[x, y, w, h], ...]}, ...]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentationPolicy, augment_reference
from .errors import DatasetError, ParameterError
from .imgio import load_image, resize_image, save_image
from .masks import BBox, box_mask, distort_mask

log = logging.getLogger(__name__)

MASK_FILL_VALUE = 0.0  # mid-gray in [-1, 1]
REFERENCE_SIZE = 32    # references are resized to the encoder input size
PLAIN_MASK_PROB = 0.3  # fraction of undistorted rectangle masks during training

ANNOTATIONS_FILE = "annotations.json"
IMAGES_DIR = "images"

_PALETTE = np.array(
    [
        [0.9, -0.9, -0.9],
        [-0.9, 0.9, -0.9],
        [-0.9, -0.9, 0.9],
        [0.9, 0.9, -0.9],
        [0.9, -0.9, 0.9],
        [-0.9, 0.9, 0.9],
        [0.9, 0.45, -0.9],
        [-0.9, -0.25, 0.9],
    ],
    dtype=np.float32,
)


@dataclass
class TrainingSample:
    """One self-supervised tuple: (masked source, mask, reference), target."""

    masked_source: np.ndarray
    mask: np.ndarray
    reference: np.ndarray
    target: np.ndarray


@dataclass
class AnnotatedImage:
    image: np.ndarray
    boxes: list[BBox] = field(default_factory=list)


def crop_box(image: np.ndarray, box: BBox) -> np.ndarray:
    return image[box.y : box.y + box.h, box.x : box.x + box.w]


def apply_mask_fill(image: np.ndarray, mask: np.ndarray, fill: float = MASK_FILL_VALUE) -> np.ndarray:
    """Replace the masked region with the fill value; unmasked pixels are copied bit-identically."""
    return np.where(mask[:, :, None] == 1, np.float32(fill), image).astype(np.float32)


def make_training_sample(
    annotated: AnnotatedImage,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    distort_masks: bool = True,
    plain_mask_prob: float = PLAIN_MASK_PROB,
    reference_size: int = REFERENCE_SIZE,
) -> TrainingSample:
    """Synthesize one training sample from an annotated image.

    Picks a box uniformly, crops and augments it as the reference (resized to
    the encoder input size), distorts the box into the edit mask (or keeps the
    plain rectangle with `plain_mask_prob`, or always when `distort_masks` is
    off), and blanks the mask region of the source.
    """
    if not annotated.boxes:
        raise ParameterError("annotated image has no boxes")
    target = np.asarray(annotated.image, dtype=np.float32)
    H, W = target.shape[:2]

    box = annotated.boxes[int(rng.integers(0, len(annotated.boxes)))]
    if distort_masks and rng.random() >= plain_mask_prob:
        mask = distort_mask(box, (H, W), rng)
    else:
        mask = box_mask(box, (H, W))

    reference = augment_reference(crop_box(target, box), policy, rng)
    reference = resize_image(reference, (reference_size, reference_size)).astype(np.float32)

    return TrainingSample(
        masked_source=apply_mask_fill(target, mask),
        mask=mask,
        reference=reference,
        target=target,
    )


def build_eval_cases(
    dataset: list[AnnotatedImage],
    rng: np.random.Generator,
    reference_size: int = REFERENCE_SIZE,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """One benchmark case per annotated image: (source, box mask, crop reference).

    The reference is the raw crop of the chosen box, resized to the encoder
    input size (crops can be smaller than a valid standalone image).
    """
    cases = []
    for item in dataset:
        if not item.boxes:
            continue
        box = item.boxes[int(rng.integers(0, len(item.boxes)))]
        mask = box_mask(box, item.image.shape[:2])
        ref = resize_image(crop_box(item.image, box), (reference_size, reference_size))
        cases.append((item.image, mask, ref.astype(np.float32)))
    if not cases:
        raise ParameterError("no annotated images with boxes")
    return cases


# ---------------------------------------------------------------------------
# Procedural toy scenes


def _shape_mask(kind: str, H: int, W: int, cx: float, cy: float, half: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    if kind == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= half**2
    if kind == "square":
        return (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
    # upward triangle: base at cy+half, apex at cy-half
    inside_y = (yy >= cy - half) & (yy <= cy + half)
    frac = (yy - (cy - half)) / (2 * half)  # 0 at apex, 1 at base
    return inside_y & (np.abs(xx - cx) <= frac * half)


def render_scene(size: tuple[int, int], rng: np.random.Generator):
    """One toy scene: textured background plus 1-3 disjoint colored shapes.

    Returns (image, boxes, shape_masks); boxes are tight around each shape's
    rendered pixels.
    """
    H, W = size
    # Muted low-frequency background, |values| <= 0.4.
    coarse = rng.uniform(-0.4, 0.4, size=(4, 4, 3)).astype(np.float32)
    background = resize_image(coarse, (H, W)).astype(np.float32)
    image = background.copy()

    n_shapes = int(rng.integers(1, 4))
    max_half = max(3, min(H, W) // 5)
    boxes: list[BBox] = []
    shape_masks: list[np.ndarray] = []
    occupied = np.zeros((H, W), dtype=bool)

    for _ in range(n_shapes):
        for _attempt in range(40):
            kind = ("circle", "square", "triangle")[int(rng.integers(0, 3))]
            half = int(rng.integers(3, max_half + 1))
            cx = int(rng.integers(half + 1, W - half - 1))
            cy = int(rng.integers(half + 1, H - half - 1))
            mask = _shape_mask(kind, H, W, cx, cy, half)
            if mask.sum() < 16 or (mask & occupied).any():
                continue
            ys, xs = np.nonzero(mask)
            box = BBox(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
            if box.w < 4 or box.h < 4 or box.w * box.h > (H * W) // 2:
                continue
            color = _PALETTE[int(rng.integers(0, len(_PALETTE)))]
            image[mask] = color
            occupied |= mask
            boxes.append(box)
            shape_masks.append(mask.astype(np.uint8))
            break

    return image, boxes, shape_masks


def generate_toy_dataset(
    n: int, size: tuple[int, int], rng: np.random.Generator
) -> list[AnnotatedImage]:
    """Generate n annotated toy scenes, deterministic per generator state."""
    if n < 1:
        raise ParameterError(f"dataset size must be >= 1, got {n}")
    out = []
    for _ in range(n):
        image, boxes, _ = render_scene(size, rng)
        while not boxes:  # extremely unlikely; re-roll rather than emit boxless images
            image, boxes, _ = render_scene(size, rng)
        out.append(AnnotatedImage(image=image, boxes=boxes))
    return out


# ---------------------------------------------------------------------------
# Dataset directory I/O


def save_dataset(dataset: list[AnnotatedImage], out_dir) -> Path:
    out = Path(out_dir)
    (out / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    records = []
    for i, item in enumerate(dataset):
        name = f"img_{i:05d}.png"
        save_image(item.image, out / IMAGES_DIR / name)
        records.append({"file": name, "boxes": [[b.x, b.y, b.w, b.h] for b in item.boxes]})
    with open(out / ANNOTATIONS_FILE, "w") as f:
        json.dump(records, f, indent=1)
    return out


def load_annotations(path) -> list[AnnotatedImage]:
    """Load a dataset directory; drops invalid boxes, collects per-file decode errors."""
    root = Path(path)
    ann_path = root / ANNOTATIONS_FILE
    if not ann_path.is_file():
        raise DatasetError(f"annotation file not found: {ann_path}")
    try:
        with open(ann_path) as f:
            records = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot parse {ann_path}: {exc}") from exc

    out: list[AnnotatedImage] = []
    dropped = 0
    failures: list[str] = []
    for rec in records:
        try:
            image = load_image(root / IMAGES_DIR / rec["file"])
        except Exception as exc:
            failures.append(f"{rec.get('file')}: {exc}")
            continue
        H, W = image.shape[:2]
        boxes = []
        for raw in rec.get("boxes", []):
            box = BBox(*(int(v) for v in raw))
            try:
                boxes.append(box.validate((H, W)))
            except ParameterError:
                dropped += 1
        out.append(AnnotatedImage(image=image, boxes=boxes))

    if dropped:
        log.warning("dropped %d invalid boxes while loading %s", dropped, root)
    if failures:
        log.warning("failed to decode %d image(s): %s", len(failures), "; ".join(failures))
    if not out:
        raise DatasetError(f"no loadable images in {root}")
    return out
