"""Image I/O and conversions.

Images are float32 arrays of shape (H, W, 3) with values in [-1, 1].
Binary masks are uint8 arrays of shape (H, W) with values in {0, 1}.
"""

from __future__ import annotations

import base64
import binascii
import io

import numpy as np
from PIL import Image as PILImage

from .errors import ParameterError, ShapeError

MASK_THRESHOLD = 128  # 8-bit grayscale >= 128 counts as masked


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to 8-bit values with round-half-away behavior of np.round."""
    return np.clip(np.round((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 127.5) - 1.0


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise ParameterError(f"{name} must be at least 8x8, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ParameterError(f"{name} contains non-finite values")
    return img


def load_image(path) -> np.ndarray:
    """Decode an 8-bit image file to a float32 RGB array in [-1, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def save_image(img: np.ndarray, path) -> None:
    PILImage.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def png_bytes(arr_uint8: np.ndarray, mode: str = "RGB") -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(arr_uint8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes, field: str = "image") -> np.ndarray:
    """Decode PNG bytes to a uint8 array (RGB or grayscale as stored)."""
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("L", "I;16", "1"):
                return np.asarray(im.convert("L"))
            return np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise ParameterError(f"{field}: cannot decode image data ({exc})") from exc


def encode_base64_png(arr_uint8: np.ndarray, mode: str = "RGB") -> str:
    return base64.b64encode(png_bytes(arr_uint8, mode=mode)).decode("ascii")


def decode_base64_png(data: str, field: str = "image") -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ParameterError(f"{field}: invalid base64 data") from exc
    return decode_png(raw, field=field)


def gray_to_mask(gray: np.ndarray) -> np.ndarray:
    """Threshold an 8-bit grayscale image into a {0,1} mask."""
    if gray.ndim == 3:
        gray = gray[..., 0]
    return (gray >= MASK_THRESHOLD).astype(np.uint8)


def mask_to_gray(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask, dtype=np.uint8) * 255).astype(np.uint8)


def resize_image(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, C) or (H, W) array to (height, width).

    Identity-size inputs are returned as an untouched copy so that
    no interpolation noise is introduced.
    """
    out_h, out_w = size
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"invalid target size {size}")
    img = np.asarray(img)
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    # Pixel-center alignment: output center j maps to (j + 0.5) * scale - 0.5.
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    g = img.astype(np.float64)
    top = g[y0][:, x0] * (1 - wx) + g[y0][:, x1] * wx
    bot = g[y1][:, x0] * (1 - wx) + g[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float32)
