"""Image loading and the documented resize policy.

Inputs of any aspect ratio are center-cropped to a square, then resized
with bicubic interpolation to the backbone's input size. Pixels come
out as float32 in [0, 1], channels last.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError


def load_rgb(path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except FileNotFoundError:
        raise DecodeError(f"image file not found: {path}")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image: {exc}")


def center_crop_resize(img: Image.Image, size: int) -> np.ndarray:
    """Square center crop, bicubic resize to (size, size), float32 [0, 1]."""
    if size < 1:
        raise ValueError(f"size must be positive, got {size}")
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    cropped = img.crop((left, top, left + side, top + side))
    resized = cropped.resize((size, size), Image.Resampling.BICUBIC)
    return np.asarray(resized, dtype=np.float32) / 255.0


def load_batch(paths, size: int) -> np.ndarray:
    """Stack decoded images into one (n, size, size, 3) float32 batch."""
    if not paths:
        return np.zeros((0, size, size, 3), dtype=np.float32)
    return np.stack([center_crop_resize(load_rgb(p), size) for p in paths])
