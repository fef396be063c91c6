"""PNG/PGM image and mask I/O.

Images load as (3, H, W) float64 in [0, 1]. Masks are single channel;
loading binarizes at 128 (value >= 128 -> shadow) and a saved binary mask
round-trips exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageIOError

MAX_PIXELS = 32_000_000


def _open(path):
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    if img.width * img.height > MAX_PIXELS:
        raise ImageIOError(f"image {path} is oversized ({img.width}x{img.height})")
    return img


def load_image(path) -> np.ndarray:
    img = _open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    arr = (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path))


def load_mask(path) -> np.ndarray:
    img = _open(path).convert("L")
    arr = np.asarray(img)
    return (arr >= 128).astype(np.float64)[None]


def save_mask(path, mask: np.ndarray) -> None:
    arr = np.asarray(mask)
    if arr.ndim == 3:
        arr = arr[0]
    data = np.where(arr > 0.5, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path))


def save_score_map(path, logits: np.ndarray) -> None:
    """Grayscale visualization of a sigmoid-squashed logit map."""
    arr = np.asarray(logits)
    if arr.ndim == 3:
        arr = arr[0]
    prob = 1.0 / (1.0 + np.exp(-np.clip(arr, -60, 60)))
    Image.fromarray((prob * 255.0).round().astype(np.uint8), mode="L").save(Path(path))
