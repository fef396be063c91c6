"""Synthetic shadow scenes and on-disk dataset handling.

Each scene is a bright background, one occluding object polygon, and a
contiguous cast-shadow region (the darkened background). Only the shadow is
marked in the mask. Three categories control the object/shadow relation:

* ``non-adjacent``      - a gap separates object and shadow components
* ``normal-adjacent``   - shadow touches the object; object clearly brighter
* ``ambiguous-adjacent``- shadow touches the object; object as dark or darker
                          than the shadow, so luminance alone cannot split them
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import ParameterError

CATEGORIES = ("non-adjacent", "normal-adjacent", "ambiguous-adjacent")

NOISE_SIGMA = 0.02
MIN_REGION_PIXELS = 30


@dataclass
class ShadowSample:
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    mask: np.ndarray   # (1, H, W) float64 in {0, 1}; shadow pixels only
    category: str


def _polygon_mask(size: int, cx: float, cy: float, radii, angles) -> np.ndarray:
    pts = [
        (cx + r * np.cos(a), cy + r * np.sin(a))
        for r, a in zip(radii, angles)
    ]
    img = Image.new("L", (size, size), 0)
    ImageDraw.Draw(img).polygon([(float(x), float(y)) for x, y in pts], fill=255)
    return np.asarray(img) > 0


def _random_blob(rng, size: int, center, scale) -> np.ndarray:
    n_pts = int(rng.integers(5, 9))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_pts))
    radii = scale * rng.uniform(0.6, 1.0, size=n_pts) * size
    return _polygon_mask(size, center[0], center[1], radii, angles)


def synth_sample(seed: int, category: str, img_size: int = 64) -> ShadowSample:
    """Render one deterministic scene for the given category."""
    return synth_scene(seed, category, img_size)[0]


def synth_scene(seed: int, category: str, img_size: int = 64):
    """Like :func:`synth_sample` but also returns the object and shadow regions."""
    if category not in CATEGORIES:
        raise ParameterError(f"unknown category {category!r}")
    rng = np.random.default_rng(seed)
    s = img_size
    for _ in range(64):  # rejection loop; rng stream keeps determinism
        bg_lum = rng.uniform(0.72, 0.92)
        bg_rgb = np.clip(bg_lum + rng.uniform(-0.04, 0.04, size=3), 0.0, 1.0)

        cx = rng.uniform(0.30, 0.70) * s
        cy = rng.uniform(0.30, 0.70) * s
        obj_scale = rng.uniform(0.13, 0.22)
        obj = _random_blob(rng, s, (cx, cy), obj_scale)

        # shadow: sheared/offset copy of the object silhouette
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.55, 1.05) * obj_scale * s * 2
        dx, dy = dist * np.cos(ang), dist * np.sin(ang)
        stretch = rng.uniform(1.0, 1.5)
        n_pts = int(rng.integers(5, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_pts))
        radii = obj_scale * stretch * rng.uniform(0.7, 1.1, size=n_pts) * s
        shadow_poly = _polygon_mask(s, cx + dx, cy + dy, radii, angles)

        if category == "non-adjacent":
            keepout = ndimage.binary_dilation(obj, np.ones((5, 5)))
        else:
            keepout = obj
        shadow = shadow_poly & ~keepout

        if shadow.sum() < MIN_REGION_PIXELS or obj.sum() < MIN_REGION_PIXELS:
            continue
        touching = (
            ndimage.binary_dilation(
                obj, np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
            )
            & shadow
        ).any()
        if category == "non-adjacent":
            if touching:
                continue
        elif not touching:
            continue
        break
    else:
        raise ParameterError(f"could not render a valid {category} scene for seed {seed}")

    shade = rng.uniform(0.38, 0.60)
    shadow_lum = bg_lum * shade
    if category == "ambiguous-adjacent":
        obj_lum = rng.uniform(max(0.02, shadow_lum - 0.22), shadow_lum - 0.04)
        tint = rng.uniform(-0.03, 0.03, size=3)
    else:
        obj_lum = rng.uniform(shadow_lum + 0.18, min(0.95, shadow_lum + 0.50))
        tint = rng.uniform(-0.15, 0.15, size=3)
    obj_rgb = np.clip(obj_lum + tint, 0.0, 1.0)

    image = np.empty((3, s, s))
    for c in range(3):
        chan = np.full((s, s), bg_rgb[c])
        chan[shadow] = bg_rgb[c] * shade
        chan[obj] = obj_rgb[c]
        image[c] = chan
    image = np.clip(image + rng.normal(0.0, NOISE_SIGMA, size=image.shape), 0.0, 1.0)

    mask = shadow.astype(np.float64)[None]
    return ShadowSample(image, mask, category), obj, shadow


def synth_dataset(seed: int, n: int, img_size: int = 64, categories=CATEGORIES) -> list:
    """n deterministic samples cycling through ``categories``."""
    root = np.random.SeedSequence(seed)
    child_seeds = root.generate_state(n)
    return [
        synth_sample(int(child_seeds[i]), categories[i % len(categories)], img_size)
        for i in range(n)
    ]


def hflip(sample: ShadowSample) -> ShadowSample:
    """Mirror image and mask jointly; applying twice restores the sample."""
    return ShadowSample(
        np.ascontiguousarray(sample.image[:, :, ::-1]),
        np.ascontiguousarray(sample.mask[:, :, ::-1]),
        sample.category,
    )


# ---------------------------------------------------------------------------
# Directory datasets: images/*.png + masks/*.png with matching stems.
# A stem suffix like 0007_ambiguous-adjacent carries the category; stems
# without a recognized suffix load as category "unknown".


def category_from_stem(stem: str) -> str:
    for cat in CATEGORIES:
        if stem.endswith(cat):
            return cat
    return "unknown"


def save_dataset(samples, out_dir) -> None:
    from .imageio import save_image, save_mask

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        stem = f"{i:04d}_{sample.category}"
        save_image(out / "images" / f"{stem}.png", sample.image)
        save_mask(out / "masks" / f"{stem}.png", sample.mask)


def load_dataset(root) -> list:
    from .imageio import load_image, load_mask

    root = Path(root)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise ParameterError(f"dataset at {root} needs images/ and masks/ directories")
    samples = []
    for img_path in sorted(image_dir.glob("*.png")):
        mask_path = mask_dir / img_path.name
        if not mask_path.exists():
            mask_path = mask_dir / (img_path.stem + ".pgm")
        if not mask_path.exists():
            raise ParameterError(f"no mask found for {img_path.name}")
        samples.append(
            ShadowSample(
                load_image(img_path), load_mask(mask_path), category_from_stem(img_path.stem)
            )
        )
    if not samples:
        raise ParameterError(f"no image/mask pairs under {root}")
    return samples
