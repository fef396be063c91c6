"""Multi-level aggregation: top-down refinement, bottom-up summation,
per-level score heads, and the final 1x1 fusion of the score maps.

All feature maps here are channel-first (N, D, h, w) with a shared width D;
level i+1 has half the resolution of level i.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .params import ModelParams
from .tensor import Tensor


def add_fusion_params(params: ModelParams, prefix: str, dim: int, levels: int, rng) -> None:
    for i in range(levels - 1):
        params.create_uniform(f"{prefix}.td{i}.w", (dim, 2 * dim, 3, 3), fan_in=18 * dim, rng=rng)
        params.create_zeros(f"{prefix}.td{i}.b", (dim,))
    params.create_uniform(
        f"{prefix}.td{levels - 1}.w", (dim, dim, 3, 3), fan_in=9 * dim, rng=rng
    )
    params.create_zeros(f"{prefix}.td{levels - 1}.b", (dim,))
    for i in range(levels):
        params.create_uniform(f"{prefix}.head{i}.w", (1, dim, 1, 1), fan_in=dim, rng=rng)
        params.create_zeros(f"{prefix}.head{i}.b", (1,))
    params.create_uniform(f"{prefix}.fuse.w", (1, levels, 1, 1), fan_in=levels, rng=rng)
    params.create_zeros(f"{prefix}.fuse.b", (1,))


def _check_pyramid(levels):
    for a, b in zip(levels, levels[1:]):
        if a.shape[2] != 2 * b.shape[2] or a.shape[3] != 2 * b.shape[3]:
            raise DimensionError(
                f"adjacent levels must differ by 2x resolution, got {a.shape} -> {b.shape}"
            )
        if a.shape[1] != b.shape[1]:
            raise DimensionError("pyramid widths must match across levels")


def top_down(z1, params: ModelParams, prefix: str):
    """Refine each level with its upsampled coarser neighbor.

    Deepest level: plain 3x3 conv. Other levels: concat with the 2x
    upsampled deeper refinement input, then 3x3 conv back to width D.
    """
    _check_pyramid(z1)
    n_levels = len(z1)
    z2 = [None] * n_levels
    last = n_levels - 1
    z2[last] = T.conv2d(
        z1[last], params[f"{prefix}.td{last}.w"], params[f"{prefix}.td{last}.b"], padding=1
    )
    for i in range(last - 1, -1, -1):
        up = T.bilinear_resize(z1[i + 1], z1[i].shape[2], z1[i].shape[3])
        cat = T.concat([z1[i], up], axis=1)
        z2[i] = T.conv2d(cat, params[f"{prefix}.td{i}.w"], params[f"{prefix}.td{i}.b"], padding=1)
    return z2


def bottom_up(z2):
    """Lateral summation downward: z3[0] = z2[0]; z3[i] = z2[i] + pool(z3[i-1])."""
    _check_pyramid(z2)
    z3 = [z2[0]]
    for i in range(1, len(z2)):
        z3.append(T.add(z2[i], T.avg_pool2d(z3[i - 1], 2)))
    return z3


def predict_and_fuse(z3, params: ModelParams, prefix: str, full_res):
    """Per-level 1x1 heads upsampled to full resolution, then 1x1 fusion."""
    full_h, full_w = full_res
    level_maps = []
    for i, z in enumerate(z3):
        score = T.conv2d(z, params[f"{prefix}.head{i}.w"], params[f"{prefix}.head{i}.b"])
        level_maps.append(T.bilinear_resize(score, full_h, full_w))
    stacked = T.concat(level_maps, axis=1)
    fused = T.conv2d(stacked, params[f"{prefix}.fuse.w"], params[f"{prefix}.fuse.b"])
    return level_maps, fused
