"""Decoder modules: deep-supervision gating and double-attention blocks.

The deep-supervision module predicts an early single-channel score map from
the high-resolution patch features, supervises it directly, and re-uses its
sigmoid as a broadcast gate over a transformed copy of the features.

The double-attention block splits channels in half and runs plain-window
attention on one half and shifted, masked window attention on the other in
the same block, so local and cross-window context are mixed in one step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import (
    _windowed_attention_map,
    add_attention_params,
    add_mlp_params,
    add_norm_params,
    mlp,
    stage_window,
)
from .errors import DimensionError
from .params import ModelParams
from .tensor import Tensor


@dataclass
class DsOutput:
    """Gated features plus the directly supervised score map."""

    features: Tensor       # (N, h, w, C), same shape as the input
    predicted_map: Tensor  # (N, 1, H, W) logits
    attention_map: Tensor  # (N, 1, H, W) = sigmoid(predicted_map)


def add_ds_params(params: ModelParams, prefix: str, dim: int, rng) -> None:
    params.create_uniform(f"{prefix}.conv3.w", (dim, dim, 3, 3), fan_in=9 * dim, rng=rng)
    params.create_zeros(f"{prefix}.conv3.b", (dim,))
    params.create_uniform(f"{prefix}.score.w", (1, dim, 1, 1), fan_in=dim, rng=rng)
    params.create_zeros(f"{prefix}.score.b", (1,))
    params.create_uniform(f"{prefix}.trans.w", (dim, dim, 1, 1), fan_in=dim, rng=rng)
    params.create_zeros(f"{prefix}.trans.b", (dim,))


def ds_forward(f_in: Tensor, params: ModelParams, prefix: str, full_res) -> DsOutput:
    """Deep supervision on channel-last patch features.

    predicted = upsample(1x1(3x3(F))); gate = sigmoid(predicted);
    out = F + downsample(gate) * 1x1(F), broadcast over channels.
    """
    n, h, w, c = f_in.shape
    full_h, full_w = full_res
    if full_h % h or full_w % w:
        raise DimensionError(
            f"full resolution {full_h}x{full_w} is not a multiple of feature map {h}x{w}"
        )
    x = T.transpose(f_in, (0, 3, 1, 2))  # to NCHW for the convolutions
    mid = T.conv2d(x, params[f"{prefix}.conv3.w"], params[f"{prefix}.conv3.b"], padding=1)
    score = T.conv2d(mid, params[f"{prefix}.score.w"], params[f"{prefix}.score.b"])
    predicted = T.bilinear_resize(score, full_h, full_w)
    attention = T.sigmoid(predicted)
    transformed = T.conv2d(x, params[f"{prefix}.trans.w"], params[f"{prefix}.trans.b"])
    gate = T.avg_pool2d(attention, full_h // h)
    out = T.add(x, T.mul(gate, transformed))
    return DsOutput(T.transpose(out, (0, 2, 3, 1)), predicted, attention)


def add_da_params(params: ModelParams, prefix: str, dim: int, heads: int, window: int, mlp_ratio: float, rng) -> None:
    """Two disjoint half-width attention branches wrapped as one block."""
    if dim % 2:
        raise DimensionError(f"double attention needs an even width, got {dim}")
    half = dim // 2
    add_norm_params(params, f"{prefix}.ln1", dim)
    add_attention_params(params, f"{prefix}.local", half, heads, window, rng)
    add_attention_params(params, f"{prefix}.shifted", half, heads, window, rng)
    add_norm_params(params, f"{prefix}.ln2", dim)
    add_mlp_params(params, f"{prefix}.mlp", dim, int(dim * mlp_ratio), rng)


def double_attention(x: Tensor, params: ModelParams, prefix: str, heads: int, window: int) -> Tensor:
    """Channel-split attention core: plain windows | shifted windows, concat."""
    n, h, w, c = x.shape
    if c % 2:
        raise DimensionError(f"double attention needs an even width, got {c}")
    half = c // 2
    m, shift = stage_window(min(h, w), window)
    first = T.slice_axis(x, 3, 0, half)
    second = T.slice_axis(x, 3, half, c)
    local = _windowed_attention_map(first, params, f"{prefix}.local", heads, m, 0)
    shifted = _windowed_attention_map(second, params, f"{prefix}.shifted", heads, m, shift)
    return T.concat([local, shifted], axis=3)


def double_attention_block(x: Tensor, params: ModelParams, prefix: str, heads: int, window: int) -> Tensor:
    """Pre-norm residual wrapper around the split-attention core plus MLP."""
    ln = T.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = T.add(x, double_attention(ln, params, prefix, heads, window))
    ln = T.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return T.add(x, mlp(ln, params, f"{prefix}.mlp"))
