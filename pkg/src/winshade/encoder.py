"""Hierarchical shifted-window attention encoder.

Feature maps are channel-last (N, H, W, C) throughout. Attention runs on
non-overlapping MxM windows; every second block first cyclically shifts the
map by half a window so neighboring windows exchange information, with an
additive mask keeping attention inside each pre-shift region.

When a stage's resolution is not larger than the window, the window is
clamped to the resolution and the shift is dropped (a single window already
sees everything, and a shift would only mask interactions away).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .params import ModelParams
from .tensor import Tensor

MASK_VALUE = -1e4  # large-but-finite so gradients stay finite


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry and widths of the encoder pyramid."""

    img_size: int = 64
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple = (2, 2, 2, 2)
    heads: tuple = (2, 4, 8, 16)
    window: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.img_size % self.patch_size:
            raise ParameterError("img_size must be divisible by patch_size")
        if len(self.depths) != len(self.heads):
            raise ParameterError("depths and heads must have equal length")
        for d in self.depths:
            if d <= 0 or d % 2:
                raise ParameterError("stage depths must be positive and even")
        for s in range(len(self.depths)):
            res = self.stage_res(s)
            if res < 1:
                raise ParameterError("too many stages for this image size")
            if self.stage_dim(s) % self.heads[s]:
                raise ParameterError(f"stage {s} width not divisible by its head count")
            m, _ = stage_window(res, self.window)
            if res % m:
                raise ParameterError(
                    f"stage {s} resolution {res} not divisible by window {m}"
                )

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_res(self, s: int) -> int:
        return self.img_size // self.patch_size // (1 << s)

    def stage_dim(self, s: int) -> int:
        return self.embed_dim * (1 << s)


def stage_window(res: int, window: int):
    """Effective (window, shift) at a given resolution.

    The shift is half a window; once a single window covers the whole map
    there is nothing to shift across, so the shift collapses to zero.
    """
    if res <= window:
        return res, 0
    return window, window // 2


@dataclass
class WindowGrid:
    """Flattened MxM windows of a feature map plus their origin layout."""

    windows: Tensor  # (N * nW, M*M, C)
    batch: int
    height: int
    width: int
    window: int
    shift: tuple = (0, 0)

    @property
    def num_windows(self) -> int:
        return (self.height // self.window) * (self.width // self.window)


def window_partition(x: Tensor, m: int, shift=(0, 0)) -> WindowGrid:
    """Split (N, H, W, C) into non-overlapping MxM windows."""
    n, h, w, c = x.shape
    if h % m or w % m:
        raise DimensionError(f"map {h}x{w} not divisible by window {m}")
    y = T.reshape(x, (n, h // m, m, w // m, m, c))
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))
    y = T.reshape(y, (n * (h // m) * (w // m), m * m, c))
    return WindowGrid(y, n, h, w, m, shift)


def window_reverse(g: WindowGrid) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    n, h, w, m = g.batch, g.height, g.width, g.window
    c = g.windows.shape[-1]
    y = T.reshape(g.windows, (n, h // m, w // m, m, m, c))
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))
    return T.reshape(y, (n, h, w, c))


def cyclic_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    """Toroidal translation: out[y][x] = in[(y+dy) mod H][(x+dx) mod W]."""
    return T.roll2(x, dy, dx, axes=(1, 2))


@lru_cache(maxsize=128)
def _region_labels(h: int, w: int, m: int, shift: int) -> np.ndarray:
    img = np.zeros((h, w))
    cnt = 0
    for hs in (slice(0, -m), slice(-m, -shift), slice(-shift, None)):
        for ws in (slice(0, -m), slice(-m, -shift), slice(-shift, None)):
            img[hs, ws] = cnt
            cnt += 1
    return img


@lru_cache(maxsize=128)
def shift_attention_mask(h: int, w: int, m: int, shift: int) -> np.ndarray:
    """(nW, M*M, M*M) additive mask for shifted-window attention.

    Entry (w, i, j) is 0 when tokens i and j of window w come from the same
    contiguous pre-shift region and MASK_VALUE otherwise.
    """
    if shift >= m:
        raise ParameterError(f"shift {shift} must be smaller than window {m}")
    n_windows = (h // m) * (w // m)
    if shift == 0:
        return np.zeros((n_windows, m * m, m * m))
    labels = _region_labels(h, w, m, shift)
    wins = (
        labels.reshape(h // m, m, w // m, m)
        .transpose(0, 2, 1, 3)
        .reshape(n_windows, m * m)
    )
    diff = wins[:, :, None] - wins[:, None, :]
    return np.where(diff != 0, MASK_VALUE, 0.0)


@lru_cache(maxsize=32)
def relative_position_index(m: int) -> np.ndarray:
    """(M*M, M*M) index into the (2M-1)^2 relative-offset bias table."""
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # (2, L, L)
    rel = rel.transpose(1, 2, 0) + (m - 1)
    return (rel[..., 0] * (2 * m - 1) + rel[..., 1]).astype(np.int64)


# ---------------------------------------------------------------------------
# Parameter builders


def add_attention_params(params: ModelParams, prefix: str, dim: int, heads: int, window: int, rng) -> None:
    params.create_uniform(f"{prefix}.qkv.w", (dim, 3 * dim), fan_in=dim, rng=rng)
    params.create_zeros(f"{prefix}.qkv.b", (3 * dim,))
    params.create_uniform(f"{prefix}.proj.w", (dim, dim), fan_in=dim, rng=rng)
    params.create_zeros(f"{prefix}.proj.b", (dim,))
    params.create_zeros(f"{prefix}.rpb", ((2 * window - 1) ** 2, heads))


def add_mlp_params(params: ModelParams, prefix: str, dim: int, hidden: int, rng) -> None:
    params.create_uniform(f"{prefix}.fc1.w", (dim, hidden), fan_in=dim, rng=rng)
    params.create_zeros(f"{prefix}.fc1.b", (hidden,))
    params.create_uniform(f"{prefix}.fc2.w", (hidden, dim), fan_in=hidden, rng=rng)
    params.create_zeros(f"{prefix}.fc2.b", (dim,))


def add_norm_params(params: ModelParams, prefix: str, dim: int) -> None:
    params.create_ones(f"{prefix}.g", (dim,))
    params.create_zeros(f"{prefix}.b", (dim,))


def add_block_params(params: ModelParams, prefix: str, dim: int, heads: int, window: int, mlp_ratio: float, rng) -> None:
    add_norm_params(params, f"{prefix}.ln1", dim)
    add_attention_params(params, f"{prefix}.attn", dim, heads, window, rng)
    add_norm_params(params, f"{prefix}.ln2", dim)
    add_mlp_params(params, f"{prefix}.mlp", dim, int(dim * mlp_ratio), rng)


def build_encoder_params(params: ModelParams, cfg: EncoderConfig, rng, prefix: str = "encoder") -> None:
    p = cfg.patch_size
    in_dim = 3 * p * p
    params.create_uniform(f"{prefix}.patch.w", (in_dim, cfg.embed_dim), fan_in=in_dim, rng=rng)
    params.create_zeros(f"{prefix}.patch.b", (cfg.embed_dim,))
    add_norm_params(params, f"{prefix}.patch.ln", cfg.embed_dim)
    for s in range(cfg.num_stages):
        dim = cfg.stage_dim(s)
        m, _ = stage_window(cfg.stage_res(s), cfg.window)
        for b in range(cfg.depths[s]):
            add_block_params(
                params, f"{prefix}.s{s}.b{b}", dim, cfg.heads[s], m, cfg.mlp_ratio, rng
            )
        if s + 1 < cfg.num_stages:
            add_norm_params(params, f"{prefix}.m{s}.ln", 4 * dim)
            params.create_uniform(f"{prefix}.m{s}.w", (4 * dim, 2 * dim), fan_in=4 * dim, rng=rng)
            params.create_zeros(f"{prefix}.m{s}.b", (2 * dim,))


# ---------------------------------------------------------------------------
# Forward pieces


def _norm(x, params, prefix):
    return T.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def window_attention(g: WindowGrid, params: ModelParams, prefix: str, heads: int, mask: np.ndarray | None = None) -> WindowGrid:
    """Multi-head self-attention inside each window of the grid.

    Scores get a learnable relative-position bias; ``mask`` (nW, L, L) is
    added per window to suppress cross-region pairs under a shifted grid.
    """
    x = g.windows
    b_, l, c = x.shape
    if c % heads:
        raise DimensionError(f"width {c} not divisible by {heads} heads")
    d = c // heads
    qkv = T.add(T.matmul(x, params[f"{prefix}.qkv.w"]), params[f"{prefix}.qkv.b"])
    qkv = T.reshape(qkv, (b_, l, 3, heads, d))
    qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B_, heads, L, d)
    q = T.reshape(T.slice_axis(qkv, 0, 0, 1), (b_, heads, l, d))
    k = T.reshape(T.slice_axis(qkv, 0, 1, 2), (b_, heads, l, d))
    v = T.reshape(T.slice_axis(qkv, 0, 2, 3), (b_, heads, l, d))

    scores = T.matmul(T.scale(q, 1.0 / np.sqrt(d)), T.transpose(k, (0, 1, 3, 2)))
    bias = T.embedding_lookup(params[f"{prefix}.rpb"], relative_position_index(g.window))
    bias = T.reshape(T.transpose(bias, (2, 0, 1)), (1, heads, l, l))
    scores = T.add(scores, bias)
    if mask is not None:
        if mask.shape != (g.num_windows, l, l):
            raise DimensionError(
                f"mask shape {mask.shape} does not match windows ({g.num_windows}, {l}, {l})"
            )
        scores = T.reshape(scores, (g.batch, g.num_windows, heads, l, l))
        scores = T.add(scores, Tensor(mask[:, None, :, :]))
        scores = T.reshape(scores, (b_, heads, l, l))
    attn = T.softmax(scores)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b_, l, c))
    out = T.add(T.matmul(ctx, params[f"{prefix}.proj.w"]), params[f"{prefix}.proj.b"])
    return WindowGrid(out, g.batch, g.height, g.width, g.window, g.shift)


def mlp(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = T.gelu(T.add(T.matmul(x, params[f"{prefix}.fc1.w"]), params[f"{prefix}.fc1.b"]))
    return T.add(T.matmul(h, params[f"{prefix}.fc2.w"]), params[f"{prefix}.fc2.b"])


def _windowed_attention_map(x: Tensor, params, prefix, heads, m, shift) -> Tensor:
    """Partition -> attend -> reverse, with optional cyclic shift and mask."""
    n, h, w, c = x.shape
    if shift:
        x = cyclic_shift(x, shift, shift)
        mask = shift_attention_mask(h, w, m, shift)
    else:
        mask = None
    g = window_partition(x, m, (shift, shift))
    g = window_attention(g, params, prefix, heads, mask)
    out = window_reverse(g)
    if shift:
        out = cyclic_shift(out, -shift, -shift)
    return out


def transformer_block(x: Tensor, params: ModelParams, prefix: str, heads: int, m: int, shift: int) -> Tensor:
    """Pre-norm attention and MLP sub-layers, each with a residual path."""
    a = _windowed_attention_map(_norm(x, params, f"{prefix}.ln1"), params, f"{prefix}.attn", heads, m, shift)
    x = T.add(x, a)
    return T.add(x, mlp(_norm(x, params, f"{prefix}.ln2"), params, f"{prefix}.mlp"))


def window_block_pair(x: Tensor, params: ModelParams, prefix: str, heads: int, window: int) -> Tensor:
    """A plain-window block followed by a shifted-window block."""
    n, h, w, c = x.shape
    m, shift = stage_window(min(h, w), window)
    x = transformer_block(x, params, f"{prefix}.b0", heads, m, 0)
    return transformer_block(x, params, f"{prefix}.b1", heads, m, shift)


def run_stage(x: Tensor, params: ModelParams, prefix: str, depth: int, heads: int, window: int) -> Tensor:
    n, h, w, c = x.shape
    m, shift = stage_window(min(h, w), window)
    for b in range(depth):
        x = transformer_block(x, params, f"{prefix}.b{b}", heads, m, shift if b % 2 else 0)
    return x


def patch_embed(image: Tensor, params: ModelParams, cfg: EncoderConfig, prefix: str = "encoder") -> Tensor:
    """(N, 3, H, W) -> (N, H/p, W/p, C): linear embed of each patch + norm."""
    n, c, h, w = image.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
    x = T.reshape(image, (n, c, h // p, p, w // p, p))
    x = T.transpose(x, (0, 2, 4, 3, 5, 1))  # (N, h', w', p, p, 3)
    x = T.reshape(x, (n, h // p, w // p, p * p * c))
    x = T.add(T.matmul(x, params[f"{prefix}.patch.w"]), params[f"{prefix}.patch.b"])
    return _norm(x, params, f"{prefix}.patch.ln")


def patch_merge(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """Concatenate 2x2 neighborhoods, norm, and reduce 4C -> 2C."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"cannot merge odd map {h}x{w}")
    y = T.reshape(x, (n, h // 2, 2, w // 2, 2, c))
    y = T.transpose(y, (0, 1, 3, 2, 4, 5))
    y = T.reshape(y, (n, h // 2, w // 2, 4 * c))
    y = _norm(y, params, f"{prefix}.ln")
    return T.add(T.matmul(y, params[f"{prefix}.w"]), params[f"{prefix}.b"])


@dataclass
class FeaturePyramid:
    """Patch-embedding features plus the per-stage encoder outputs."""

    f_patch: Tensor  # (N, H/4, W/4, C)
    stages: tuple    # stage s: (N, H/(4*2^s), W/(4*2^s), C*2^s)


def encode(image: Tensor, params: ModelParams, cfg: EncoderConfig, prefix: str = "encoder") -> FeaturePyramid:
    f_patch = patch_embed(image, params, cfg, prefix)
    stages = []
    x = f_patch
    for s in range(cfg.num_stages):
        x = run_stage(x, params, f"{prefix}.s{s}", cfg.depths[s], cfg.heads[s], cfg.window)
        stages.append(x)
        if s + 1 < cfg.num_stages:
            x = patch_merge(x, params, f"{prefix}.m{s}")
    return FeaturePyramid(f_patch, tuple(stages))
