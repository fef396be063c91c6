"""Full detector: encoder pyramid -> decoder modules -> fused score maps.

The forward pass is organized as an explicit pipeline of named steps
(patch embedding, one step per encoder stage, then decode/fuse/loss).
``forward`` simply runs every step; the gradient-check harness reuses the
same steps to re-evaluate only the suffix that a perturbed parameter can
influence.

Ablation switches change the wiring only; the parameter set is always
created in full so variants share identical initial weights for the parts
they have in common.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .decoder import add_da_params, add_ds_params, double_attention_block, ds_forward
from .encoder import (
    EncoderConfig,
    FeaturePyramid,
    add_norm_params,
    build_encoder_params,
    patch_embed,
    patch_merge,
    run_stage,
)
from .errors import ParameterError
from .fusion import add_fusion_params, bottom_up, predict_and_fuse, top_down
from .params import ModelParams
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_dim: int = 32
    da_heads: int = 2
    use_ds: bool = True
    use_da: bool = True
    use_mla: bool = True

    def with_ablations(self, ablate) -> "ModelConfig":
        """Return a copy with the named modules ('ds', 'da', 'mla') disabled."""
        unknown = set(ablate) - {"ds", "da", "mla"}
        if unknown:
            raise ParameterError(f"unknown ablation target(s): {sorted(unknown)}")
        return replace(
            self,
            use_ds=self.use_ds and "ds" not in ablate,
            use_da=self.use_da and "da" not in ablate,
            use_mla=self.use_mla and "mla" not in ablate,
        )


def build_model_params(cfg: ModelConfig, seed: int) -> ModelParams:
    params = ModelParams()
    rng = np.random.default_rng(seed)
    enc = cfg.encoder
    build_encoder_params(params, enc, rng)
    add_ds_params(params, "ds", enc.embed_dim, rng)
    d = cfg.decoder_dim
    params.create_uniform("proj0.w", (enc.embed_dim, d), fan_in=enc.embed_dim, rng=rng)
    params.create_zeros("proj0.b", (d,))
    for s in range(1, enc.num_stages):
        dim = enc.stage_dim(s)
        params.create_uniform(f"proj{s}.w", (dim, d), fan_in=dim, rng=rng)
        params.create_zeros(f"proj{s}.b", (d,))
        add_da_params(params, f"da{s}", d, cfg.da_heads, enc.window, enc.mlp_ratio, rng)
    add_fusion_params(params, "mla", d, enc.num_stages, rng)
    return params


def zero_residual_parameters(params: ModelParams) -> list[str]:
    """Zero all residual-branch output projections, heads, and DS convs.

    Afterwards every encoder/decoder block is an exact identity and every
    emitted score map is exactly zero.
    """
    suffixes = (".proj.w", ".proj.b", ".fc2.w", ".fc2.b")
    zeroed = []
    for name, t in params.items():
        if (
            name.endswith(suffixes)
            or name.startswith("ds.")
            or ".head" in name
            or ".fuse." in name
        ):
            t.data = np.zeros_like(t.data)
            zeroed.append(name)
    return zeroed


class ShadowNet:
    """Stateful wrapper tying a config to its parameter store."""

    def __init__(self, cfg: ModelConfig, params: ModelParams):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int) -> "ShadowNet":
        return cls(cfg, build_model_params(cfg, seed))

    # -- pipeline steps ------------------------------------------------

    @property
    def num_steps(self) -> int:
        return self.cfg.encoder.num_stages + 2  # patch + stages + head

    def step_of_param(self, name: str) -> int:
        """Index of the earliest pipeline step that reads this parameter."""
        if name not in self.params:
            raise ParameterError(f"unknown parameter {name!r}")
        if name.startswith("encoder.patch."):
            return 0
        if name.startswith("encoder.s"):
            return int(name.split(".")[1][1:]) + 1
        if name.startswith("encoder.m"):
            return int(name.split(".")[1][1:]) + 2
        return self.num_steps - 1

    def _run_step(self, k: int, state: dict) -> None:
        enc = self.cfg.encoder
        n_stages = enc.num_stages
        if k == 0:
            state["f_patch"] = patch_embed(state["image"], self.params, enc)
        elif k <= n_stages:
            s = k - 1
            x = state["f_patch"] if s == 0 else state[f"o{s - 1}"]
            if s > 0:
                x = patch_merge(x, self.params, f"encoder.m{s - 1}")
            state[f"o{s}"] = run_stage(
                x, self.params, f"encoder.s{s}", enc.depths[s], enc.heads[s], enc.window
            )
        else:
            pyr = FeaturePyramid(
                state["f_patch"], tuple(state[f"o{s}"] for s in range(n_stages))
            )
            state["outputs"] = self._decode_and_fuse(pyr)

    def _decode_and_fuse(self, pyr: FeaturePyramid) -> dict:
        cfg = self.cfg
        enc = cfg.encoder
        full_res = (enc.img_size, enc.img_size)

        feats = pyr.f_patch
        ds_map = None
        if cfg.use_ds:
            ds_out = ds_forward(feats, self.params, "ds", full_res)
            feats = ds_out.features
            ds_map = ds_out.predicted_map
        levels = [T.add(T.matmul(feats, self.params["proj0.w"]), self.params["proj0.b"])]
        for s in range(1, enc.num_stages):
            f = T.add(
                T.matmul(pyr.stages[s], self.params[f"proj{s}.w"]), self.params[f"proj{s}.b"]
            )
            if cfg.use_da:
                f = double_attention_block(f, self.params, f"da{s}", cfg.da_heads, enc.window)
            levels.append(f)
        z1 = [T.transpose(f, (0, 3, 1, 2)) for f in levels]

        if cfg.use_mla:
            z3 = bottom_up(top_down(z1, self.params, "mla"))
        else:
            z3 = z1
        level_maps, fused = predict_and_fuse(z3, self.params, "mla", full_res)
        return {"ds_map": ds_map, "level_maps": level_maps, "fused_map": fused}

    # -- public entry points -------------------------------------------

    def forward(self, images) -> dict:
        """images: (N, 3, H, W) array or Tensor -> dict of score-map logits."""
        state = {"image": images if isinstance(images, Tensor) else Tensor(images)}
        for k in range(self.num_steps):
            self._run_step(k, state)
        return state["outputs"]

    def pipeline_cache(self, images) -> dict:
        """Run all steps without a tape and keep every intermediate."""
        state = {"image": images if isinstance(images, Tensor) else Tensor(images)}
        for k in range(self.num_steps):
            self._run_step(k, state)
        return state

    def outputs_from_step(self, start: int, cache: dict) -> dict:
        """Recompute steps ``start``.. end reusing cached earlier activations."""
        state = dict(cache)
        for k in range(start, self.num_steps):
            self._run_step(k, state)
        return state["outputs"]

    def supervised_maps(self, outputs: dict) -> list:
        maps = []
        if outputs["ds_map"] is not None:
            maps.append(outputs["ds_map"])
        maps.extend(outputs["level_maps"])
        maps.append(outputs["fused_map"])
        return maps

    def trainable_names(self) -> list[str]:
        """Parameters actually read by the current wiring."""
        cfg = self.cfg
        names = []
        for name in self.params.names():
            if name.startswith("ds.") and not cfg.use_ds:
                continue
            if name.startswith("da") and not cfg.use_da:
                continue
            if name.startswith("mla.td") and not cfg.use_mla:
                continue
            names.append(name)
        return names

    def predict_logits(self, images) -> np.ndarray:
        """Fused-map logits as a plain array (no tape)."""
        return self.forward(images)["fused_map"].data

    def predict_mask(self, images) -> np.ndarray:
        """Binary masks via sigmoid >= 0.5 (logit >= 0; ties go to shadow)."""
        return (self.predict_logits(images) >= 0.0).astype(np.float64)
