"""Class-balanced loss, the training loop, and set-level evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError, TrainingDiverged
from .metrics import EvalAccumulator, EvalReport
from .model import ShadowNet
from .optim import OptimState, sgd_momentum_step
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 2000
    batch_size: int = 4
    hflip: bool = True
    seed: int = 7
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0 or self.iterations < 0 or self.batch_size < 1:
            raise ParameterError("invalid training hyperparameters")


def weighted_ce_loss(pred_logits: Tensor, mask: np.ndarray) -> Tensor:
    """Class-balanced binary cross entropy on logits.

    Per image, the shadow term is weighted by N_n/(N_p+N_n) and the
    non-shadow term by N_p/(N_p+N_n); pixel terms are summed per image and
    averaged over the batch. Evaluated through softplus so extreme logits
    stay finite: -y log p = y*softplus(-z), -(1-y) log(1-p) = (1-y)*softplus(z).
    """
    mask = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if pred_logits.shape != mask.shape:
        raise DimensionError(
            f"logit shape {pred_logits.shape} does not match mask {mask.shape}"
        )
    n = mask.shape[0]
    per_image = mask.reshape(n, -1)
    n_pos = per_image.sum(axis=1)
    n_all = per_image.shape[1]
    w_pos = ((n_all - n_pos) / n_all).reshape(n, *([1] * (mask.ndim - 1)))
    w_neg = (n_pos / n_all).reshape(n, *([1] * (mask.ndim - 1)))
    a = Tensor(w_pos * mask)
    b = Tensor(w_neg * (1.0 - mask))
    terms = T.add(
        T.mul(a, T.softplus(T.neg(pred_logits))),
        T.mul(b, T.softplus(pred_logits)),
    )
    return T.scale(T.sum_all(terms), 1.0 / n)


def combined_loss(net: ShadowNet, outputs: dict, masks: np.ndarray) -> Tensor:
    """Mean of the balanced loss over every supervised score map."""
    maps = net.supervised_maps(outputs)
    total = weighted_ce_loss(maps[0], masks)
    for m in maps[1:]:
        total = T.add(total, weighted_ce_loss(m, masks))
    return T.scale(total, 1.0 / len(maps))


def _batch_arrays(samples, idx, flips):
    images = np.stack([samples[i].image for i in idx])
    masks = np.stack([samples[i].mask for i in idx])
    for j, flip in enumerate(flips):
        if flip:
            images[j] = images[j, :, :, ::-1]
            masks[j] = masks[j, :, :, ::-1]
    return images, masks


def train(net: ShadowNet, dataset: list, cfg: TrainConfig):
    """SGD training; returns the (step, loss) curve."""
    if not dataset:
        raise ParameterError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    trainable = net.trainable_names()
    state = OptimState(cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    state.velocity = {name: np.zeros_like(net.params[name].data) for name in trainable}

    curve = []
    for step in range(cfg.iterations):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        flips = rng.random(cfg.batch_size) < 0.5 if cfg.hflip else [False] * cfg.batch_size
        images, masks = _batch_arrays(dataset, idx, flips)

        net.params.zero_grad()
        with T.Tape() as tape:
            outputs = net.forward(images)
            loss = combined_loss(net, outputs, masks)
        loss_val = loss.item()
        T.backward(loss, tape)
        grads = {name: net.params[name].grad for name in trainable}
        missing = [n for n, g in grads.items() if g is None]
        if missing:
            raise ParameterError(f"no gradient for trainable parameters: {missing[:3]}")
        if not np.isfinite(loss_val):
            max_grad = max(
                (np.abs(g).max() for g in grads.values() if g is not None), default=np.nan
            )
            raise TrainingDiverged(step, cfg.learning_rate, float(max_grad))
        sgd_momentum_step(net.params, grads, state)
        curve.append((step, loss_val))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.5f", step, loss_val)
    return curve


def evaluate(net: ShadowNet, dataset: list, batch_size: int = 16, threshold: float = 0.90) -> EvalReport:
    """Pooled-count BER and per-category resolved percentages."""
    if not dataset:
        raise ParameterError("evaluation dataset is empty")
    acc = EvalAccumulator(threshold=threshold)
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        images = np.stack([s.image for s in chunk])
        preds = net.predict_mask(images)
        for sample, pred in zip(chunk, preds):
            acc.update(pred, sample.mask, sample.category)
    return acc.report()
