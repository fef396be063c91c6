"""Plain SGD with momentum and weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .params import ModelParams


@dataclass
class OptimState:
    """Per-parameter velocity buffers plus the optimizer hyperparameters."""

    learning_rate: float
    momentum: float
    weight_decay: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ParameterError("optimizer hyperparameters must be nonnegative")

    @classmethod
    def for_params(cls, params: ModelParams, learning_rate: float, momentum: float, weight_decay: float) -> "OptimState":
        state = cls(learning_rate, momentum, weight_decay)
        state.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
        return state


def sgd_momentum_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimState) -> None:
    """v <- m*v + g + wd*theta ; theta <- theta - lr*v (in place)."""
    for name in state.velocity:
        if name not in grads:
            raise ParameterError(f"missing gradient for parameter {name!r}")
    for name, g in grads.items():
        if name not in state.velocity:
            raise ParameterError(f"gradient for unknown parameter {name!r}")
        theta = params[name]
        if g.shape != theta.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter {name!r} {theta.data.shape}"
            )
        v = state.velocity[name]
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * theta.data
        theta.data = theta.data - state.learning_rate * v
