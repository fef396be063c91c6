"""Named collections of learnable tensors.

Parameters are addressed by hierarchical dotted names
(e.g. ``encoder.s0.b1.attn.qkv.w``). Creation order is deterministic, so a
single seeded generator reproduces the same initialization bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor


class ModelParams:
    """Ordered mapping of parameter name to trainable Tensor."""

    def __init__(self):
        self._store: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._store:
            raise ParameterError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._store[name] = t
        return t

    def create_uniform(self, name: str, shape, fan_in: int, rng: np.random.Generator) -> Tensor:
        """Weight init: uniform(-s, s) with s = sqrt(1 / fan_in)."""
        s = float(np.sqrt(1.0 / fan_in))
        return self.add(name, rng.uniform(-s, s, size=shape))

    def create_zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def create_ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._store[name]
        except KeyError:
            raise ParameterError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def names(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def zero_grad(self) -> None:
        for t in self._store.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients of every parameter; missing gradients are an error."""
        out = {}
        for name, t in self._store.items():
            if t.grad is None:
                raise ParameterError(f"parameter {name!r} has no gradient")
            out[name] = t.grad
        return out

    def set_data(self, name: str, data: np.ndarray) -> None:
        t = self[name]
        data = np.asarray(data, dtype=np.float64)
        if data.shape != t.data.shape:
            raise DimensionError(
                f"parameter {name!r} has shape {t.data.shape}, got {data.shape}"
            )
        t.data = data

    def zero_by_suffix(self, suffixes) -> list[str]:
        """Zero every parameter whose name ends with one of ``suffixes``."""
        hit = []
        for name, t in self._store.items():
            if any(name.endswith(s) for s in suffixes):
                t.data = np.zeros_like(t.data)
                hit.append(name)
        return hit
