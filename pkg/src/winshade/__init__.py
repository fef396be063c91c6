"""Desk-scale shadow detection with a shifted-window attention network.

The package is self-contained: a minimal float64 autograd core
(:mod:`winshade.tensor`), a hierarchical window-attention encoder
(:mod:`winshade.encoder`), supervision/attention decoder modules
(:mod:`winshade.decoder`), multi-level map fusion (:mod:`winshade.fusion`),
class-balanced training and BER evaluation (:mod:`winshade.training`,
:mod:`winshade.metrics`), a synthetic shadow-scene generator
(:mod:`winshade.data`), and a CLI (:mod:`winshade.cli`).
"""

from .tensor import Tensor, Tape, backward

__all__ = ["Tensor", "Tape", "backward"]
__version__ = "0.1.0"
