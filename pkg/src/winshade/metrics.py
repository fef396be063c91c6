"""Balance-error-rate metrics and the evaluation report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


def confusion_counts(pred: np.ndarray, gt: np.ndarray):
    """(tp, tn, fp, fn) pixel counts for binary masks of equal shape."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred > 0.5
    g = gt > 0.5
    tp = int(np.count_nonzero(p & g))
    tn = int(np.count_nonzero(~p & ~g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, tn, fp, fn


def ber_from_counts(tp: int, tn: int, fp: int, fn: int):
    """(ber, shadow_ber, nonshadow_ber); a term is None when its class is absent."""
    shadow = (1.0 - tp / (tp + fn)) * 100.0 if (tp + fn) else None
    nonshadow = (1.0 - tn / (tn + fp)) * 100.0 if (tn + fp) else None
    if shadow is None or nonshadow is None:
        return None, shadow, nonshadow
    return (shadow + nonshadow) / 2.0, shadow, nonshadow


def resolved_at_threshold(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.90) -> bool:
    """True iff pixel accuracy strictly exceeds the threshold."""
    tp, tn, fp, fn = confusion_counts(pred, gt)
    total = tp + tn + fp + fn
    return (tp + tn) / total > threshold


@dataclass
class EvalReport:
    """Pooled-count BER plus per-category resolved percentages."""

    ber: float | None
    ber_shadow: float | None
    ber_nonshadow: float | None
    tp: int
    tn: int
    fp: int
    fn: int
    n_images: int
    resolved_pct: dict = field(default_factory=dict)  # category -> percent

    def to_keyvalue(self) -> str:
        def fmt(v):
            return "absent" if v is None else f"{v:.6f}"

        lines = [
            f"ber = {fmt(self.ber)}",
            f"ber_shadow = {fmt(self.ber_shadow)}",
            f"ber_nonshadow = {fmt(self.ber_nonshadow)}",
            f"tp = {self.tp}",
            f"tn = {self.tn}",
            f"fp = {self.fp}",
            f"fn = {self.fn}",
            f"n_images = {self.n_images}",
        ]
        for cat in sorted(self.resolved_pct):
            lines.append(f"resolved_pct.{cat} = {self.resolved_pct[cat]:.4f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        def fmt(v):
            return "  absent" if v is None else f"{v:8.3f}"

        rows = [
            "metric              value",
            "------------------  --------",
            f"BER                 {fmt(self.ber)}",
            f"BER (shadow)        {fmt(self.ber_shadow)}",
            f"BER (non-shadow)    {fmt(self.ber_nonshadow)}",
            f"pixels (TP/TN)      {self.tp}/{self.tn}",
            f"pixels (FP/FN)      {self.fp}/{self.fn}",
            f"images              {self.n_images}",
        ]
        for cat in sorted(self.resolved_pct):
            rows.append(f"resolved {cat:<11} {self.resolved_pct[cat]:7.2f}%")
        return "\n".join(rows) + "\n"


class EvalAccumulator:
    """Pools confusion counts over a sample set and tracks resolved rates."""

    def __init__(self, threshold: float = 0.90):
        self.threshold = threshold
        self.tp = self.tn = self.fp = self.fn = 0
        self.n_images = 0
        self._resolved: dict[str, list[int]] = {}

    def update(self, pred: np.ndarray, gt: np.ndarray, category: str = "unknown") -> None:
        tp, tn, fp, fn = confusion_counts(pred, gt)
        self.tp += tp
        self.tn += tn
        self.fp += fp
        self.fn += fn
        self.n_images += 1
        hit = (tp + tn) / (tp + tn + fp + fn) > self.threshold
        bucket = self._resolved.setdefault(category, [0, 0])
        bucket[0] += int(hit)
        bucket[1] += 1

    def report(self) -> EvalReport:
        ber, shadow, nonshadow = ber_from_counts(self.tp, self.tn, self.fp, self.fn)
        resolved = {
            cat: 100.0 * hits / total for cat, (hits, total) in self._resolved.items()
        }
        if self._resolved:
            hits = sum(h for h, _ in self._resolved.values())
            total = sum(t for _, t in self._resolved.values())
            resolved["all"] = 100.0 * hits / total
        return EvalReport(
            ber, shadow, nonshadow, self.tp, self.tn, self.fp, self.fn, self.n_images, resolved
        )
