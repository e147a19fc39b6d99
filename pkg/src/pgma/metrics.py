"""Overlap metrics: per-episode IoU and dataset-level aggregates.

Aggregation follows the usual convention: intersections and unions sum
over episodes first, then divide — so large and small objects weigh by
pixel count within a class, and classes weigh equally in the mean.
"""

from __future__ import annotations

import numpy as np


def iou(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    """|pred ∩ gt| / |pred ∪ gt|; both-empty counts as perfect (1.0)."""
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    p = pred_mask.astype(bool)
    g = gt_mask.astype(bool)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


class IoUAccumulator:
    """Streams (pred, gt, class_id) triples into mIoU / FB-IoU."""

    def __init__(self):
        self._inter: dict[int, int] = {}
        self._union: dict[int, int] = {}
        self._fg = [0, 0]  # summed foreground inter/union across all episodes
        self._bg = [0, 0]
        self.episodes = 0

    def add(self, pred_mask: np.ndarray, gt_mask: np.ndarray, class_id: int) -> None:
        p = pred_mask.astype(bool)
        g = gt_mask.astype(bool)
        inter = int(np.logical_and(p, g).sum())
        union = int(np.logical_or(p, g).sum())
        self._inter[class_id] = self._inter.get(class_id, 0) + inter
        self._union[class_id] = self._union.get(class_id, 0) + union
        self._fg[0] += inter
        self._fg[1] += union
        self._bg[0] += int(np.logical_and(~p, ~g).sum())
        self._bg[1] += int(np.logical_or(~p, ~g).sum())
        self.episodes += 1

    def per_class(self) -> dict[int, float]:
        return {
            c: (self._inter[c] / self._union[c]) if self._union[c] else 1.0
            for c in sorted(self._inter)
        }

    def miou(self) -> float:
        pc = self.per_class()
        return float(np.mean(list(pc.values()))) if pc else 0.0

    def fb_iou(self) -> float:
        f = self._fg[0] / self._fg[1] if self._fg[1] else 1.0
        b = self._bg[0] / self._bg[1] if self._bg[1] else 1.0
        return 0.5 * (f + b)
