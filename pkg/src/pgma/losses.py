"""Training objective: overlap (dice) and pixel cross-entropy terms."""

from __future__ import annotations

import numpy as np

from pgma.core import tensor as T
from pgma.core.tensor import Tensor

_EPS = 1e-8  # overlap guard: exact 0 for perfect prediction, defined when both empty
_CLAMP = 1e-7  # probability floor/ceiling inside the log


def _pair(pred, gt) -> tuple[Tensor, Tensor]:
    p = pred if isinstance(pred, Tensor) else T.constant(np.asarray(pred, dtype=np.float32))
    g = T.constant(np.asarray(gt, dtype=np.float32))
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} vs target {g.shape}")
    return p, g


def dice_loss(pred, gt) -> Tensor:
    """1 - (2 sum(y*p) + eps) / (sum(y^2) + sum(p^2) + eps); in [0,1]."""
    p, g = _pair(pred, gt)
    num = T.add(T.mul(T.reduce_sum(T.mul(g, p)), 2.0), _EPS)
    den = T.add(T.add(T.reduce_sum(T.mul(g, g)), T.reduce_sum(T.mul(p, p))), _EPS)
    return T.sub(1.0, T.div(num, den))


def ce_loss(pred, gt) -> Tensor:
    """Pixel-mean binary cross-entropy; probabilities clamped to 1e-7."""
    p, g = _pair(pred, gt)
    p = T.clamp(p, _CLAMP, 1.0 - _CLAMP)
    pos = T.mul(g, T.log(p))
    neg = T.mul(T.sub(1.0, g), T.log(T.sub(1.0, p)))
    return T.neg(T.reduce_mean(T.add(pos, neg)))


def total_loss(pred, gt, lam: float = 0.5) -> Tensor:
    """lam * dice + (1 - lam) * ce."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"loss weight {lam} outside [0,1]")
    return T.add(T.mul(dice_loss(pred, gt), lam), T.mul(ce_loss(pred, gt), 1.0 - lam))


def segmentation_loss(logits: Tensor, gt, lam: float = 0.5) -> tuple[Tensor, float, float]:
    """Loss on raw logits; returns (total, dice value, ce value) for logging."""
    pred = T.sigmoid(logits)
    d = dice_loss(pred, gt)
    c = ce_loss(pred, gt)
    tot = T.add(T.mul(d, lam), T.mul(c, 1.0 - lam))
    return tot, d.item(), c.item()
