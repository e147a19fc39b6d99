"""Degraded-supervision transforms: box supervision and the two
corruption protocols (support mask, support features)."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from pgma.core.rng import substream
from pgma.episodes import Episode, FeatureStack, Support, TaskMode

# Structuring radius per corruption level. Severities skip radius 4: at the
# coarsest feature grid one cell spans 4 pixels, and sub-cell radii alias —
# a 4px nudge can land better than a 2px one after downsampling, which would
# fold a spurious bump into an otherwise monotone damage curve.
MASK_RADII = (1, 2, 8)
FEAT_SIGMAS = (0.05, 0.10, 0.20)  # noise scale per level, in units of feature std


def bbox_fill(mask: np.ndarray) -> np.ndarray:
    """Tight axis-aligned bounding box of the mask, filled with ones."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("cannot fit a bounding box to an empty mask")
    out = np.zeros_like(mask, dtype=np.uint8)
    out[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1] = 1
    return out


def _disk(radius: int) -> np.ndarray:
    y, x = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return (y * y + x * x) <= radius * radius


def corrupt_mask(mask: np.ndarray, level: int, seed: int,
                 radii: tuple[int, int, int] = MASK_RADII) -> np.ndarray:
    """Random erosion or dilation with the level's structuring radius.

    Erosion that would wipe the mask out retries at half the radius until
    something survives (radius 0 is the identity), so a corrupted support
    never silently loses all its evidence.
    """
    if level not in (1, 2, 3):
        raise ValueError(f"corruption level {level} not in {{1,2,3}}")
    radius = radii[level - 1]
    if radius == 0:
        return mask.copy()
    # the stream ignores the level so severities nest: every level degrades
    # the same way, just further — that is what makes damage monotone
    rng = substream(seed, "corrupt-mask")
    m = mask.astype(bool)
    if rng.uniform() < 0.5:
        while radius > 0:
            eroded = ndimage.binary_erosion(m, structure=_disk(radius))
            if eroded.any():
                return eroded.astype(np.uint8)
            radius //= 2
        return mask.copy()
    return ndimage.binary_dilation(m, structure=_disk(radius)).astype(np.uint8)


def corrupt_image_features(stack: FeatureStack, level: int, seed: int,
                           sigmas: tuple[float, float, float] = FEAT_SIGMAS) -> FeatureStack:
    """Additive Gaussian noise on every feature map, scaled by that map's
    own std — a feature-space stand-in for photometric image damage."""
    if level not in (1, 2, 3):
        raise ValueError(f"corruption level {level} not in {{1,2,3}}")
    sigma = sigmas[level - 1]
    # level-free stream: higher levels scale the *same* noise field up,
    # so per-episode damage grows with severity instead of re-rolling
    rng = substream(seed, "corrupt-image")
    if sigma == 0.0:
        return stack
    stages = []
    for layers in stack.stages:
        new_layers = []
        for arr in layers:
            noise = rng.standard_normal(arr.shape).astype(np.float32)
            new_layers.append(arr + sigma * float(arr.std()) * noise)
        stages.append(new_layers)
    clip_noise = rng.standard_normal(stack.clip_visual.shape).astype(np.float32)
    clip = stack.clip_visual + sigma * float(stack.clip_visual.std()) * clip_noise
    return FeatureStack(stages=stages, clip_visual=clip, image_size=stack.image_size)


def apply_mode_transform(ep: Episode, mode: TaskMode, seed: int) -> Episode:
    """Rewrite the episode's support side to match the evaluation regime.

    ZSS drops supports entirely (the forward pass must see none); BBOX and
    the corrupt modes rewrite masks/features; FSS and COSEG pass through
    (COSEG's mask-blindness is a forward-pass concern, not a data one).
    """
    if mode.family == "zss":
        return Episode(
            query=ep.query,
            supports=[],
            text_embed=ep.text_embed,
            class_id=ep.class_id,
            query_mask=ep.query_mask,
            mode=mode,
        )
    supports = ep.supports
    if mode.family == "bbox":
        supports = [Support(s.stack, bbox_fill(s.mask)) for s in supports]
    elif mode.family == "corrupt-mask":
        supports = [
            Support(s.stack, corrupt_mask(s.mask, mode.level, seed + 31 * k))
            for k, s in enumerate(supports)
        ]
    elif mode.family == "corrupt-image":
        supports = [
            Support(corrupt_image_features(s.stack, mode.level, seed + 31 * k), s.mask)
            for k, s in enumerate(supports)
        ]
    return Episode(
        query=ep.query,
        supports=supports,
        text_embed=ep.text_embed,
        class_id=ep.class_id,
        query_mask=ep.query_mask,
        mode=mode,
    )
