"""Class-agnostic base priors: maps in [0,1] over a pixel grid.

Four sources feed the assembly stage: text-alignment of the query, the
best-support-match response, the downsampled support mask, and the
text-alignment of the support. All are parameter-free, so everything here
is plain numpy — nothing upstream of these maps ever needs a gradient.
"""

from __future__ import annotations

import numpy as np

from pgma.core.tensor import area_matrix, bilinear_matrix

EPS = 1e-8  # min-max guard; keeps constant maps at exactly zero


def minmax_norm(m: np.ndarray) -> np.ndarray:
    """(m - min) / (max - min + 1e-8); constant maps collapse to zeros."""
    lo = m.min()
    return (m - lo) / (m.max() - lo + EPS)


def _resize(m: np.ndarray, out_hw: tuple[int, int], kind: str) -> np.ndarray:
    h, w = m.shape
    if (h, w) == tuple(out_hw):
        return m
    fn = area_matrix if kind == "area" else bilinear_matrix
    return fn(h, out_hw[0], m.dtype) @ m @ fn(w, out_hw[1], m.dtype).T


def textual_prior(
    clip_visual: np.ndarray, text_embed: np.ndarray, out_hw: tuple[int, int] | None = None
) -> np.ndarray:
    """Per-pixel cosine against the class text vector, min-max normalized.

    clip_visual (h, w, d_t) lives in the text-embedding space. Zero-norm
    pixels score 0. Resampling to out_hw (bilinear) happens after
    normalization, so the result stays in [0,1].
    """
    t_norm = np.linalg.norm(text_embed)
    if t_norm == 0:
        raise ValueError("text embedding has zero norm")
    cv = clip_visual.astype(np.float64, copy=False)
    pix_norm = np.linalg.norm(cv, axis=-1)
    dots = cv @ (text_embed.astype(np.float64) / t_norm)
    cos = np.divide(dots, pix_norm, out=np.zeros_like(dots), where=pix_norm > 0)
    prior = minmax_norm(cos)
    if out_hw is not None:
        prior = _resize(prior, out_hw, "bilinear")
    return prior.astype(np.float32)


def visual_prior(a_sq: np.ndarray, grid_hw: tuple[int, int]) -> np.ndarray:
    """Best support match per query pixel: column-wise max, then min-max.

    a_sq (L_s, L_q). An all-zero affinity (empty support evidence) yields
    an all-zero map rather than an error.
    """
    h, w = grid_hw
    if a_sq.shape[1] != h * w:
        raise ValueError(f"affinity query axis {a_sq.shape[1]} != grid {h}x{w}")
    raw = a_sq.max(axis=0)
    return minmax_norm(raw.astype(np.float64)).astype(np.float32).reshape(h, w)


def support_gt_prior(mask: np.ndarray, grid_hw: tuple[int, int]) -> np.ndarray:
    """Area-average downsample of the binary support mask; values in [0,1]."""
    return _resize(mask.astype(np.float64), grid_hw, "area").astype(np.float32)


def support_clip_prior(
    clip_visual: np.ndarray, text_embed: np.ndarray, grid_hw: tuple[int, int]
) -> np.ndarray:
    """Support-side text alignment, resampled to the level grid."""
    return textual_prior(clip_visual, text_embed, out_hw=grid_hw)
