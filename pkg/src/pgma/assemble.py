"""Assembly of refined priors: every (affinity, prior) pairing becomes one
channel of the decoder's input bank.

The channel order below is load-bearing — decoder weights are trained
against it — and fixed at ten entries regardless of task mode; channels a
mode cannot supply are zero-filled, which is exactly what channel-drop
training teaches the decoder to tolerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pgma.core import tensor as T
from pgma.core.tensor import Tensor
from pgma.episodes import TaskMode
from pgma.priors import EPS, minmax_norm

CHANNEL_NAMES = (
    "query_text",  # textual alignment of the query itself
    "query_visual_max",  # strongest support match per query pixel
    "self_agg_text",  # query self-affinity aggregating the textual prior
    "self_agg_visual",  # query self-affinity aggregating the visual prior
    "self_agg_text_high",  # refined self-affinity over the textual prior
    "self_agg_visual_high",
    "cross_support_mask",  # support mask transported onto the query grid
    "cross_support_text",  # support textual prior transported likewise
    "cross_support_mask_high",
    "cross_support_text_high",
)
N_CHANNELS = len(CHANNEL_NAMES)

_QUERY_ONLY = (0, 2, 4)  # channels that survive with no support at all
_SUPPORT_MASK = (6, 8)  # channels that require a support mask


def availability(mode: TaskMode) -> np.ndarray:
    """Boolean validity per channel for a task mode."""
    valid = np.ones(N_CHANNELS, dtype=bool)
    if mode.family == "zss":
        valid[:] = False
        valid[list(_QUERY_ONLY)] = True
    elif mode.family == "coseg":
        valid[list(_SUPPORT_MASK)] = False
    return valid


def _minmax_t(x: Tensor) -> Tensor:
    lo = T.reduce_min(x)
    span = T.add(T.sub(T.reduce_max(x), lo), EPS)
    return T.div(T.sub(x, lo), span)


def gau(a, p):
    """Affinity-guided prior transport: minmax(softmax(a, last axis) @ p).

    a (L_out, L_in), p (L_in,) -> (L_out,). The softmax runs over the
    contracted axis, so each output pixel takes a convex combination of
    prior values. Differentiable when either input is a graph tensor.
    """
    if isinstance(a, Tensor) or isinstance(p, Tensor):
        at = a if isinstance(a, Tensor) else T.constant(np.asarray(a))
        pt = p if isinstance(p, Tensor) else T.constant(np.asarray(p))
        if at.shape[-1] != pt.shape[0]:
            raise ValueError(f"gau: affinity {at.shape} vs prior {pt.shape}")
        w = T.softmax(at, axis=-1)
        raw = T.matmul(w, T.reshape(pt, (pt.shape[0], 1)))
        return _minmax_t(T.reshape(raw, (at.shape[0],)))
    a = np.asarray(a)
    p = np.asarray(p).reshape(-1)
    if a.ndim != 2 or a.shape[1] != p.shape[0]:
        raise ValueError(f"gau: affinity {a.shape} vs prior {p.shape}")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=-1, keepdims=True)
    return minmax_norm(w @ p).astype(np.float32)


@dataclass
class LevelPriors:
    """Flattened base priors for one level; support-side entries may be
    absent depending on mode."""

    query_text: np.ndarray  # (L_q,)
    query_visual: np.ndarray | None = None  # (L_q,)
    support_mask: np.ndarray | None = None  # (L_s,)
    support_text: np.ndarray | None = None  # (L_s,)


@dataclass
class LevelAffinities:
    a_qq: np.ndarray  # (L_q, L_q)
    a_sq: np.ndarray | None = None  # (L_s, L_q)
    a_qq_high: Tensor | None = None  # (L_q, L_q)
    a_sq_high: Tensor | None = None  # (L_s, L_q)


@dataclass
class AssembledLevel:
    """Ten ordered channels on the query grid; entries are (L_q,) arrays or
    graph tensors. `valid` mirrors the mode's availability vector."""

    channels: list
    grid_hw: tuple[int, int]
    valid: np.ndarray


def _transpose(a):
    return T.transpose(a) if isinstance(a, Tensor) else a.T


def assemble_level(
    priors: LevelPriors, affs: LevelAffinities, mode: TaskMode, grid_hw: tuple[int, int]
) -> AssembledLevel:
    """Build the fixed 10-channel bank for one level.

    High-order channels additionally require the refined tables to exist
    (they are absent in the parameter-free ablation); everything else
    follows the mode's availability.
    """
    l_q = priors.query_text.size
    valid = availability(mode)
    zero = np.zeros(l_q, dtype=np.float32)
    ch: list = [zero] * N_CHANNELS

    ch[0] = priors.query_text
    ch[2] = gau(affs.a_qq, priors.query_text)
    if affs.a_qq_high is not None:
        ch[4] = gau(affs.a_qq_high, priors.query_text)

    if valid[1]:
        ch[1] = priors.query_visual
        ch[3] = gau(affs.a_qq, priors.query_visual)
        if affs.a_qq_high is not None:
            ch[5] = gau(affs.a_qq_high, priors.query_visual)

    if valid[6]:
        ch[6] = gau(affs.a_sq.T, priors.support_mask)
        if affs.a_sq_high is not None:
            ch[8] = gau(_transpose(affs.a_sq_high), priors.support_mask)
    if valid[7]:
        ch[7] = gau(affs.a_sq.T, priors.support_text)
        if affs.a_sq_high is not None:
            ch[9] = gau(_transpose(affs.a_sq_high), priors.support_text)
    return AssembledLevel(channels=ch, grid_hw=grid_hw, valid=valid)


def fuse_shots(per_shot: list[AssembledLevel]) -> AssembledLevel:
    """Merge K single-shot banks into one.

    Query-only channels are support-independent and come from shot 0; the
    visual-match channel takes the strongest evidence (elementwise max);
    every support-touched channel averages. K=1 returns shot 0 unchanged,
    bit for bit.
    """
    if not per_shot:
        raise ValueError("fuse_shots: empty shot list")
    if len(per_shot) == 1:
        return per_shot[0]
    first = per_shot[0]
    fused: list = list(first.channels)
    k = len(per_shot)

    def as_np(x):
        return x.data if isinstance(x, Tensor) else x

    fused[1] = np.maximum.reduce([as_np(s.channels[1]) for s in per_shot])
    for i in range(N_CHANNELS):
        if i in (0, 1, 2):
            continue
        parts = [s.channels[i] for s in per_shot]
        if any(isinstance(p, Tensor) for p in parts):
            acc = parts[0] if isinstance(parts[0], Tensor) else T.constant(parts[0])
            for p in parts[1:]:
                acc = T.add(acc, p if isinstance(p, Tensor) else T.constant(p))
            fused[i] = T.mul(acc, 1.0 / k)
        else:
            fused[i] = np.mean(parts, axis=0).astype(np.float32)
    return AssembledLevel(channels=fused, grid_hw=first.grid_hw, valid=first.valid)
