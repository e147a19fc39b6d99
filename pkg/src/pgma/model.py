"""End-to-end forward pass: episode in, full-resolution mask logits out.

Everything upstream of the learned blocks (priors, parameter-free
affinities) runs in plain numpy; graph tensors appear only where a
parameter can receive gradient. One trained weight set serves every task
mode — the mode only changes which prior channels are populated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pgma.affinity import HighOrderLevel, cross_affinity, masked_flatten, self_affinity
from pgma.assemble import (
    AssembledLevel,
    LevelAffinities,
    LevelPriors,
    assemble_level,
    fuse_shots,
)
from pgma.core.layers import Module, ModuleList
from pgma.core.rng import substream
from pgma.core.tensor import Tensor, bilinear_matrix
from pgma.decoder import Decoder, channel_drop, mode_drop, sample_drop
from pgma.episodes import Episode, TaskMode
from pgma.priors import support_clip_prior, support_gt_prior, textual_prior, visual_prior
from pgma.synth import SynthConfig


@dataclass(frozen=True)
class ModelConfig:
    """Architecture shape; must agree with the episode feature layout."""

    grids: tuple[int, ...] = (8, 16)
    layers_per_stage: tuple[int, ...] = (2, 2)
    feat_dim: int = 32
    d_model: int = 96
    heads: int = 4
    ffn_hidden: int = 96
    decoder_width: int = 32
    use_high_order: bool = True  # False = parameter-free-only ablation

    @property
    def level_grids(self) -> tuple[int, ...]:
        """Square grid side per flat level, coarse to fine, stage-major."""
        return tuple(g for g, n in zip(self.grids, self.layers_per_stage) for _ in range(n))

    @classmethod
    def from_synth(cls, s: SynthConfig, **overrides) -> "ModelConfig":
        return cls(
            grids=s.grids,
            layers_per_stage=s.layers_per_stage,
            feat_dim=s.feat_dim,
            **overrides,
        )


def _resize_prior(prior: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of a [0,1] map; convex weights keep the range."""
    h, w = prior.shape
    if (h, w) == tuple(out_hw):
        return prior
    out = bilinear_matrix(h, out_hw[0], np.float64) @ prior.astype(np.float64)
    out = out @ bilinear_matrix(w, out_hw[1], np.float64).T
    return out.astype(np.float32)


class Model(Module):
    """High-order refinement blocks plus the hierarchical decoder."""

    def __init__(self, cfg: ModelConfig, init_seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = substream(init_seed, "init")
        if cfg.use_high_order:
            self.high_order = ModuleList(
                HighOrderLevel(g * g, g * g, cfg.d_model, cfg.heads, cfg.ffn_hidden, rng)
                for g in cfg.level_grids
            )
        else:
            self.high_order = None
        self.decoder = Decoder(
            n_levels=len(cfg.level_grids),
            low_dim=cfg.feat_dim,
            width=cfg.decoder_width,
            rng=rng,
        )

    # -- per-level assembly ------------------------------------------------

    def _level_bank(
        self,
        li: int,
        f_q: np.ndarray,
        ep: Episode,
        q_text_grid: np.ndarray,
        mode: TaskMode,
    ) -> AssembledLevel:
        h, w, _ = f_q.shape
        fq_flat = masked_flatten(f_q)
        a_qq = self_affinity(fq_flat)
        p_qt = _resize_prior(q_text_grid, (h, w)).reshape(-1)
        use_support = mode.family != "zss" and ep.k_shots > 0
        use_masks = mode.family != "coseg"

        if not use_support:
            a_qq_high = None
            if self.high_order is not None:
                a_qq_high = self.high_order[li].refine_self_query_only(a_qq)
            return assemble_level(
                LevelPriors(query_text=p_qt),
                LevelAffinities(a_qq=a_qq, a_qq_high=a_qq_high),
                mode,
                (h, w),
            )

        shots = []
        for sup in ep.supports:
            f_s = sup.stack.level_list[li]
            hs, ws, _ = f_s.shape
            mask_lvl = support_gt_prior(sup.mask, (hs, ws)) if use_masks else None
            fs_flat = masked_flatten(f_s, mask_lvl)
            a_sq = cross_affinity(fs_flat, fq_flat)
            a_ss = self_affinity(fs_flat)
            affs = LevelAffinities(a_qq=a_qq, a_sq=a_sq)
            if self.high_order is not None:
                affs.a_sq_high = self.high_order[li].refine_cross(a_ss, a_sq)
                affs.a_qq_high = self.high_order[li].refine_self(affs.a_sq_high, a_qq)
            priors = LevelPriors(
                query_text=p_qt,
                query_visual=visual_prior(a_sq, (h, w)).reshape(-1),
                support_mask=None if mask_lvl is None else mask_lvl.reshape(-1),
                support_text=support_clip_prior(
                    sup.stack.clip_visual, ep.text_embed, (hs, ws)
                ).reshape(-1),
            )
            shots.append(assemble_level(priors, affs, mode, (h, w)))
        return fuse_shots(shots)

    # -- full forward ------------------------------------------------------

    def forward(
        self,
        ep: Episode,
        mode: TaskMode | None = None,
        drop_rng: np.random.Generator | None = None,
        keep_prob: float = 0.7,
    ) -> Tensor:
        """Logits (H, W). drop_rng enables training-time random channel
        drop, one vector per level; otherwise the mode's deterministic
        keep vector applies (all-keep for exact-mask modes)."""
        mode = mode or ep.mode
        q_text_grid = textual_prior(ep.query.clip_visual, ep.text_embed)
        banks = []
        for li, (_, _, f_q) in enumerate(ep.query.flat_levels()):
            bank = self._level_bank(li, f_q, ep, q_text_grid, mode)
            pi = sample_drop(drop_rng, keep_prob) if drop_rng is not None else mode_drop(mode)
            banks.append(channel_drop(bank, pi))
        low_level = ep.query.stages[-1][0]
        return self.decoder(banks, low_level, ep.query.image_size)

    def predict(self, ep: Episode, mode: TaskMode | None = None) -> np.ndarray:
        """Thresholded binary mask (H, W) uint8; no graph is recorded."""
        from pgma.core.tensor import no_grad

        with no_grad():
            logits = self.forward(ep, mode=mode)
        return (logits.data > 0).astype(np.uint8)
