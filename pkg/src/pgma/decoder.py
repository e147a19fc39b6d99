"""Hierarchical decoder with channel drop.

Channel drop zeroes whole prior channels — no rescaling of the kept ones,
because a zeroed channel must look exactly like a channel the task mode
could not supply. The decoder itself is a coarse-to-fine conv pyramid:
each level's 10-channel bank is transformed, merged with the upsampled
coarser state, and the finest state picks up a projected low-level skip
before the single-logit head.
"""

from __future__ import annotations

import numpy as np

from pgma.assemble import AssembledLevel, N_CHANNELS, availability
from pgma.core import tensor as T
from pgma.core.layers import ChannelNorm, Conv2d, Module, ModuleList
from pgma.core.tensor import Tensor
from pgma.episodes import TaskMode


def sample_drop(rng: np.random.Generator, keep_prob: float = 0.7,
                n: int = N_CHANNELS) -> np.ndarray:
    """Random 0/1 keep vector; all-zero draws are rejected and resampled."""
    while True:
        pi = (rng.uniform(size=n) < keep_prob).astype(np.int8)
        if pi.any():
            return pi


def mode_drop(mode: TaskMode) -> np.ndarray:
    """Deterministic keep vector: exactly the mode's availability mask."""
    return availability(mode).astype(np.int8)


def channel_drop(level: AssembledLevel, pi: np.ndarray) -> AssembledLevel:
    """Zero out dropped channels; kept channels pass through untouched."""
    pi = np.asarray(pi)
    if pi.shape != (N_CHANNELS,):
        raise ValueError(f"drop vector length {pi.shape} != {N_CHANNELS}")
    if not pi.any():
        raise ValueError("drop vector would zero every channel")
    l_q = level.grid_hw[0] * level.grid_hw[1]
    zero = np.zeros(l_q, dtype=np.float32)
    kept = [c if keep else zero for c, keep in zip(level.channels, pi)]
    return AssembledLevel(channels=kept, grid_hw=level.grid_hw, valid=level.valid)


class ConvBlock(Module):
    """(3x3 conv -> per-channel norm -> relu) x 2."""

    def __init__(self, c_in: int, width: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(c_in, width, 3, rng)
        self.norm1 = ChannelNorm(width)
        self.conv2 = Conv2d(width, width, 3, rng)
        self.norm2 = ChannelNorm(width)

    def forward(self, x: Tensor) -> Tensor:
        x = T.relu(self.norm1(self.conv1(x)))
        return T.relu(self.norm2(self.conv2(x)))


class Decoder(Module):
    """Coarse-to-fine mask decoder over assembled prior banks."""

    def __init__(self, n_levels: int, low_dim: int, width: int, rng: np.random.Generator):
        super().__init__()
        if n_levels < 1:
            raise ValueError("decoder needs at least one level")
        self.width = width
        self.blocks = ModuleList(ConvBlock(N_CHANNELS, width, rng) for _ in range(n_levels))
        # merge convs: one per coarse->fine junction, plus the low-level skip
        self.merge = ModuleList(Conv2d(2 * width, width, 1, rng) for _ in range(n_levels - 1))
        self.low_proj = Conv2d(low_dim, width, 1, rng)
        self.merge_low = Conv2d(2 * width, width, 1, rng)
        self.head = Conv2d(width, 1, 1, rng)

    @staticmethod
    def _bank_tensor(level: AssembledLevel) -> Tensor:
        h, w = level.grid_hw
        rows = []
        for c in level.channels:
            t = c if isinstance(c, Tensor) else T.constant(np.asarray(c, dtype=np.float32))
            rows.append(T.reshape(t, (1, h, w)))
        return T.concat(rows, axis=0)

    def forward(self, levels: list[AssembledLevel], low_level: np.ndarray,
                out_hw: tuple[int, int]) -> Tensor:
        """levels coarse->fine (drop already applied); low_level (h, w, d)
        from the finest stage; returns (H, W) logits."""
        state: Tensor | None = None
        for i, level in enumerate(levels):
            x = self.blocks[i](self._bank_tensor(level))
            if state is not None:
                up = T.resize_bilinear(state, level.grid_hw)
                x = T.relu(self.merge[i - 1](T.concat([x, up], axis=0)))
            state = x
        low = T.constant(np.ascontiguousarray(np.transpose(low_level, (2, 0, 1))))
        if low.shape[1:] != state.shape[1:]:
            raise ValueError(
                f"low-level grid {low.shape[1:]} != finest level {state.shape[1:]}"
            )
        state = T.relu(self.merge_low(T.concat([state, T.relu(self.low_proj(low))], axis=0)))
        logits = self.head(state)  # (1, h, w)
        return T.resize_bilinear(T.reshape(logits, logits.shape[1:]), out_hw)
