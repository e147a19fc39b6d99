"""Pixel-pair affinities between and within images.

The parameter-free tables (cross support-query, self support, self query)
are cosine similarities over flattened feature rows — plain numpy, no
graph. The high-order blocks refine those tables with attention over
token rows and are the first trainable stage of the pipeline; they take
the parameter-free tables as constants.
"""

from __future__ import annotations

import numpy as np

from pgma.core import tensor as T
from pgma.core.layers import FeedForward, LayerNorm, Module, MultiHeadAttention
from pgma.core.tensor import Tensor


# ---------------------------------------------------------------------------
# parameter-free affinities
# ---------------------------------------------------------------------------


def masked_flatten(feat: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """(h, w, d) -> (h*w, d), rows scaled by the (possibly fractional) mask.

    The mask is the level-resolution downsample of a binary mask, so values
    sit in [0,1]; absent mask means all-ones (query side / mask-free modes).
    """
    h, w, d = feat.shape
    flat = feat.reshape(h * w, d)
    if mask is None:
        return flat
    if mask.shape != (h, w):
        raise ValueError(f"mask {mask.shape} does not match feature grid {(h, w)}")
    return flat * mask.reshape(h * w, 1)


def cross_affinity(f_s_hat: np.ndarray, f_q_hat: np.ndarray) -> np.ndarray:
    """Row-pair cosine table (L_s, L_q); zero-norm rows contribute 0."""
    if f_s_hat.shape[1] != f_q_hat.shape[1]:
        raise ValueError(
            f"feature dims differ: {f_s_hat.shape[1]} vs {f_q_hat.shape[1]}"
        )
    a = f_s_hat.astype(np.float64, copy=False)
    b = f_q_hat.astype(np.float64, copy=False)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    out = (a / np.where(na > 0, na, 1.0)) @ (b / np.where(nb > 0, nb, 1.0)).T
    return out.astype(np.result_type(f_s_hat, f_q_hat, np.float32))


def self_affinity(f_hat: np.ndarray) -> np.ndarray:
    """(L, L) cosine table of an image against itself."""
    return cross_affinity(f_hat, f_hat)


# ---------------------------------------------------------------------------
# high-order (learned) refinement
# ---------------------------------------------------------------------------


class HighOrderBlock(Module):
    """Attention refinement: LN(MHA(q, kv) + residual), then FFN + residual.

    Token rows carry whole affinity profiles (dim = a spatial length), so
    the block mixes structural context across pixels. Post-norm layout;
    the residual argument must match the output token width d_out.
    """

    def __init__(
        self,
        d_q_in: int,
        d_kv_in: int,
        d_out: int,
        d_model: int,
        heads: int,
        ffn_hidden: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.attn = MultiHeadAttention(d_q_in, d_kv_in, d_model, d_out, heads, rng)
        self.norm = LayerNorm(d_out)
        self.ffn = FeedForward(d_out, ffn_hidden, d_out, rng)

    def forward(
        self,
        q_tokens: Tensor,
        kv_tokens: Tensor,
        residual: Tensor,
        reuse_key_proj_for_query: bool = False,
    ) -> Tensor:
        x1 = self.norm(
            T.add(self.attn(q_tokens, kv_tokens, reuse_key_proj_for_query), residual)
        )
        return T.add(self.ffn(x1), x1)

    def force_passthrough(self) -> None:
        """Test hook: zero the attention output and second FFN layer so the
        block reduces to LN(residual) — the identity-like configuration."""
        self.attn.w_o.weight.data[:] = 0
        self.attn.w_o.bias.data[:] = 0
        self.ffn.fc2.weight.data[:] = 0
        self.ffn.fc2.bias.data[:] = 0


class HighOrderLevel(Module):
    """The two refinement blocks for one pyramid level.

    `cross` upgrades the support-query table using support self-structure;
    `selfq` upgrades the query self-table using the refined cross table.
    Token widths are spatial lengths, so parameters are resolution-bound
    and unshared across levels.
    """

    def __init__(
        self,
        l_s: int,
        l_q: int,
        d_model: int,
        heads: int,
        ffn_hidden: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.l_s, self.l_q = l_s, l_q
        self.cross = HighOrderBlock(l_s, l_s, l_s, d_model, heads, ffn_hidden, rng)
        self.selfq = HighOrderBlock(l_s, l_q, l_q, d_model, heads, ffn_hidden, rng)

    def refine_cross(self, a_ss, a_sq) -> Tensor:
        """a_ss (L_s, L_s), a_sq (L_s, L_q) -> refined cross table (L_s, L_q).

        Query-pixel tokens (columns of a_sq) attend over support-pixel
        tokens (rows of a_ss); the output is transposed back so the support
        axis leads, matching the parameter-free table's orientation.
        """
        a_sq_t = T.transpose(T.constant(a_sq) if not isinstance(a_sq, Tensor) else a_sq)
        kv = T.constant(a_ss) if not isinstance(a_ss, Tensor) else a_ss
        out = self.cross(a_sq_t, kv, residual=a_sq_t)  # (L_q, L_s)
        return T.transpose(out)

    def refine_self(self, a_prime_sq: Tensor, a_qq) -> Tensor:
        """a_prime_sq (L_s, L_q), a_qq (L_q, L_q) -> refined self table.

        Query tokens carry their refined support profiles and attend over
        the rows of the query self-table; residual comes from a_qq, whose
        shape the output must keep.
        """
        kv = T.constant(a_qq) if not isinstance(a_qq, Tensor) else a_qq
        return self.selfq(T.transpose(a_prime_sq), kv, residual=kv)

    def refine_self_query_only(self, a_qq) -> Tensor:
        """Support-free fallback: the query self-table plays every role.

        The query projection trained for support-profile tokens has the
        wrong input width here, so the key projection is reused for the
        queries; all touched weights are ones exercised during training.
        """
        kv = T.constant(a_qq) if not isinstance(a_qq, Tensor) else a_qq
        return self.selfq(kv, kv, residual=kv, reuse_key_proj_for_query=True)
