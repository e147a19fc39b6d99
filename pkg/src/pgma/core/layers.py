"""Parameterized building blocks composed from the tensor primitives.

Modules register parameters and children through attribute assignment, so
`named_parameters` yields stable dotted paths in construction order — the
same paths the checkpoint format stores.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from pgma.core import tensor as T
from pgma.core.tensor import Tensor


class Module:
    """Base with recursive, order-preserving parameter registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Indexable container; children keyed by position."""

    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


class Linear(Module):
    """y = x @ W + b, Xavier-uniform init. x (..., d_in) -> (..., d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = math.sqrt(6.0 / (d_in + d_out))
        self.weight = T.parameter(
            rng.uniform(-bound, bound, size=(d_in, d_out)).astype(T.default_dtype())
        )
        self.bias = T.parameter(np.zeros(d_out, dtype=T.default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    """Last-axis normalization with learned scale/shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = T.parameter(np.ones(dim, dtype=T.default_dtype()))
        self.beta = T.parameter(np.zeros(dim, dtype=T.default_dtype()))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class ChannelNorm(Module):
    """Per-channel spatial normalization for (C,H,W) maps with learned affine.

    Each channel is standardized over its own H*W support, which keeps the
    decoder insensitive to the wildly different scales of assembled priors.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = T.parameter(np.ones((channels, 1, 1), dtype=T.default_dtype()))
        self.beta = T.parameter(np.zeros((channels, 1, 1), dtype=T.default_dtype()))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = T.reduce_mean(x, axis=(1, 2), keepdims=True)
        xc = T.sub(x, mu)
        var = T.reduce_mean(T.mul(xc, xc), axis=(1, 2), keepdims=True)
        xhat = T.div(xc, T.sqrt(T.add(var, self.eps)))
        return T.add(T.mul(xhat, self.gamma), self.beta)


class FeedForward(Module):
    """Two-layer position-wise MLP with GELU."""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, d_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention over token rows.

    Query tokens and key/value tokens may live in different input spaces
    (d_q_in vs d_kv_in); both are projected to d_model, split into heads,
    attended, then projected to d_out.
    """

    def __init__(
        self,
        d_q_in: int,
        d_kv_in: int,
        d_model: int,
        d_out: int,
        heads: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.d_model = d_model
        self.d_head = d_model // heads
        self.w_q = Linear(d_q_in, d_model, rng)
        self.w_k = Linear(d_kv_in, d_model, rng)
        self.w_v = Linear(d_kv_in, d_model, rng)
        self.w_o = Linear(d_model, d_out, rng)

    def _split(self, x: Tensor, n_tok: int) -> Tensor:
        # (T, d_model) -> (heads, T, d_head)
        return T.transpose(T.reshape(x, (n_tok, self.heads, self.d_head)), (1, 0, 2))

    def forward(self, q_in: Tensor, kv_in: Tensor, reuse_key_proj_for_query: bool = False) -> Tensor:
        """q_in (Tq, d_q_in), kv_in (Tkv, d_kv_in) -> (Tq, d_out).

        reuse_key_proj_for_query routes the query through w_k instead of
        w_q — the support-free fallback where the query tokens live in the
        key space and w_q's input width would not apply.
        """
        tq, tkv = q_in.shape[0], kv_in.shape[0]
        q_proj = self.w_k(q_in) if reuse_key_proj_for_query else self.w_q(q_in)
        q = self._split(q_proj, tq)
        k = self._split(self.w_k(kv_in), tkv)
        v = self._split(self.w_v(kv_in), tkv)
        scores = T.div(T.matmul(q, T.transpose(k, (0, 2, 1))), math.sqrt(self.d_head))
        att = T.softmax(scores, axis=-1)  # (heads, Tq, Tkv)
        ctx = T.matmul(att, v)  # (heads, Tq, d_head)
        merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (tq, self.d_model))
        return self.w_o(merged)


class Conv2d(Module):
    """Same-padded stride-1 conv, Kaiming init. x (Cin,H,W) -> (Cout,H,W)."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        super().__init__()
        std = math.sqrt(2.0 / (c_in * k * k))
        self.weight = T.parameter(
            (rng.standard_normal((c_out, c_in, k, k)) * std).astype(T.default_dtype())
        )
        self.bias = T.parameter(np.zeros(c_out, dtype=T.default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)
