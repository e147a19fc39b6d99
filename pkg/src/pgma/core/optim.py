"""Decoupled-weight-decay Adam with bias correction."""

from __future__ import annotations

import math

import numpy as np

from pgma.core.tensor import Tensor


class AdamW:
    """Standard update: m/v moments, bias-corrected, decay applied to the
    weights directly rather than through the gradient.

    Parameters are (name, tensor) pairs; names key the persisted moment
    state and make non-finite gradient aborts attributable.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {n: a.copy() for n, a in self.m.items()},
            "v": {n: a.copy() for n, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for store, key in ((self.m, "m"), (self.v, "v")):
            src = state[key]
            if set(src) != set(store):
                raise KeyError("optimizer state names do not match parameters")
            for n in store:
                arr = np.asarray(src[n], dtype=store[n].dtype)
                if arr.shape != store[n].shape:
                    raise ValueError(f"optimizer state {n}: shape mismatch")
                store[n] = arr.copy()


def cosine_lr(step: int, total: int, base_lr: float, warmup: int = 0) -> float:
    """Linear warmup then half-cosine decay to zero."""
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    frac = (step - warmup) / max(1, total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))
