"""Independent reference implementations used to check the real code.

Everything here is deliberately naive — double loops, central differences —
so a bug in the optimized path cannot hide in a shared helper.
"""

from __future__ import annotations

import numpy as np

from pgma.core import tensor as T


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(1, |a|, |b|): absolute near zero, relative at scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def fd_gradients(build, arrays, eps: float = 1e-6):
    """Central-difference and analytic gradients of a scalar-valued graph.

    build: callable taking len(arrays) Tensors, returning a scalar Tensor.
    arrays: float64 numpy inputs, all treated as differentiable.
    Returns (analytic, numeric) lists of float64 arrays.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    with T.use_dtype(np.float64):
        params = [T.parameter(a.copy()) for a in arrays]
        loss = build(*params)
        loss.backward()
        analytic = [
            p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
        ]

        def value_at(idx, flat_i, delta):
            probe = [a.copy() for a in arrays]
            flat = probe[idx].reshape(-1)
            flat[flat_i] += delta
            ps = [T.constant(a) for a in probe]
            with T.no_grad():
                return build(*ps).item()

        numeric = []
        for idx, a in enumerate(arrays):
            g = np.zeros_like(a)
            gf = g.reshape(-1)
            for i in range(a.size):
                gf[i] = (value_at(idx, i, eps) - value_at(idx, i, -eps)) / (2 * eps)
            numeric.append(g)
    return analytic, numeric


def check_grad(build, arrays, tol: float = 1e-4, eps: float = 1e-6) -> float:
    """Assert analytic vs central-difference agreement; returns the worst error."""
    analytic, numeric = fd_gradients(build, arrays, eps=eps)
    worst = max(rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol:g}"
    return worst


def cosine_pair(u: np.ndarray, v: np.ndarray) -> float:
    """Scalar cosine with the zero-vector convention: either norm 0 -> 0."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def affinity_double_loop(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Row-pair cosine table. fa (La, d), fb (Lb, d) -> (La, Lb)."""
    out = np.zeros((fa.shape[0], fb.shape[0]), dtype=np.float64)
    for i in range(fa.shape[0]):
        for j in range(fb.shape[0]):
            out[i, j] = cosine_pair(fa[i], fb[j])
    return out


def gau_brute_force(aff: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Softmax-weighted prior gather, explicit loops, then min-max to [0,1].

    aff (L_out, L_in), prior (L_in,): row i is softmaxed over the
    contracted axis and summed against the prior entry by entry.
    """
    l_out, l_in = aff.shape
    out = np.zeros(l_out, dtype=np.float64)
    for i in range(l_out):
        row = aff[i, :].astype(np.float64)
        e = np.exp(row - row.max())
        w = e / e.sum()
        acc = 0.0
        for j in range(l_in):
            acc += w[j] * float(prior[j])
        out[i] = acc
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo + 1e-8)
