"""Numerical substrate: autodiff tensors, layers, optimizer, RNG streams."""

from pgma.core.tensor import (  # noqa: F401
    ShapeMismatch,
    Tensor,
    backward,
    constant,
    default_dtype,
    no_grad,
    parameter,
    use_dtype,
)
