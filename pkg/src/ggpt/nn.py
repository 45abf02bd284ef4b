"""Small shared building blocks on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def param(rng: np.random.Generator, shape, kind: str = "uniform", scale: float | None = None,
          dtype=np.float32) -> Tensor:
    """Initialize a trainable tensor: 'uniform' +-scale, 'normal' std=scale, 'zeros', 'const'."""
    if kind == "uniform":
        bound = scale if scale is not None else float(np.sqrt(3.0 / shape[0]))
        data = rng.uniform(-bound, bound, size=shape)
    elif kind == "normal":
        data = rng.normal(0.0, scale if scale is not None else 1.0, size=shape)
    elif kind == "zeros":
        data = np.zeros(shape)
    elif kind == "const":
        data = np.full(shape, scale if scale is not None else 0.0)
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    return ad.tensor(data.astype(dtype), requires_grad=True, dtype=dtype)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


def residual_mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """x + W2 gelu(W1 x + b1) + b2, dimension preserving."""
    return ad.add(x, linear(ad.gelu(linear(x, w1, b1)), w2, b2))


def cast_params(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    """Fresh parameter dict in the requested dtype (grads reset)."""
    return {k: ad.tensor(v.data.astype(dtype), requires_grad=True, dtype=dtype) for k, v in params.items()}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
