"""Optimizers: Adam/AdamW and Muon with Newton-Schulz orthogonalization.

Muon follows the fast-GPT-training recipe: Nesterov-style momentum, a quintic
Newton-Schulz iteration to orthogonalize the 2D update, a per-output-row
second moment for variance reduction, shape-scaled steps, and decoupled weight
decay that decays linearly to zero over training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

# quintic coefficients tuned for rapid singular-value convergence
_NS_COEFFS = (3.4445, -4.7750, 2.0315)


def newton_schulz(g: np.ndarray, n: int = 5) -> np.ndarray:
    """Approximately orthogonalize a matrix via n quintic Newton-Schulz steps.

    The input is normalized by its Frobenius norm; tall matrices are handled
    by transposition. For inputs with condition number <= 100 the output's
    singular values land in [0.5, 1.5]. A zero matrix is returned unchanged.
    """
    if g.ndim != 2:
        raise ValueError(f"newton_schulz expects a 2D matrix, got shape {g.shape}")
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        return g.copy()
    a, b, c = _NS_COEFFS
    x = g.astype(np.float64)
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    x = x / (norm + 1e-7)
    for _ in range(n):
        xxt = x @ x.T
        x = a * x + (b * xxt + c * (xxt @ xxt)) @ x
    if transposed:
        x = x.T
    return x.astype(g.dtype)


def cosine_decay(step: int, total_steps: int, final_fraction: float = 0.1) -> float:
    """Multiplier decaying from 1 to final_fraction; exact at the last step."""
    if total_steps <= 1:
        return 1.0
    progress = min(max(step / (total_steps - 1), 0.0), 1.0)
    return final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + math.cos(math.pi * progress))


def linear_to_zero(step: int, total_steps: int) -> float:
    if total_steps <= 1:
        return 1.0
    return max(0.0, 1.0 - step / (total_steps - 1))


@dataclass
class AdamW:
    """Adam with decoupled weight decay; eps defaults suit transformer use."""

    params: list[Tensor]
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)
    _t: int = 0

    def __post_init__(self):
        self._m = [np.zeros(p.shape, dtype=np.float32) for p in self.params]
        self._v = [np.zeros(p.shape, dtype=np.float32) for p in self.params]

    def step(self, lr_scale: float = 1.0) -> None:
        self._t += 1
        b1, b2 = self.betas
        lr = self.lr * lr_scale
        bc1 = 1.0 - b1**self._t
        bc2 = 1.0 - b2**self._t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr * update).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self._m, self._v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for i in range(len(self.params)):
            self._m[i][...] = arrays[f"m{i}"]
            self._v[i][...] = arrays[f"v{i}"]
        self._t = t


@dataclass
class Muon:
    """Orthogonalized-momentum optimizer for 2D weight matrices."""

    params: list[Tensor]
    lr: float = 0.02
    beta2: float = 0.95
    ns_iters: int = 5
    weight_decay: float = 0.0
    momentum_start: float = 0.85
    momentum_end: float = 0.95
    momentum_ramp_steps: int = 300
    total_steps: int = 1
    eps: float = 1e-10
    _buf: list = field(default_factory=list)
    _v: list = field(default_factory=list)
    _t: int = 0

    def __post_init__(self):
        for p in self.params:
            if p.ndim != 2:
                raise ValueError(f"Muon only handles 2D parameters, got shape {p.shape}")
        self._buf = [np.zeros(p.shape, dtype=np.float32) for p in self.params]
        self._v = [np.zeros((p.shape[0], 1), dtype=np.float32) for p in self.params]

    def momentum_at(self, t: int) -> float:
        ramp = min(t / self.momentum_ramp_steps, 1.0)
        return self.momentum_start + (self.momentum_end - self.momentum_start) * ramp

    def step(self, lr_scale: float = 1.0) -> None:
        mu = self.momentum_at(self._t)
        self._t += 1
        wd = self.weight_decay * linear_to_zero(self._t - 1, self.total_steps)
        lr = self.lr * lr_scale
        bc2 = 1.0 - self.beta2**self._t
        for p, buf, v in zip(self.params, self._buf, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32)
            buf *= mu
            buf += (1 - mu) * g
            upd = (1 - mu) * g + mu * buf  # Nesterov blend
            ortho = newton_schulz(upd, self.ns_iters)
            # per-row variance reduction; rescale to keep the update's norm
            v *= self.beta2
            v += (1 - self.beta2) * np.mean(ortho * ortho, axis=1, keepdims=True)
            scaled = ortho / (np.sqrt(v / bc2) + self.eps)
            onorm = float(np.linalg.norm(ortho))
            snorm = float(np.linalg.norm(scaled))
            if snorm > 0:
                scaled *= onorm / snorm
            shape_scale = math.sqrt(max(1.0, p.shape[0] / p.shape[1]))
            if wd:
                p.data *= 1.0 - lr * wd
            p.data -= (lr * shape_scale * scaled).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (b, v) in enumerate(zip(self._buf, self._v)):
            out[f"buf{i}"] = b
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for i in range(len(self.params)):
            self._buf[i][...] = arrays[f"buf{i}"]
            self._v[i][...] = arrays[f"v{i}"]
        self._t = t
