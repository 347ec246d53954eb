"""Adam with classic (L2-coupled) weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 1e-6
    eps: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray | Tensor | None]) -> None:
    """Update ``params`` in place.  Missing or ``None`` gradients count as zero."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for key, p in params.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(p.data)
        elif isinstance(g, Tensor):
            g = g.data
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient for {key} has shape {g.shape}, parameter {p.data.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        elif m.shape != p.data.shape:
            raise DimensionError(f"optimizer state for {key} has shape {m.shape}")
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
