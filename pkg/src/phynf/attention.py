"""Scaled dot-product self-attention across a batch of latent vectors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, as_tensor, matmul, mul, softmax_lastdim, transpose
from .diffcore.tensor import DimensionError


class EmptyBatchError(ValueError):
    pass


@dataclass
class AttentionParams:
    """Square projections; ``v_n = beta_v + omega_v @ x_n`` and likewise for q, k."""

    omega_q: Tensor
    omega_k: Tensor
    omega_v: Tensor
    beta_q: Tensor
    beta_k: Tensor
    beta_v: Tensor

    def __post_init__(self):
        d = self.omega_q.shape[0]
        for name in ("omega_q", "omega_k", "omega_v"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be {d}x{d}")
        for name in ("beta_q", "beta_k", "beta_v"):
            if getattr(self, name).shape != (d,):
                raise DimensionError(f"{name} must have length {d}")

    @property
    def dim(self) -> int:
        return self.omega_q.shape[0]

    def parameters(self, prefix: str = "attn") -> dict[str, Tensor]:
        return {
            f"{prefix}.omega_q": self.omega_q,
            f"{prefix}.omega_k": self.omega_k,
            f"{prefix}.omega_v": self.omega_v,
            f"{prefix}.beta_q": self.beta_q,
            f"{prefix}.beta_k": self.beta_k,
            f"{prefix}.beta_v": self.beta_v,
        }


def init_attention(dim: int, rng: np.random.Generator, scale: float = 0.1) -> AttentionParams:
    def mat():
        return Tensor(rng.normal(0.0, scale, size=(dim, dim)), requires_grad=True)

    def vec():
        return Tensor(np.zeros(dim), requires_grad=True)

    return AttentionParams(mat(), mat(), mat(), vec(), vec(), vec())


def attention_weights(X: Tensor, params: AttentionParams) -> Tensor:
    """Row ``n`` holds the weights query ``n`` assigns to every key ``m``."""
    X = as_tensor(X)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatchError("self-attention needs a non-empty (N, D) batch")
    if X.shape[1] != params.dim:
        raise DimensionError(f"latent width {X.shape[1]} does not match attention dimension {params.dim}")
    Q = matmul(X, transpose(params.omega_q)) + params.beta_q
    K = matmul(X, transpose(params.omega_k)) + params.beta_k
    logits = mul(matmul(Q, transpose(K)), 1.0 / math.sqrt(params.dim))
    return softmax_lastdim(logits)


def self_attention(X: Tensor, params: AttentionParams) -> Tensor:
    """Return the (N, D) attention-weighted values for a batch of N latents."""
    X = as_tensor(X)
    A = attention_weights(X, params)
    V = matmul(X, transpose(params.omega_v)) + params.beta_v
    return matmul(A, V)


def attentive_fuse(z: Tensor, z_att: Tensor) -> Tensor:
    """``z + z * z_att``, elementwise."""
    z, z_att = as_tensor(z), as_tensor(z_att)
    if z.shape != z_att.shape:
        raise DimensionError(f"latent {z.shape} and context {z_att.shape} differ")
    return z + mul(z, z_att)
