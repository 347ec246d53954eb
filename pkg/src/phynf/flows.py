"""Planar normalizing flows with exact log-density bookkeeping.

A planar map is ``g(z) = z + u_hat * tanh(w.z + b)``.  Its Jacobian is a rank-one
update of the identity, so ``log|det J| = log|1 + u_hat.psi(z)|`` with
``psi(z) = tanh'(w.z + b) w``.  ``u_hat`` is ``u`` projected so that
``w.u_hat >= -1``, which keeps every map invertible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, as_tensor, log, mul, softplus, square, sub, tabs, tanh, tsum
from .diffcore.tensor import DimensionError

SINGULAR_TOL = 1e-12


class DegenerateDirectionError(ValueError):
    pass


class SingularJacobianError(ArithmeticError):
    pass


@dataclass
class PlanarFlowParams:
    u: Tensor
    w: Tensor
    b: Tensor

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    def parameters(self, prefix: str = "flow") -> dict[str, Tensor]:
        return {f"{prefix}.u": self.u, f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class FlowChain:
    dim: int
    flows: list[PlanarFlowParams] = field(default_factory=list)

    def __post_init__(self):
        for f in self.flows:
            if f.dim != self.dim or f.w.shape != (self.dim,):
                raise DimensionError(f"flow of dimension {f.dim} in a chain of dimension {self.dim}")

    def __len__(self) -> int:
        return len(self.flows)

    def parameters(self, prefix: str = "chain") -> dict[str, Tensor]:
        out = {}
        for k, f in enumerate(self.flows):
            out.update(f.parameters(f"{prefix}.{k}"))
        return out


def init_flow(dim: int, rng: np.random.Generator, scale: float = 0.1) -> PlanarFlowParams:
    return PlanarFlowParams(
        u=Tensor(rng.normal(0.0, scale, size=dim), requires_grad=True),
        w=Tensor(rng.normal(0.0, scale, size=dim), requires_grad=True),
        b=Tensor(np.zeros(()), requires_grad=True),
    )


def init_chain(n_flows: int, dim: int, rng: np.random.Generator, scale: float = 0.1) -> FlowChain:
    return FlowChain(dim, [init_flow(dim, rng, scale) for _ in range(n_flows)])


def constrain_u(params: PlanarFlowParams) -> Tensor:
    """Project ``u`` so that ``w.u_hat = -1 + softplus(w.u) >= -1``."""
    u, w = params.u, params.w
    w_sq = tsum(square(w))
    if w_sq.data <= 0.0:
        raise DegenerateDirectionError("planar flow direction w is zero")
    wu = tsum(mul(w, u))
    m = softplus(wu) - 1.0
    return u + mul(sub(m, wu) / w_sq, w)


def planar_forward(z: Tensor, params: PlanarFlowParams, u_hat: Tensor | None = None):
    """Apply one planar map to rows of ``z``; returns ``(z_new, log_det)``.

    ``z`` has shape (..., D) and ``log_det`` has the leading shape of ``z``.
    """
    z = as_tensor(z)
    if z.shape[-1] != params.dim:
        raise DimensionError(f"latent width {z.shape[-1]} does not match flow dimension {params.dim}")
    if u_hat is None:
        u_hat = constrain_u(params)
    pre = tsum(mul(z, params.w), axis=-1, keepdims=True) + params.b
    h = tanh(pre)
    z_new = z + mul(h, u_hat)
    wu_hat = tsum(mul(params.w, u_hat))
    det = 1.0 + mul(sub(1.0, square(h)), wu_hat)
    if np.any(np.abs(det.data) < SINGULAR_TOL):
        raise SingularJacobianError("planar flow Jacobian is singular")
    log_det = log(tabs(det))
    return z_new, log_det.reshape(log_det.shape[:-1])


def chain_forward(z0: Tensor, chain: FlowChain):
    """Push ``z0`` through every flow; returns ``(z_K, sum of log-dets)``."""
    z = as_tensor(z0)
    total = Tensor(np.zeros(z.shape[:-1]))
    for params in chain.flows:
        z, ld = planar_forward(z, params)
        total = total + ld
    return z, total


def flow_log_density(log_q0, sum_log_det):
    """``log q_K(z_K) = log q_0(z_0) - sum_k log|det J_k|``."""
    return as_tensor(log_q0) - as_tensor(sum_log_det)
