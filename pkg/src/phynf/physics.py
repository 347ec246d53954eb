"""Hamiltonian ODE decoder: trainable energy network, RK4, affine readout.

The state is ``(p, q)`` with one degree of freedom.  The energy network sees
``(p, q, z_P)`` and the vector field is ``(-dH/dq, dH/dp)``.  Training has to
differentiate through that gradient, so the field is evaluated either with the
fused kernel primitive (:class:`HamiltonianGrad`, exact closed-form
second-order backward) or generically via ``grad(..., create_graph=True)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .diffcore import (
    Function,
    MlpParams,
    NonDifferentiableError,
    Tensor,
    as_tensor,
    concat_lastdim,
    enable_grad,
    grad,
    init_mlp,
    is_grad_enabled,
    matmul,
    mlp_forward,
    mul,
    permute,
    square,
    stack,
    transpose,
    tsum,
)
from .diffcore.tensor import DimensionError, NumericDomainError

# [dH/dp, dH/dq] @ SYMPLECTIC == [-dH/dq, dH/dp]
SYMPLECTIC = np.array([[0.0, 1.0], [-1.0, 0.0]])


class IntegrationError(ArithmeticError):
    pass


@dataclass
class HamiltonianField:
    """Energy ``H(p, q, z_P)`` given by a two-hidden-layer tanh MLP."""

    mlp: MlpParams
    latent_dim: int = 2
    state_dim: int = 2

    def energy(self, x: Tensor) -> Tensor:
        return mlp_forward(self.mlp, x)

    @property
    def fusable(self) -> bool:
        m = self.mlp
        return len(m.weights) == 3 and m.activations == ["tanh", "tanh", "identity"] and m.out_dim == 1

    def parameters(self, prefix: str = "hamiltonian") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
        return out


class QuadraticHamiltonian:
    """``H = 0.5 * omega * (p^2 + q^2)``: a harmonic oscillator, for diagnostics."""

    fusable = False

    def __init__(self, omega: float = 1.0, latent_dim: int = 0):
        self.omega = omega
        self.latent_dim = latent_dim
        self.state_dim = 2

    def energy(self, x: Tensor) -> Tensor:
        pq = x[:, :2]
        return mul(tsum(square(pq), axis=-1, keepdims=True), 0.5 * self.omega)

    def parameters(self, prefix: str = "hamiltonian") -> dict[str, Tensor]:
        return {}


def init_hamiltonian(rng: np.random.Generator, latent_dim: int = 2, hidden: int = 128) -> HamiltonianField:
    mlp = init_mlp([2 + latent_dim, hidden, hidden, 1], rng, name="hamiltonian")
    return HamiltonianField(mlp, latent_dim=latent_dim)


class HamiltonianGrad(Function):
    """dH/dx for the two-hidden-layer tanh energy network, as one primitive."""

    tag = "hamiltonian_grad"

    @staticmethod
    def forward(ctx, x, W1, b1, W2, b2, w3):
        G, a1, a2, c1 = kernels.hamgrad_forward(x.data, W1.data, b1.data, W2.data, b2.data, w3.data)
        ctx.save(a1, a2, c1)
        return G

    @staticmethod
    def backward(ctx, g):
        if is_grad_enabled():
            raise NonDifferentiableError(
                "hamiltonian_grad has a closed-form backward only; third-order derivatives are unsupported"
            )
        x, W1, _, W2, _, w3 = ctx.inputs
        a1, a2, c1 = ctx.saved
        gx, gW1, gb1, gW2, gb2, gw3 = kernels.hamgrad_backward(
            np.ascontiguousarray(g.data), x.data, W1.data, W2.data, w3.data, a1, a2, c1
        )
        return Tensor(gx), Tensor(gW1), Tensor(gb1), Tensor(gW2), Tensor(gb2), Tensor(gw3)


def energy_gradient(x: Tensor, field, mode: str = "auto") -> Tensor:
    """dH/dx for every row of ``x``; recorded so it can be differentiated again."""
    x = as_tensor(x)
    if mode == "auto":
        mode = "fused" if getattr(field, "fusable", False) else "autodiff"
    if mode == "fused":
        m = field.mlp
        return HamiltonianGrad.apply(x, m.weights[0], m.biases[0], m.weights[1], m.biases[1], m.weights[2])
    if mode != "autodiff":
        raise ValueError(f"unknown field mode {mode!r}")
    outer = is_grad_enabled()
    with enable_grad():
        xin = x if x.requires_grad else Tensor(x.data, requires_grad=True)
        H = field.energy(xin)
        if not np.all(np.isfinite(H.data)):
            raise NumericDomainError("Hamiltonian produced non-finite energy")
        (G,) = grad(tsum(H), [xin], create_graph=outer)
    if G is None:
        G = Tensor(np.zeros(x.shape))
    return G if outer else G.detach()


def hamiltonian_vector_field(state: Tensor, z_p: Tensor | None, field, mode: str = "auto") -> Tensor:
    """Return ``(dp/dt, dq/dt) = (-dH/dq, dH/dp)`` for rows of ``state = (p, q)``."""
    state = as_tensor(state)
    if state.shape[-1] != 2:
        raise DimensionError("phase-space state must be (p, q)")
    x = state if z_p is None or z_p.shape[-1] == 0 else concat_lastdim([state, as_tensor(z_p)])
    G = energy_gradient(x, field, mode)
    return matmul(G[:, :2], Tensor(SYMPLECTIC))


@dataclass(frozen=True)
class IntegrationGrid:
    t0: float = 0.0
    t1: float = 1.0
    n_points: int = 100
    substeps: int = 1

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError("integration grid needs t0 < t1")
        if self.n_points < 2 or self.substeps < 1:
            raise ValueError("integration grid needs at least 2 points and 1 substep")

    @property
    def step(self) -> float:
        return (self.t1 - self.t0) / ((self.n_points - 1) * self.substeps)

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_points)


def rk4_integrate(fn: Callable[[float, Tensor], Tensor], y0: Tensor, grid: IntegrationGrid) -> list[Tensor]:
    """Classical fixed-step RK4; returns the state at every output time."""
    y = as_tensor(y0)
    h = grid.step
    t = grid.t0
    out = [y]
    n_steps = (grid.n_points - 1) * grid.substeps
    for step in range(1, n_steps + 1):
        k1 = fn(t, y)
        k2 = fn(t + 0.5 * h, y + mul(k1, 0.5 * h))
        k3 = fn(t + 0.5 * h, y + mul(k2, 0.5 * h))
        k4 = fn(t + h, y + mul(k3, h))
        y = y + mul(k1 + mul(k2, 2.0) + mul(k3, 2.0) + k4, h / 6.0)
        t = grid.t0 + step * h
        if not np.all(np.isfinite(y.data)):
            raise IntegrationError(f"state became non-finite at RK4 step {step}")
        if step % grid.substeps == 0:
            out.append(y)
    return out


@dataclass
class ReadoutParams:
    """Affine maps between observations and the (p, q) phase space."""

    weight: Tensor  # (M, 2)
    bias: Tensor  # (M,)
    init_weight: Tensor  # (2, M + dim z_P)
    init_bias: Tensor  # (2,)

    def __post_init__(self):
        if self.weight.shape[1] != 2 or self.init_weight.shape[0] != 2 or self.init_bias.shape != (2,):
            raise DimensionError("readout must map a 2-dimensional phase space")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("readout bias does not match readout weight")

    @property
    def n_channels(self) -> int:
        return self.weight.shape[0]

    def parameters(self, prefix: str = "readout") -> dict[str, Tensor]:
        return {
            f"{prefix}.weight": self.weight,
            f"{prefix}.bias": self.bias,
            f"{prefix}.init_weight": self.init_weight,
            f"{prefix}.init_bias": self.init_bias,
        }


def init_readout(n_channels: int, latent_dim: int, rng: np.random.Generator, scale: float = 0.1) -> ReadoutParams:
    """Glorot-normal maps; the output map is shrunk by ``scale`` so f_P starts near its bias."""
    std_out = scale * np.sqrt(2.0 / (2 + n_channels))
    std_in = np.sqrt(2.0 / (n_channels + latent_dim + 2))
    return ReadoutParams(
        weight=Tensor(rng.normal(0.0, std_out, size=(n_channels, 2)), requires_grad=True),
        bias=Tensor(np.zeros(n_channels), requires_grad=True),
        init_weight=Tensor(rng.normal(0.0, std_in, size=(2, n_channels + latent_dim)), requires_grad=True),
        init_bias=Tensor(np.zeros(2), requires_grad=True),
    )


def encode_initial_state(x0: Tensor, z_p: Tensor, readout: ReadoutParams) -> Tensor:
    inp = concat_lastdim([as_tensor(x0), as_tensor(z_p)])
    return matmul(inp, transpose(readout.init_weight)) + readout.init_bias


def physics_decode(
    z_p: Tensor,
    x0: Tensor,
    field,
    readout: ReadoutParams,
    grid: IntegrationGrid,
    mode: str = "auto",
) -> Tensor:
    """Decode ``z_P`` and the first observation column into an (N, M, T) signal."""
    z_p, x0 = as_tensor(z_p), as_tensor(x0)
    if x0.shape[-1] != readout.n_channels:
        raise DimensionError(f"x0 has {x0.shape[-1]} channels, readout expects {readout.n_channels}")
    s0 = encode_initial_state(x0, z_p, readout)
    traj = rk4_integrate(lambda t, s: hamiltonian_vector_field(s, z_p, field, mode), s0, grid)
    states = stack(traj, axis=1)  # (N, T, 2)
    obs = matmul(states, transpose(readout.weight)) + readout.bias  # (N, T, M)
    return permute(obs, (0, 2, 1))
