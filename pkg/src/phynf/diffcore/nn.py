"""Multi-layer perceptrons on top of :mod:`phynf.diffcore.tensor`."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DimensionError, Tensor, add, matmul, softplus, tanh

ACTIVATIONS = {
    "tanh": tanh,
    "softplus": softplus,
    "identity": lambda x: x,
}


@dataclass
class MlpParams:
    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]
    name: str = "mlp"
    # cached shapes for the chain check
    dims: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise DimensionError("weights, biases and activations must have equal length")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise DimensionError(
                    f"{self.name}: layer {i} outputs {self.weights[i].shape[1]} "
                    f"but layer {i + 1} expects {self.weights[i + 1].shape[0]}"
                )
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise DimensionError(f"{self.name}: bias shape {b.shape} does not match {w.shape}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.weights:
            self.dims = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{self.name}.{i}.weight"] = w
            out[f"{self.name}.{i}.bias"] = b
        return out


def init_mlp(
    dims: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "tanh",
    out_activation: str = "identity",
    name: str = "mlp",
    zero_last: bool = False,
) -> MlpParams:
    """Glorot-normal weights, zero biases."""
    weights, biases, acts = [], [], []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        std = np.sqrt(2.0 / (fan_in + fan_out))
        w = rng.normal(0.0, std, size=(fan_in, fan_out))
        if zero_last and i == n_layers - 1:
            w = np.zeros_like(w)
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
        acts.append(out_activation if i == n_layers - 1 else hidden_activation)
    return MlpParams(weights, biases, acts, name=name)


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    if x.shape[-1] != params.in_dim:
        raise DimensionError(
            f"{params.name}: input width {x.shape[-1]} does not match first layer {params.in_dim}"
        )
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = ACTIVATIONS[act](add(matmul(h, w), b))
    return h
