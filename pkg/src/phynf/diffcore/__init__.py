from .nn import ACTIVATIONS, MlpParams, init_mlp, mlp_forward
from .optim import AdamState, adam_step
from .tensor import (
    PRIMITIVES,
    ComputationRecord,
    DimensionError,
    Function,
    NonDifferentiableError,
    NumericDomainError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    concat_lastdim,
    div,
    enable_grad,
    exp,
    forward_primitive,
    getitem,
    grad,
    grad_through_grad,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    ones,
    permute,
    reshape,
    sigmoid,
    softmax_lastdim,
    softplus,
    square,
    stack,
    sub,
    sum_to,
    tabs,
    tanh,
    tensor,
    transpose,
    tsum,
    zeros,
)
