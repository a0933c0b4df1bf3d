"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from .gradcheck import GradCheckReport, finite_diff_check, relative_error
from .layers import activate, avg_pool2d, conv2d, conv2d_forward, dense_forward, glorot_uniform
from .optim import ParamStore, adam_step
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    div,
    exp,
    expm1,
    log,
    log_sigmoid,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_tape,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    stack,
    sub,
    sum_,
    take,
    tanh,
)

__all__ = [name for name in dir() if not name.startswith("_")]
