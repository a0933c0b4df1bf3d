"""Dense and convolutional layers built on the tape primitives."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor, as_tensor

ACTIVATIONS = {
    "identity": T.identity,
    "relu": T.relu,
    "tanh": T.tanh,
    "softplus": T.softplus,
    "sigmoid": T.sigmoid,
    "softmax": T.softmax,
}


def activate(x: Tensor, activation: str) -> Tensor:
    try:
        fn = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}; expected one of {sorted(ACTIVATIONS)}")
    return fn(x)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def dense_forward(x, weights, bias, activation: str = "identity") -> Tensor:
    """``activation(x @ weights + bias)`` for a batch ``x`` of shape (batch, in_dim)."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"dense input must be (batch >= 1, in_dim), got {x.shape}")
    if weights.ndim != 2 or weights.shape[0] != x.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} incompatible with weights {weights.shape}")
    return activate(T.matmul(x, weights) + bias, activation)


def _conv_output_size(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


def conv2d(x, kernels, stride: int = 1) -> Tensor:
    """Valid cross-correlation of (B, C, H, W) input with (F, C, kh, kw) kernels."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernels, got {x.shape} and {kernels.shape}")
    if stride < 1:
        raise DimensionError(f"stride must be a positive int, got {stride}")
    b, c, h, w = x.shape
    f, ck, kh, kw = kernels.shape
    if ck != c:
        raise DimensionError(f"conv2d: input has {c} channels but kernels expect {ck}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    ho, wo = _conv_output_size(h, kh, stride), _conv_output_size(w, kw, stride)
    xd, kd = x.data, kernels.data
    out = np.zeros((b, f, ho, wo))
    for p in range(kh):
        for q in range(kw):
            patch = xd[:, :, p : p + stride * ho : stride, q : q + stride * wo : stride]
            out += np.einsum("bchw,fc->bfhw", patch, kd[:, :, p, q])

    def vjp(g):
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        for p in range(kh):
            for q in range(kw):
                sl = (slice(None), slice(None), slice(p, p + stride * ho, stride), slice(q, q + stride * wo, stride))
                gk[:, :, p, q] = np.einsum("bfhw,bchw->fc", g, xd[sl])
                gx[sl] += np.einsum("bfhw,fc->bchw", g, kd[:, :, p, q])
        return gx, gk

    return T._result(out, (x, kernels), vjp)


def conv2d_forward(x, kernels, bias, stride: int = 1, activation: str = "identity") -> Tensor:
    bias = as_tensor(bias)
    kernels = as_tensor(kernels)
    if bias.shape != (kernels.shape[0],):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {kernels.shape[0]} filters")
    out = conv2d(x, kernels, stride) + T.reshape(bias, (1, -1, 1, 1))
    return activate(out, activation)


def avg_pool2d(x, size: int, stride: int | None = None) -> Tensor:
    """Average pooling with the same valid/floor rule as :func:`conv2d`."""
    x = as_tensor(x)
    stride = size if stride is None else stride
    b, c, h, w = x.shape
    if size > h or size > w:
        raise DimensionError(f"pool size {size} larger than input {h}x{w}")
    ho, wo = _conv_output_size(h, size, stride), _conv_output_size(w, size, stride)
    xd = x.data
    scale = 1.0 / (size * size)
    out = np.zeros((b, c, ho, wo))
    for p in range(size):
        for q in range(size):
            out += xd[:, :, p : p + stride * ho : stride, q : q + stride * wo : stride]
    out *= scale

    def vjp(g):
        gx = np.zeros_like(xd)
        for p in range(size):
            for q in range(size):
                gx[:, :, p : p + stride * ho : stride, q : q + stride * wo : stride] += g * scale
        return (gx,)

    return T._result(out, (x,), vjp)
