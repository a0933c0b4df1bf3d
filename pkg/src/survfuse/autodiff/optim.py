"""Parameter storage and the Adam optimizer."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor


class ParamStore:
    """Named trainable tensors with gradient slots and Adam moments.

    Parameter tensors keep their identity across optimizer steps (their
    ``data`` is updated in place), so graphs built before a step remain
    valid references to the same parameters.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Tensor(value, requires_grad=True, name=name)
        self.params[name] = p
        self.grads[name] = np.zeros_like(p.data)
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def accumulate(self, grads_by_node: dict[int, np.ndarray]):
        for name, p in self.params.items():
            g = grads_by_node.get(p.node_id)
            if g is not None:
                self.grads[name] += g

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise DimensionError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {self.params[name].shape}, got {value.shape}"
                )
            self.params[name].data[...] = value


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    if not lr > 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0.0)
