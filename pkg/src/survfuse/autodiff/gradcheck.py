"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractError
from .optim import ParamStore
from .tensor import Tape, Tensor, backward, no_tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_checked: int
    deterministic: bool = True
    worst: str | None = None

    @property
    def pass_(self) -> bool:
        return self.passed


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def finite_diff_check(
    closure: Callable[[ParamStore], Tensor],
    store: ParamStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``closure(store)`` with central differences.

    ``closure`` must be deterministic: any noise it uses has to be fixed
    before the call. Every coordinate of every parameter is perturbed unless
    ``max_coords`` limits the check to a random subset.
    """
    if not h > 0:
        raise ContractError(f"step h must be positive, got {h}")

    def value() -> float:
        with no_tape():
            return float(closure(store))

    base = value()
    if value() != base:
        return GradCheckReport(np.inf, False, 0, deterministic=False)

    saved = {k: g.copy() for k, g in store.grads.items()}
    store.zero_grad()
    with Tape() as tape:
        loss = closure(store)
    if tape.records:
        backward(tape, loss, store)
    analytic = {k: g.copy() for k, g in store.grads.items()}
    for k, g in saved.items():
        store.grads[k][...] = g

    coords = [(name, i) for name in store for i in range(store[name].size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[j] for j in sorted(pick)]

    worst, worst_at = 0.0, None
    for name, i in coords:
        flat = store[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = value()
        flat[i] = orig - h
        down = value()
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        err = float(relative_error(analytic[name].reshape(-1)[i], numeric))
        if err > worst or worst_at is None:
            worst, worst_at = max(err, worst), f"{name}[{i}]"
    return GradCheckReport(worst, worst < tol, len(coords), True, worst_at)
