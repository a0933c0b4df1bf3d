"""Nonparametric reference estimators: Kaplan-Meier and Aalen-Johansen."""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import DataError


class StepFunction:
    """Right-continuous piecewise-constant function of time.

    ``f(t)`` is the value at the largest knot ``<= t`` and
    ``value_before_first`` for ``t`` below the first knot.
    """

    def __init__(self, knots, values, value_before_first: float):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.value_before_first = float(value_before_first)
        if self.knots.shape != self.values.shape or self.knots.ndim != 1:
            raise DataError("knots and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.knots) <= 0):
            raise DataError("knots must be strictly increasing")

    def _lookup(self, t, side: str):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side=side) - 1
        table = np.concatenate([[self.value_before_first], self.values])
        out = table[idx + 1]
        return float(out) if out.ndim == 0 else out

    def __call__(self, t):
        return self._lookup(t, "right")

    def left_limit(self, t):
        """``lim_{s -> t-} f(s)``: the value just before ``t``."""
        return self._lookup(t, "left")

    def to_csv(self) -> str:
        """Two columns ``time,value``; a leading row at time 0 holds the initial value."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "value"])
        if len(self.knots) == 0 or self.knots[0] > 0:
            w.writerow([repr(0.0), repr(self.value_before_first)])
        for k, v in zip(self.knots, self.values):
            w.writerow([repr(float(k)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "StepFunction":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["time", "value"]:
            raise DataError("step-function CSV needs a 'time,value' header")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]]) if len(rows) > 1 else np.zeros((0, 2))
        before = data[0, 1] if len(data) else 1.0
        return cls(data[:, 0], data[:, 1], before)

    def __repr__(self):
        return f"StepFunction({len(self.knots)} knots)"


def _validate(times, events):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if times.ndim != 1 or times.shape != events.shape:
        raise DataError("times and events must be 1-d arrays of equal length")
    if len(times) == 0:
        raise DataError("cannot estimate from an empty sample")
    if np.any(~np.isfinite(times)) or np.any(times < 0):
        raise DataError("times must be finite and >= 0")
    if np.any(events != np.round(events)) or np.any(events < 0):
        raise DataError("event labels must be non-negative integers")
    return times, events.astype(int)


def _risk_table(times, flags):
    """Distinct times, number at risk and number of flagged events at each."""
    uniq, inverse = np.unique(times, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq))
    at_risk = counts[::-1].cumsum()[::-1]
    if flags.ndim == 1:
        d = np.bincount(inverse, weights=flags, minlength=len(uniq))
    else:
        d = np.stack([np.bincount(inverse, weights=f, minlength=len(uniq)) for f in flags])
    return uniq, at_risk, d


def kaplan_meier(times, events, target: str = "event") -> StepFunction:
    """Product-limit estimate of the event-free (or censoring-free) survival.

    ``events`` holds 0 for censored rows and a positive label otherwise; any
    positive label counts as an event. With ``target="censoring"`` the
    indicator is flipped so the result is ``G(t)``, the probability of
    remaining uncensored. All subjects with time ``>= t`` are at risk at
    ``t``, so events at ``t`` are removed before same-time censorings.
    Knots are placed at every distinct observed time.
    """
    times, events = _validate(times, events)
    if target == "event":
        flags = (events > 0).astype(float)
    elif target == "censoring":
        flags = (events == 0).astype(float)
    else:
        raise ValueError(f"target must be 'event' or 'censoring', got {target!r}")
    uniq, at_risk, d = _risk_table(times, flags)
    surv = np.cumprod(1.0 - d / at_risk)
    return StepFunction(uniq, surv, 1.0)


def aalen_johansen(times, events, n_risks: int | None = None) -> list[StepFunction]:
    """Cumulative incidence of each cause, one step function per risk.

    The all-cause drop at each time, ``1 - S(t_j)`` accumulated through the
    product-limit survival, is split between causes in proportion to the
    accumulated increments ``S(t_j-) d_kj / n_j``. This equals the usual
    sum ``CIF_k(t) = sum_{t_j <= t} S(t_j-) d_kj / n_j`` while making the
    causes add up to ``1 - KM`` to rounding, and exactly when ``K = 1``.
    """
    times, events = _validate(times, events)
    K = int(n_risks) if n_risks is not None else max(int(events.max()), 1)
    if K < 1:
        raise DataError("n_risks must be >= 1")
    if events.max() > K:
        raise DataError(f"event label {events.max()} outside 0..{K}")
    flags = np.stack([(events == k).astype(float) for k in range(1, K + 1)])
    uniq, at_risk, d = _risk_table(times, flags)
    d_all = d.sum(axis=0)
    surv = np.cumprod(1.0 - d_all / at_risk)
    surv_before = np.concatenate([[1.0], surv[:-1]])
    increments = np.cumsum(surv_before * d / at_risk, axis=1)
    total = increments.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total > 0, increments / np.where(total > 0, total, 1.0), 0.0)
    cif = share * (1.0 - surv)
    return [StepFunction(uniq, cif[k], 0.0) for k in range(K)]
