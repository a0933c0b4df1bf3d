"""Closed-form log-likelihoods used by the model.

Every function accepts either plain numbers/arrays or autodiff tensors. With
plain inputs the result is returned as a numpy value (a float for scalars);
as soon as one argument is a :class:`~survfuse.autodiff.Tensor` the result is
a tensor recorded on the active tape.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, fields, is_dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError

#: Times are floored at this multiple of the time scale inside log terms.
T_FLOOR = 1e-8
LOG_VAR_BOUNDS = (-10.0, 10.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _has_tensor(obj) -> bool:
    if isinstance(obj, Tensor):
        return True
    if isinstance(obj, (list, tuple)):
        return any(_has_tensor(o) for o in obj)
    if isinstance(obj, dict):
        return any(_has_tensor(o) for o in obj.values())
    if is_dataclass(obj) and not isinstance(obj, type):
        return any(_has_tensor(getattr(obj, f.name)) for f in fields(obj))
    return False


def _plain(x):
    if isinstance(x, Tensor):
        return x.item() if x.ndim == 0 else x.data
    if isinstance(x, tuple) and hasattr(x, "_fields"):
        return type(x)(*(_plain(v) for v in x))
    return x


def _dual(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        if _has_tensor(args) or _has_tensor(kwargs):
            return out
        return _plain(out)

    return wrapper


@dataclass
class WeibullParams:
    """Shape ``k`` (dimensionless) and scale ``lam`` (time units), both > 0."""

    shape: object
    scale: object

    def __post_init__(self):
        for label, v in (("shape", self.shape), ("scale", self.scale)):
            data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=float)
            if not np.all(data > 0):
                raise DomainError(f"Weibull {label} must be strictly positive")


@dataclass
class DiagGaussian:
    """Diagonal Gaussian given by its mean and log-variance vectors."""

    mean: object
    log_var: object

    def __post_init__(self):
        m = self.mean.shape if isinstance(self.mean, Tensor) else np.shape(self.mean)
        v = self.log_var.shape if isinstance(self.log_var, Tensor) else np.shape(self.log_var)
        if m != v:
            raise DomainError(f"mean shape {m} differs from log-variance shape {v}")


@dataclass(frozen=True)
class ColumnLikelihood:
    kind: str
    levels: int | None = None

    KINDS = ("gaussian", "bernoulli", "categorical", "image_mse")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.kind == "categorical" and (self.levels is None or self.levels < 2):
            raise ValueError("categorical columns need at least 2 levels")

    @property
    def n_params(self) -> int:
        """Number of decoder outputs needed to parameterize this column."""
        return {"gaussian": 2, "bernoulli": 1, "image_mse": 1}.get(self.kind, self.levels or 0)

    def to_json(self) -> dict:
        return {"kind": self.kind, "levels": self.levels}

    @classmethod
    def from_json(cls, d: dict) -> "ColumnLikelihood":
        return cls(d["kind"], d.get("levels"))


class WeibullTerms(NamedTuple):
    log_hazard: object
    log_survival: object
    cdf: object


def _check_times(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("event times must be finite")
    if np.any(t < 0):
        raise DomainError(f"event times must be >= 0, got min {t.min()}")
    return t


@_dual
def weibull_terms(params: WeibullParams, t, time_scale: float = 1.0) -> WeibullTerms:
    """Log-hazard, log-survival and CDF of a Weibull distribution at ``t``.

    ``t`` broadcasts against the parameters. Times are floored at
    ``T_FLOOR * time_scale`` inside the logarithms; the cumulative hazard
    is exactly zero at ``t == 0`` so that survival is 1 there.
    """
    t = _check_times(t)
    floored = np.maximum(t, T_FLOOR * time_scale)
    started = (t > 0).astype(float)
    k = ad.as_tensor(params.shape)
    log_scale = ad.log(params.scale)
    log_ratio = np.log(floored) - log_scale
    log_hazard = ad.log(k) - log_scale + (k - 1.0) * log_ratio
    log_survival = -(ad.exp(k * log_ratio) * started)
    cdf = -ad.expm1(log_survival)
    return WeibullTerms(log_hazard, log_survival, cdf)


@_dual
def censored_time_loglik(params: WeibullParams, t, event, time_scale: float = 1.0):
    """Log-likelihood of an observed time under right censoring.

    Observed events contribute ``log h(t) + log S(t)`` and censored rows
    ``log S(t)`` only.
    """
    terms = weibull_terms(params, t, time_scale)
    event = np.asarray(event, dtype=float)
    return terms.log_hazard * event + terms.log_survival


@_dual
def weibull_log_density(params: WeibullParams, t, time_scale: float = 1.0):
    terms = weibull_terms(params, t, time_scale)
    return terms.log_hazard + terms.log_survival


@_dual
def covariate_loglik(kind: ColumnLikelihood, predicted, observed):
    """Per-column reconstruction log-likelihood.

    ``predicted`` holds the natural parameters of the column distribution:

    * gaussian: a ``(mean, log_var)`` pair
    * bernoulli: the logit of the success probability
    * categorical: logits over the levels (last axis)
    * image_mse: the reconstructed image; the sum over the last three axes
      of ``-(x - x_hat)**2 / 2`` is returned (unit variance, constant dropped)
    """
    if kind.kind == "gaussian":
        mean, log_var = predicted
        obs = np.asarray(observed, dtype=float)
        resid = obs - ad.as_tensor(mean)
        log_var = ad.as_tensor(log_var)
        return -(HALF_LOG_2PI + 0.5 * log_var + 0.5 * resid * resid * ad.exp(-log_var))
    if kind.kind == "bernoulli":
        obs = np.asarray(observed, dtype=float)
        if not np.all((obs == 0) | (obs == 1)):
            raise DomainError("bernoulli observations must be 0 or 1")
        logit = ad.as_tensor(predicted)
        return obs * logit - ad.softplus(logit)
    if kind.kind == "categorical":
        obs = np.asarray(observed)
        if not np.all((obs == np.round(obs)) & (obs >= 0) & (obs < kind.levels)):
            raise DomainError(f"categorical observation outside levels 0..{kind.levels - 1}")
        onehot = np.eye(kind.levels)[obs.astype(int)]
        return (ad.log_softmax(predicted, axis=-1) * onehot).sum(axis=-1)
    diff = np.asarray(observed, dtype=float) - ad.as_tensor(predicted)
    return (diff * diff).sum(axis=(-3, -2, -1)) * -0.5


@_dual
def kl_diag_gaussian(q: DiagGaussian):
    """KL divergence from ``q`` to the standard normal, summed over the last axis."""
    mu = ad.as_tensor(q.mean)
    lv = ad.as_tensor(q.log_var)
    return ((mu * mu + ad.exp(lv) - lv - 1.0) * 0.5).sum(axis=-1)
