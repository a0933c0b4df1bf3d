"""Synthetic cohorts with known Weibull ground truth.

Covariates are standard normal per tabular modality. Image modalities are
rendered from two standard-normal factors per patient (a fixed random
template per factor plus pixel noise); the factors, not the pixels, enter
the linear predictor. Each risk ``k`` has a latent time
``T_k ~ Weibull(shape_k, base_scale_k * exp(-beta_k . x))`` and the observed
outcome is ``(min_k T_k, argmin_k T_k)`` under independent uniform
censoring ``C ~ U(0, c_max)``, with ``c_max`` tuned to a target censoring
fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ..errors import ContractError, DataError
from .records import Cohort, PatientRecord
from .schema import FeatureSchema

IMAGE_FACTORS = 2
CENSORING_TOLERANCE = 0.02


@dataclass
class SynthSpec:
    n: int
    n_risks: int = 1
    modality_dims: dict[str, int] = field(default_factory=lambda: {"clinical": 4, "omics": 6})
    image_shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    betas: list | None = None
    shapes: list[float] | None = None
    base_scales: list[float] | None = None
    censoring_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("n must be >= 1")
        if not 0 <= self.censoring_fraction < 1:
            raise ContractError(f"censoring fraction must lie in [0, 1), got {self.censoring_fraction}")
        if any(d < 1 for d in self.modality_dims.values()):
            raise ContractError("modality dimensions must be >= 1")
        if self.shapes is None:
            self.shapes = [1.5] * self.n_risks
        if self.base_scales is None:
            self.base_scales = [1.0] * self.n_risks
        if self.betas is None:
            self.betas = [np.zeros(self.n_covariates) for _ in range(self.n_risks)]
        self.betas = [np.asarray(b, dtype=float) for b in self.betas]
        if len(self.betas) != self.n_risks or len(self.shapes) != self.n_risks or len(self.base_scales) != self.n_risks:
            raise ContractError("betas, shapes and base_scales need one entry per risk")
        for b in self.betas:
            if b.shape != (self.n_covariates,):
                raise ContractError(f"each beta must have length {self.n_covariates}, got {b.shape}")

    @property
    def n_covariates(self) -> int:
        return sum(self.modality_dims.values()) + IMAGE_FACTORS * len(self.image_shapes)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "n_risks": self.n_risks,
            "modality_dims": dict(self.modality_dims),
            "image_shapes": {k: list(v) for k, v in self.image_shapes.items()},
            "betas": [b.tolist() for b in self.betas],
            "shapes": list(self.shapes),
            "base_scales": list(self.base_scales),
            "censoring_fraction": self.censoring_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["image_shapes"] = {k: tuple(v) for k, v in d.get("image_shapes", {}).items()}
        return cls(**d)


@dataclass
class SimulationTruth:
    covariates: np.ndarray  # (n, p)
    shapes: np.ndarray  # (K,)
    scales: np.ndarray  # (n, K)
    latent_times: np.ndarray  # (n, K)
    censor_max: float
    oracle_c_index: list[float]

    @property
    def risk_scores(self) -> np.ndarray:
        """Linear predictors; larger means earlier failure for that cause."""
        return -np.log(self.scales)

    def survival(self, t) -> np.ndarray:
        """All-cause survival, shape (n, len(t))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cumhaz = (t[None, None, :] / self.scales[:, :, None]) ** self.shapes[None, :, None]
        return np.exp(-cumhaz.sum(axis=1))

    def cif(self, t) -> np.ndarray:
        """True cumulative incidence per cause, shape (n, K, len(t))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lam, k = self.scales, self.shapes
        if np.allclose(k, k[0]):
            rate = lam ** -k[0]
            share = rate / rate.sum(axis=1, keepdims=True)
            return share[:, :, None] * (1.0 - self.survival(t))[:, None, :]

        def integrand(s):
            if s == 0:
                s = 1e-300
            hazard = (k / lam) * (s / lam) ** (k - 1.0)
            surv = np.exp(-((s / lam) ** k).sum(axis=1, keepdims=True))
            return (hazard * surv).ravel()

        out = np.zeros((*lam.shape, len(t)))
        for j, tj in enumerate(t):
            if tj > 0:
                out[:, :, j] = integrate.quad_vec(integrand, 0.0, tj, epsabs=1e-12, epsrel=1e-10)[0].reshape(lam.shape)
        return out


def _draw_covariates(spec: SynthSpec, rng: np.random.Generator):
    blocks, factors = {}, []
    for name, dim in spec.modality_dims.items():
        blocks[name] = rng.standard_normal((spec.n, dim))
        factors.append(blocks[name])
    for name, shape in spec.image_shapes.items():
        u = rng.standard_normal((spec.n, IMAGE_FACTORS))
        templates = rng.standard_normal((IMAGE_FACTORS, *shape))
        noise = 0.1 * rng.standard_normal((spec.n, *shape))
        blocks[name] = np.tensordot(u, templates, axes=1) + noise
        factors.append(u)
    x = np.concatenate(factors, axis=1) if factors else np.zeros((spec.n, 0))
    return blocks, x


def _tune_censoring(event_times: np.ndarray, v: np.ndarray, target: float) -> float:
    """Find ``c_max`` so that the fraction with ``c_max * v < T`` is near ``target``."""
    if target == 0:
        return np.inf

    def frac(c):
        return float(np.mean(c * v < event_times))

    lo, hi = 1e-9 * event_times.min(), 1e6 * event_times.max()
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if frac(mid) > target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda c: abs(frac(c) - target))
    if abs(frac(best) - target) > CENSORING_TOLERANCE:
        raise DataError(
            f"censoring fraction {target} unreachable within {CENSORING_TOLERANCE}; "
            f"nearest achievable values are {frac(hi):.4f} and {frac(lo):.4f}"
        )
    return float(best)


def _oracle_c_index(times, events, risk, cause) -> float:
    """Brute-force Harrell-type pair count of a known risk score for one cause."""
    num = den = 0.0
    n = len(times)
    for i in range(n):
        if events[i] != cause:
            continue
        for j in range(n):
            if times[i] < times[j]:
                den += 1
                if risk[i] > risk[j]:
                    num += 1
                elif risk[i] == risk[j]:
                    num += 0.5
    return num / den if den else 0.5


def _simulate(spec: SynthSpec):
    rng = np.random.default_rng(spec.seed)
    blocks, x = _draw_covariates(spec, rng)
    shapes = np.asarray(spec.shapes, dtype=float)
    linpred = np.stack([x @ b for b in spec.betas], axis=1)
    scales = np.asarray(spec.base_scales)[None, :] * np.exp(-linpred)
    u = rng.uniform(size=(spec.n, spec.n_risks))
    latent = scales * (-np.log1p(-u)) ** (1.0 / shapes)
    event_times = latent.min(axis=1)
    cause = latent.argmin(axis=1) + 1
    v = rng.uniform(size=spec.n)
    c_max = _tune_censoring(event_times, v, spec.censoring_fraction)
    censor = np.maximum(c_max * v, np.finfo(float).tiny) if np.isfinite(c_max) else np.full(spec.n, np.inf)
    observed = event_times <= censor
    times = np.where(observed, event_times, censor)
    events = np.where(observed, cause, 0)

    truth = SimulationTruth(x, shapes, scales, latent, c_max, [])
    if spec.n_risks == 1:
        truth.oracle_c_index = [_oracle_c_index(times, events, linpred[:, 0], 1)]
    else:
        t_eval = times[events > 0].max() if np.any(events > 0) else times.max()
        cif = truth.cif([t_eval])[:, :, 0]
        truth.oracle_c_index = [_oracle_c_index(times, events, cif[:, k], k + 1) for k in range(spec.n_risks)]

    records = [
        PatientRecord(f"p{i:05d}", {name: block[i] for name, block in blocks.items()}, float(times[i]), int(events[i]))
        for i in range(spec.n)
    ]
    schemas = {
        name: FeatureSchema.infer([f"{name}_{j}" for j in range(dim)], blocks[name])
        for name, dim in spec.modality_dims.items()
    }
    cohort = Cohort(records, schemas, dict(spec.image_shapes), spec.n_risks)
    return cohort, truth


def simulate_single_risk(spec: SynthSpec) -> tuple[Cohort, SimulationTruth]:
    """Single-risk Weibull cohort and its ground truth."""
    if spec.n_risks != 1:
        raise ContractError("simulate_single_risk needs n_risks == 1")
    return _simulate(spec)


def simulate_competing_risks(spec: SynthSpec) -> tuple[Cohort, SimulationTruth]:
    """Latent-failure-time competing-risks cohort and its ground truth."""
    if spec.n_risks < 2:
        raise ContractError("simulate_competing_risks needs n_risks >= 2")
    return _simulate(spec)
