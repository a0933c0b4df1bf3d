"""Multimodal variational survival model.

Each modality has its own encoder producing a diagonal Gaussian posterior.
Reparameterized samples from all modalities are concatenated into one
latent vector ``z`` that feeds every decoder, every Weibull time head and,
with competing risks, the event-type classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParamStore, Tensor, no_tape
from ..data.records import PatientRecord
from ..errors import ContractError, DataError
from ..likelihoods import DiagGaussian, WeibullParams, censored_time_loglik, kl_diag_gaussian, weibull_terms
from .networks import (
    EventClassifier,
    ImageDecoder,
    ImageEncoder,
    ModalityConfig,
    TabularDecoder,
    TabularEncoder,
    TimeHead,
)

#: Bounds applied to the censored-row survival probability before taking its log.
CENSOR_CLAMP = 1e-12


@dataclass
class Batch:
    """Model-ready arrays for a set of patients (times already rescaled)."""

    ids: list[str]
    inputs: dict[str, np.ndarray]
    targets: dict[str, np.ndarray]
    times: np.ndarray
    events: np.ndarray

    def __len__(self):
        return len(self.times)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(
            [self.ids[i] for i in idx],
            {k: v[idx] for k, v in self.inputs.items()},
            {k: v[idx] for k, v in self.targets.items()},
            self.times[idx],
            self.events[idx],
        )

    def repeat(self, times: int) -> "Batch":
        return self.subset(np.tile(np.arange(len(self)), times))


@dataclass
class LatentSample:
    posteriors: dict[str, DiagGaussian]
    noise: dict[str, np.ndarray]
    samples: dict[str, Tensor]
    z: Tensor


class SamvaeModel:
    """All networks of the model sharing one :class:`ParamStore`.

    With ``n_risks == 1`` the model holds ``2M + 1`` networks (M encoders,
    M decoders, one time head); with ``n_risks = K > 1`` it holds
    ``2M + K + 1`` (K time heads plus the event classifier).
    """

    def __init__(
        self,
        modalities: list[ModalityConfig],
        n_risks: int = 1,
        seed: int = 0,
        head_hidden: int = 32,
        activation: str = "relu",
        time_scale: float = 1.0,
    ):
        if not modalities:
            raise ContractError("at least one modality is required")
        if n_risks < 1:
            raise ContractError(f"n_risks must be >= 1, got {n_risks}")
        names = [m.name for m in modalities]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate modality names in {names}")
        self.modalities = list(modalities)
        self.n_risks = int(n_risks)
        self.seed = int(seed)
        self.head_hidden = int(head_hidden)
        self.activation = activation
        self.time_scale = float(time_scale)
        self.store = ParamStore()

        rng = np.random.default_rng(seed)
        self.z_dim = sum(m.latent_dim for m in modalities)
        self.encoders, self.decoders = {}, {}
        for m in modalities:
            enc_cls = TabularEncoder if m.kind == "tabular" else ImageEncoder
            self.encoders[m.name] = enc_cls(self.store, f"enc.{m.name}", m, rng, activation)
        for m in modalities:
            dec_cls = TabularDecoder if m.kind == "tabular" else ImageDecoder
            self.decoders[m.name] = dec_cls(self.store, f"dec.{m.name}", m, self.z_dim, rng, activation)
        self.time_heads = [
            TimeHead(self.store, f"time.{k + 1}", self.z_dim, head_hidden, rng, activation) for k in range(n_risks)
        ]
        self.classifier = (
            EventClassifier(self.store, "cls", self.z_dim, head_hidden, n_risks, rng, activation)
            if n_risks > 1
            else None
        )

    @property
    def networks(self) -> list:
        nets = [*self.encoders.values(), *self.decoders.values(), *self.time_heads]
        if self.classifier is not None:
            nets.append(self.classifier)
        return nets

    @property
    def modality_names(self) -> list[str]:
        return [m.name for m in self.modalities]

    def config_of(self, name: str) -> ModalityConfig:
        return next(m for m in self.modalities if m.name == name)

    # data preparation ----------------------------------------------------
    def prepare(self, data) -> Batch:
        """Turn records (or an existing batch) into model-ready arrays."""
        if isinstance(data, Batch):
            return data
        if isinstance(data, PatientRecord):
            data = [data]
        records = list(getattr(data, "records", data))
        if not records:
            raise DataError("no records to prepare")
        inputs, targets = {}, {}
        for m in self.modalities:
            missing = [r.patient_id for r in records if m.name not in r.features]
            if missing:
                raise DataError(f"modality {m.name!r} missing for patients {missing[:5]}")
            block = np.stack([np.asarray(r.features[m.name], dtype=float) for r in records])
            if m.kind == "tabular":
                tgt = m.schema.normalize(block)
                targets[m.name] = tgt
                inputs[m.name] = m.schema.encoder_inputs(tgt)
            else:
                if block.shape[1:] != m.image_shape:
                    raise DataError(f"modality {m.name!r}: expected images {m.image_shape}, got {block.shape[1:]}")
                targets[m.name] = inputs[m.name] = block
        events = np.array([r.event for r in records], dtype=int)
        if events.max() > self.n_risks:
            raise DataError(f"event label {events.max()} exceeds number of risks {self.n_risks}")
        times = np.array([r.time for r in records], dtype=float) / self.time_scale
        return Batch([r.patient_id for r in records], inputs, targets, times, events)

    def draw_noise(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {m.name: rng.standard_normal((n, m.latent_dim)) for m in self.modalities}

    def zero_noise(self, n: int) -> dict[str, np.ndarray]:
        return {m.name: np.zeros((n, m.latent_dim)) for m in self.modalities}

    # persistence helpers -------------------------------------------------
    def to_json(self) -> dict:
        return {
            "n_risks": self.n_risks,
            "seed": self.seed,
            "head_hidden": self.head_hidden,
            "activation": self.activation,
            "time_scale": self.time_scale,
            "modalities": [m.to_json() for m in self.modalities],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SamvaeModel":
        mods = [ModalityConfig.from_json(m) for m in d["modalities"]]
        return cls(mods, d["n_risks"], d["seed"], d["head_hidden"], d["activation"], d["time_scale"])


def encode_and_sample(model: SamvaeModel, data, noise: dict[str, np.ndarray]) -> LatentSample:
    """Encode every modality and draw ``z<m> = mu<m> + sigma<m> * eps<m>``."""
    batch = model.prepare(data)
    posteriors, samples, used = {}, {}, {}
    for m in model.modalities:
        if m.name not in noise:
            raise DataError(f"no noise supplied for modality {m.name!r}")
        eps = np.asarray(noise[m.name], dtype=float).reshape(len(batch), m.latent_dim)
        q = model.encoders[m.name](batch.inputs[m.name])
        posteriors[m.name] = q
        samples[m.name] = q.mean + ad.exp(q.log_var * 0.5) * eps
        used[m.name] = eps
    z = ad.concat([samples[m.name] for m in model.modalities], axis=1)
    return LatentSample(posteriors, used, samples, z)


def _kl_and_recon(model: SamvaeModel, batch: Batch, latent: LatentSample):
    kl = None
    for q in latent.posteriors.values():
        term = kl_diag_gaussian(q)
        kl = term if kl is None else kl + term
    recon = {name: model.decoders[name].loglik(latent.z, batch.targets[name]) for name in model.modality_names}
    return kl, recon


def _head_params(model: SamvaeModel, z) -> WeibullParams:
    """Stack every head's parameters into (n, K) tensors."""
    heads = [h(z) for h in model.time_heads]
    shape = ad.stack([p.shape for p in heads], axis=1)
    scale = ad.stack([p.scale for p in heads], axis=1)
    return WeibullParams(shape, scale)


def loss_single_risk(model: SamvaeModel, data, noise) -> dict:
    """Negative ELBO averaged over patients, for a single event type.

    Returns a dict with the differentiable ``total`` and float diagnostics
    ``kl``, ``time_ll`` and ``recon_ll`` (per modality), each a mean over
    patients.
    """
    if model.n_risks != 1:
        raise ContractError("loss_single_risk needs n_risks == 1; use loss_competing_risks")
    batch = model.prepare(data)
    if len(batch) == 0:
        raise DataError("empty batch")
    latent = encode_and_sample(model, batch, noise)
    kl, recon = _kl_and_recon(model, batch, latent)
    params = model.time_heads[0](latent.z)
    time_ll = censored_time_loglik(params, batch.times, batch.events > 0)
    per_patient = time_ll - kl
    for r in recon.values():
        per_patient = per_patient + r
    total = -per_patient.mean()
    return {
        "total": total,
        "kl": float(kl.data.mean()),
        "time_ll": float(time_ll.data.mean()),
        "recon_ll": {k: float(v.data.mean()) for k, v in recon.items()},
    }


def loss_competing_risks(model: SamvaeModel, data, noise) -> dict:
    """Negative competing-risks ELBO averaged over patients.

    Rows with an observed event of type k add the log-density of head k at
    their time plus the classifier log-probability of k; censored rows add
    ``log(1 - sum_k CIF_k(t))``.
    """
    if model.n_risks < 2:
        raise ContractError("loss_competing_risks needs n_risks >= 2; use loss_single_risk")
    batch = model.prepare(data)
    if len(batch) == 0:
        raise DataError("empty batch")
    if batch.events.max() > model.n_risks or batch.events.min() < 0:
        raise DataError(f"event labels must lie in 0..{model.n_risks}")
    latent = encode_and_sample(model, batch, noise)
    kl, recon = _kl_and_recon(model, batch, latent)

    K = model.n_risks
    onehot = np.zeros((len(batch), K))
    observed = batch.events > 0
    onehot[observed, batch.events[observed] - 1] = 1.0
    censored = (~observed).astype(float)

    params = _head_params(model, latent.z)
    terms = weibull_terms(params, batch.times[:, None])
    event_time_ll = ((terms.log_hazard + terms.log_survival) * onehot).sum(axis=1)
    log_probs = model.classifier(latent.z)
    classifier_ll = (log_probs * onehot).sum(axis=1)
    # 1 - sum_k cdf_k p_k, written as sum_k p_k S_k (equal since sum_k p_k = 1)
    surv = (ad.exp(log_probs) * ad.exp(terms.log_survival)).sum(axis=1)
    censor_ll = ad.log(ad.clip(surv, CENSOR_CLAMP, 1.0 - CENSOR_CLAMP)) * censored

    per_patient = event_time_ll + classifier_ll + censor_ll - kl
    for r in recon.values():
        per_patient = per_patient + r
    total = -per_patient.mean()
    return {
        "total": total,
        "kl": float(kl.data.mean()),
        "event_time_ll": float(event_time_ll.data.mean()),
        "classifier_ll": float(classifier_ll.data.mean()),
        "censor_ll": float(censor_ll.data.mean()),
        "recon_ll": {k: float(v.data.mean()) for k, v in recon.items()},
    }


def model_loss(model: SamvaeModel, data, noise) -> dict:
    fn = loss_single_risk if model.n_risks == 1 else loss_competing_risks
    return fn(model, data, noise)


# prediction ----------------------------------------------------------------
def _posterior_means(model: SamvaeModel, batch: Batch) -> dict[str, DiagGaussian]:
    return {m.name: model.encoders[m.name](batch.inputs[m.name]) for m in model.modalities}


def cif_samples(model: SamvaeModel, data, times, num_samples: int = 100, seed: int = 0) -> np.ndarray:
    """Per-draw cumulative incidence curves, shape (S, n, K, T).

    ``times`` are in the original time unit. ``num_samples == 0`` uses the
    posterior means instead of sampling and returns a single draw.
    """
    if num_samples < 0:
        raise ContractError(f"num_samples must be >= 0, got {num_samples}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ContractError("prediction times must be >= 0")
    batch = model.prepare(data)
    n = len(batch)
    with no_tape():
        post = _posterior_means(model, batch)
        draws = max(num_samples, 1)
        rng = np.random.default_rng(seed)
        parts = []
        for m in model.modalities:
            mu, lv = post[m.name].mean.data, post[m.name].log_var.data
            if num_samples == 0:
                z = mu[None]
            else:
                z = mu[None] + np.exp(0.5 * lv)[None] * rng.standard_normal((draws, n, m.latent_dim))
            parts.append(z)
        z = np.concatenate(parts, axis=2).reshape(draws * n, model.z_dim)
        params = _head_params(model, z)
        cdf = weibull_terms(
            WeibullParams(params.shape.data[..., None], params.scale.data[..., None]),
            times / model.time_scale,
        ).cdf
        if model.classifier is not None:
            probs = np.exp(model.classifier(z).data)
            cdf = cdf * probs[..., None]
    return np.asarray(cdf).reshape(draws, n, model.n_risks, len(times))


def predict_cif(model: SamvaeModel, data, t, num_samples: int = 100, seed: int = 0) -> np.ndarray:
    """Monte-Carlo cumulative incidence ``P(T <= t | Y=k, x) P(Y=k | x)`` per risk.

    For a single record and scalar ``t`` the result is a length-K vector;
    otherwise its shape is (n, K, len(t)).
    """
    single = isinstance(data, PatientRecord)
    scalar_t = np.ndim(t) == 0
    out = cif_samples(model, data, t, num_samples, seed).mean(axis=0)
    if scalar_t:
        out = out[..., 0]
    if single:
        out = out[0]
    return out


@dataclass
class SurvivalCurves:
    grid: np.ndarray
    trajectories: np.ndarray  # (n, S, T)
    mean: np.ndarray  # (n, T)
    p5: np.ndarray
    p95: np.ndarray
    ids: list[str] = field(default_factory=list)


def _check_grid(time_grid) -> np.ndarray:
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ContractError("time grid must be a non-empty 1-d sequence")
    if grid[0] != 0:
        raise ContractError("time grid must start at 0")
    if np.any(np.diff(grid) < 0):
        raise ContractError("time grid must be sorted ascending")
    return grid


def predict_survival_curve(model: SamvaeModel, data, time_grid, num_samples: int = 100, seed: int = 0) -> SurvivalCurves:
    """Sampled survival trajectories ``S = 1 - sum_k CIF_k`` with a 5-95% band."""
    grid = _check_grid(time_grid)
    batch = model.prepare(data)
    cifs = cif_samples(model, batch, grid, num_samples, seed)
    traj = np.transpose(1.0 - cifs.sum(axis=2), (1, 0, 2))
    return SurvivalCurves(
        grid,
        traj,
        traj.mean(axis=1),
        np.percentile(traj, 5, axis=1),
        np.percentile(traj, 95, axis=1),
        list(batch.ids),
    )


@dataclass
class CifCurves:
    grid: np.ndarray
    trajectories: np.ndarray  # (n, S, K, T)
    mean: np.ndarray  # (n, K, T)
    p5: np.ndarray
    p95: np.ndarray
    ids: list[str] = field(default_factory=list)


def predict_cif_curves(model: SamvaeModel, data, time_grid, num_samples: int = 100, seed: int = 0) -> CifCurves:
    grid = _check_grid(time_grid)
    batch = model.prepare(data)
    traj = np.transpose(cif_samples(model, batch, grid, num_samples, seed), (1, 0, 2, 3))
    return CifCurves(
        grid,
        traj,
        traj.mean(axis=1),
        np.percentile(traj, 5, axis=1),
        np.percentile(traj, 95, axis=1),
        list(batch.ids),
    )
