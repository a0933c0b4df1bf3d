"""Minibatch training loop and the covariate-free Weibull fit."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParamStore, Tape, adam_step, backward, no_tape
from ..errors import ContractError, DataError, DomainError, NumericalError
from ..likelihoods import WeibullParams, censored_time_loglik
from .networks import TimeHead
from .samvae import SamvaeModel, model_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ContractError(f"learning rate must be >= 0, got {self.lr}")


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return list(self.rows[0]) if self.rows else ["epoch", "total"]

    def totals(self) -> np.ndarray:
        return np.array([r["total"] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([row["epoch"], *(repr(float(row[c])) for c in self.columns[1:])])
        return buf.getvalue()


def _flatten(terms: dict) -> dict:
    row = {"total": float(terms["total"])}
    for key, value in terms.items():
        if key == "total":
            continue
        if isinstance(value, dict):
            row.update({f"{key}.{m}": v for m, v in value.items()})
        else:
            row[key] = value
    return row


def train(model: SamvaeModel, data, config: TrainConfig | None = None) -> TrainLog:
    """Fit ``model`` with Adam on shuffled minibatches.

    Shuffling, per-step noise and the evaluation noise come from independent
    streams spawned from ``config.seed``, so a run is reproducible bit for
    bit. After every epoch the full-data loss is evaluated with one noise
    draw fixed for the whole run and logged.
    """
    config = config or TrainConfig()
    batch = model.prepare(data)
    n = len(batch)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    shuffle_seq, noise_seq, eval_seq = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    eval_noise = model.draw_noise(n, np.random.default_rng(eval_seq))
    store = model.store
    store.zero_grad()
    history = TrainLog()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sub = batch.subset(order[start : start + config.batch_size])
            noise = model.draw_noise(len(sub), noise_rng)
            try:
                with Tape() as tape:
                    terms = model_loss(model, sub, noise)
            except DomainError as exc:
                # data were validated by prepare(), so this means diverged parameters
                raise NumericalError(f"invalid model output at epoch {epoch}: {exc}", epoch) from None
            if not np.isfinite(float(terms["total"])):
                raise NumericalError(f"non-finite training loss at epoch {epoch}", epoch)
            backward(tape, terms["total"], store)
            if config.lr > 0:
                adam_step(store, config.lr, config.beta1, config.beta2, config.eps)
            else:
                store.zero_grad()
        try:
            with no_tape():
                row = {"epoch": epoch, **_flatten(model_loss(model, batch, eval_noise))}
        except DomainError as exc:
            raise NumericalError(f"invalid model output at epoch {epoch}: {exc}", epoch) from None
        if not all(np.isfinite(v) for v in row.values()):
            raise NumericalError(f"non-finite loss at epoch {epoch}", epoch)
        history.rows.append(row)
        log.debug("epoch %d loss %.6f", epoch, row["total"])
    return history


def fit_marginal_weibull(times, events, epochs: int = 1500, lr: float = 0.05, seed: int = 0) -> WeibullParams:
    """Maximum-likelihood Weibull fit with a covariate-free time head.

    The head has no inputs, so its output reduces to a learned bias passed
    through the softplus links. Times are rescaled by their mean during the
    fit and the returned scale is in the original unit.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events) > 0
    if len(times) == 0:
        raise DataError("cannot fit on an empty sample")
    scale = float(times.mean())
    t = times / scale
    store = ParamStore()
    head = TimeHead(store, "time", 0, 0, np.random.default_rng(seed))
    empty = np.zeros((len(t), 0))
    for _ in range(epochs):
        with Tape() as tape:
            params = head(empty)
            loss = -censored_time_loglik(params, t, events).mean()
        backward(tape, loss, store)
        adam_step(store, lr)
    with no_tape():
        params = head(np.zeros((1, 0)))
    return WeibullParams(float(params.shape.data[0]), float(params.scale.data[0]) * scale)
