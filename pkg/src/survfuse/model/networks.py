"""The individual networks: encoders, decoders, time heads and the event classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParamStore, Tensor
from ..data.schema import FeatureSchema
from ..errors import DimensionError
from ..likelihoods import LOG_VAR_BOUNDS, ColumnLikelihood, DiagGaussian, WeibullParams, covariate_loglik

#: Added after softplus so Weibull parameters stay strictly positive.
POSITIVE_FLOOR = 1e-6


@dataclass
class ModalityConfig:
    """One input modality.

    Tabular modalities carry a :class:`FeatureSchema`; image modalities an
    image shape ``(C, H, W)``. ``hidden`` lists the MLP widths (tabular) or
    convolution channel counts (image).
    """

    name: str
    kind: str
    hidden: list[int]
    latent_dim: int
    schema: FeatureSchema | None = None
    image_shape: tuple[int, int, int] | None = None
    kernel_size: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.kind not in ("tabular", "image"):
            raise ValueError(f"modality kind must be 'tabular' or 'image', got {self.kind!r}")
        if self.latent_dim < 1:
            raise ValueError(f"modality {self.name!r}: latent_dim must be >= 1")
        if not self.hidden:
            raise ValueError(f"modality {self.name!r}: hidden sizes must be non-empty")
        self.hidden = [int(h) for h in self.hidden]
        if self.kind == "tabular" and self.schema is None:
            raise ValueError(f"tabular modality {self.name!r} needs a schema")
        if self.kind == "image":
            if self.image_shape is None or len(self.image_shape) != 3:
                raise ValueError(f"image modality {self.name!r} needs image_shape (C, H, W)")
            self.image_shape = tuple(int(s) for s in self.image_shape)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "hidden": self.hidden,
            "latent_dim": self.latent_dim,
            "schema": self.schema.to_json() if self.schema is not None else None,
            "image_shape": list(self.image_shape) if self.image_shape else None,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ModalityConfig":
        schema = FeatureSchema.from_json(d["schema"]) if d.get("schema") else None
        shape = tuple(d["image_shape"]) if d.get("image_shape") else None
        return cls(d["name"], d["kind"], d["hidden"], d["latent_dim"], schema, shape,
                   d.get("kernel_size", 3), d.get("stride", 1))


class Network:
    """A named group of parameters living in a shared :class:`ParamStore`."""

    role = "network"

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix
        self.param_names: list[str] = []

    def _add(self, name: str, value) -> Tensor:
        full = f"{self.prefix}.{name}"
        self.param_names.append(full)
        return self.store.add(full, value)


class Mlp(Network):
    def __init__(self, store, prefix, sizes, rng, activation="relu", final_activation="identity"):
        super().__init__(store, prefix)
        self.activation = activation
        self.final_activation = final_activation
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = self._add(f"{i}.W", ad.glorot_uniform(rng, (n_in, n_out), n_in, n_out))
            b = self._add(f"{i}.b", np.zeros(n_out))
            self.layers.append((w, b))

    def __call__(self, x) -> Tensor:
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            x = ad.dense_forward(x, w, b, self.final_activation if i == last else self.activation)
        return x


def _split_posterior(out: Tensor, latent_dim: int) -> DiagGaussian:
    mean = out[:, :latent_dim]
    log_var = ad.clip(out[:, latent_dim:], *LOG_VAR_BOUNDS)
    return DiagGaussian(mean, log_var)


class TabularEncoder(Network):
    role = "encoder"

    def __init__(self, store, prefix, config: ModalityConfig, rng, activation="relu"):
        super().__init__(store, prefix)
        self.latent_dim = config.latent_dim
        sizes = [config.schema.input_dim, *config.hidden, 2 * config.latent_dim]
        self.mlp = Mlp(store, prefix, sizes, rng, activation)
        self.param_names = self.mlp.param_names

    def __call__(self, x) -> DiagGaussian:
        return _split_posterior(self.mlp(x), self.latent_dim)


class ImageEncoder(Network):
    """Valid convolutions (one per entry of ``hidden``) followed by a dense layer."""

    role = "encoder"

    def __init__(self, store, prefix, config: ModalityConfig, rng, activation="relu"):
        super().__init__(store, prefix)
        self.latent_dim = config.latent_dim
        self.activation = activation
        self.stride = config.stride
        c, h, w = config.image_shape
        self.convs = []
        for i, channels in enumerate(config.hidden):
            k = config.kernel_size
            if k > h or k > w:
                raise DimensionError(
                    f"modality {config.name!r}: conv layer {i} kernel {k} exceeds feature map {h}x{w}; "
                    "use fewer layers or a smaller kernel"
                )
            fan_in, fan_out = c * k * k, channels * k * k
            kern = self._add(f"conv{i}.K", ad.glorot_uniform(rng, (channels, c, k, k), fan_in, fan_out))
            bias = self._add(f"conv{i}.b", np.zeros(channels))
            self.convs.append((kern, bias))
            c, h, w = channels, (h - k) // self.stride + 1, (w - k) // self.stride + 1
        self.flat_dim = c * h * w
        self.head = Mlp(store, f"{prefix}.out", [self.flat_dim, 2 * config.latent_dim], rng)
        self.param_names += self.head.param_names

    def __call__(self, x) -> DiagGaussian:
        for kern, bias in self.convs:
            x = ad.conv2d_forward(x, kern, bias, self.stride, self.activation)
        x = ad.reshape(x, (x.shape[0], self.flat_dim))
        return _split_posterior(self.head(x), self.latent_dim)


class TabularDecoder(Network):
    """MLP producing the natural parameters of every column's likelihood."""

    role = "decoder"

    def __init__(self, store, prefix, config: ModalityConfig, z_dim: int, rng, activation="relu"):
        super().__init__(store, prefix)
        self.schema = config.schema
        layout, pos = [], 0
        for j, lik in enumerate(self.schema.likelihoods):
            layout.append((j, lik, pos))
            pos += lik.n_params
        self.n_out = pos
        self.mlp = Mlp(store, prefix, [z_dim, *reversed(config.hidden), self.n_out], rng, activation)
        self.param_names = self.mlp.param_names
        gauss = [(j, p) for j, lik, p in layout if lik.kind == "gaussian"]
        bern = [(j, p) for j, lik, p in layout if lik.kind == "bernoulli"]
        self._gauss_cols = np.array([j for j, _ in gauss], dtype=int)
        self._gauss_pos = np.array([p for _, p in gauss], dtype=int)
        self._bern_cols = np.array([j for j, _ in bern], dtype=int)
        self._bern_pos = np.array([p for _, p in bern], dtype=int)
        self._cats = [(j, lik, p) for j, lik, p in layout if lik.kind == "categorical"]

    def loglik(self, z, targets: np.ndarray) -> Tensor:
        """Per-patient reconstruction log-likelihood summed over columns."""
        out = self.mlp(z)
        terms = []
        if len(self._gauss_cols):
            mean = out[:, self._gauss_pos]
            log_var = ad.clip(out[:, self._gauss_pos + 1], *LOG_VAR_BOUNDS)
            ll = covariate_loglik(ColumnLikelihood("gaussian"), (mean, log_var), targets[:, self._gauss_cols])
            terms.append(ll.sum(axis=1))
        if len(self._bern_cols):
            ll = covariate_loglik(ColumnLikelihood("bernoulli"), out[:, self._bern_pos], targets[:, self._bern_cols])
            terms.append(ll.sum(axis=1))
        for j, lik, p in self._cats:
            terms.append(covariate_loglik(lik, out[:, p : p + lik.levels], targets[:, j]))
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total


class ImageDecoder(Network):
    """Dense decoder emitting a full image; scored with the unit-variance MSE likelihood."""

    role = "decoder"

    def __init__(self, store, prefix, config: ModalityConfig, z_dim: int, rng, activation="relu"):
        super().__init__(store, prefix)
        self.image_shape = config.image_shape
        n_pix = int(np.prod(self.image_shape))
        self.mlp = Mlp(store, prefix, [z_dim, config.hidden[-1], n_pix], rng, activation)
        self.param_names = self.mlp.param_names

    def reconstruct(self, z) -> Tensor:
        out = self.mlp(z)
        return ad.reshape(out, (out.shape[0], *self.image_shape))

    def loglik(self, z, targets: np.ndarray) -> Tensor:
        return covariate_loglik(ColumnLikelihood("image_mse"), self.reconstruct(z), targets)


class TimeHead(Network):
    """Maps the latent vector to Weibull (shape, scale) through softplus links."""

    role = "time_head"

    def __init__(self, store, prefix, z_dim: int, hidden: int, rng, activation="relu"):
        super().__init__(store, prefix)
        sizes = [z_dim, hidden, 2] if hidden else [z_dim, 2]
        self.mlp = Mlp(store, prefix, sizes, rng, activation)
        self.param_names = self.mlp.param_names

    def __call__(self, z) -> WeibullParams:
        raw = ad.softplus(self.mlp(z)) + POSITIVE_FLOOR
        return WeibullParams(raw[:, 0], raw[:, 1])


class EventClassifier(Network):
    """Softmax over the K event types; returns log-probabilities."""

    role = "classifier"

    def __init__(self, store, prefix, z_dim: int, hidden: int, n_risks: int, rng, activation="relu"):
        super().__init__(store, prefix)
        sizes = [z_dim, hidden, n_risks] if hidden else [z_dim, n_risks]
        self.mlp = Mlp(store, prefix, sizes, rng, activation)
        self.param_names = self.mlp.param_names

    def __call__(self, z) -> Tensor:
        return ad.log_softmax(self.mlp(z), axis=-1)
