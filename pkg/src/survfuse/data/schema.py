"""Column typing and train-split normalization for tabular modalities."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DataError
from ..likelihoods import ColumnLikelihood

#: Integer-valued columns with at most this many distinct values are categorical.
CATEGORICAL_MAX_LEVELS = 10


@dataclass
class ColumnSpec:
    name: str
    likelihood: ColumnLikelihood
    mean: float = 0.0
    std: float = 1.0
    categories: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "likelihood": self.likelihood.to_json(),
            "mean": self.mean,
            "std": self.std,
            "categories": list(self.categories),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ColumnSpec":
        return cls(d["name"], ColumnLikelihood.from_json(d["likelihood"]), d["mean"], d["std"], d["categories"])


def infer_likelihood(values: np.ndarray) -> ColumnLikelihood:
    """Type a raw column: {0,1} is bernoulli, few integer levels categorical, else gaussian."""
    values = np.asarray(values, dtype=float)
    distinct = np.unique(values)
    if len(distinct) <= 2 and set(distinct.tolist()) <= {0.0, 1.0}:
        return ColumnLikelihood("bernoulli")
    if np.all(distinct == np.round(distinct)) and 2 <= len(distinct) <= CATEGORICAL_MAX_LEVELS:
        return ColumnLikelihood("categorical", levels=len(distinct))
    return ColumnLikelihood("gaussian")


def parse_override(spec) -> ColumnLikelihood:
    """Manifest override: ``"gaussian"``, ``"bernoulli"``, ``"categorical(3)"`` or a dict."""
    if isinstance(spec, dict):
        return ColumnLikelihood.from_json(spec)
    spec = str(spec).strip()
    if spec.startswith("categorical"):
        inner = spec[len("categorical") :].strip("() ")
        return ColumnLikelihood("categorical", levels=int(inner))
    return ColumnLikelihood(spec)


@dataclass
class FeatureSchema:
    """Per-column likelihood families plus normalization statistics.

    Statistics are meant to be computed on the training split only (see
    :meth:`fit`) and then applied unchanged to any other split.
    """

    columns: list[ColumnSpec]

    @classmethod
    def infer(cls, names, matrix, overrides: dict | None = None) -> "FeatureSchema":
        overrides = overrides or {}
        matrix = np.asarray(matrix, dtype=float)
        cols = []
        for j, name in enumerate(names):
            lik = parse_override(overrides[name]) if name in overrides else infer_likelihood(matrix[:, j])
            cols.append(ColumnSpec(name, lik))
        return cls(cols)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def likelihoods(self) -> list[ColumnLikelihood]:
        return [c.likelihood for c in self.columns]

    def __len__(self):
        return len(self.columns)

    def fit(self, matrix) -> "FeatureSchema":
        """Return a copy whose statistics are estimated from ``matrix``."""
        matrix = np.asarray(matrix, dtype=float)
        cols = []
        for j, col in enumerate(self.columns):
            x = matrix[:, j]
            kind = col.likelihood.kind
            if kind == "gaussian":
                sd = float(x.std())
                cols.append(replace(col, mean=float(x.mean()), std=sd if sd > 0 else 1.0))
            elif kind == "categorical":
                cats = sorted(set(np.unique(x).tolist()) | set(col.categories))
                if len(cats) > col.likelihood.levels:
                    raise DataError(
                        f"column {col.name!r} has {len(cats)} distinct values but {col.likelihood.levels} levels"
                    )
                while len(cats) < col.likelihood.levels:
                    cats.append(max(cats) + 1 if cats else float(len(cats)))
                cols.append(replace(col, categories=cats))
            else:
                cols.append(replace(col))
        return FeatureSchema(cols)

    def normalize(self, matrix) -> np.ndarray:
        """Raw values to model targets (standardized reals, 0/1, level indices)."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.columns):
            raise DataError(f"expected {len(self.columns)} columns, got array of shape {matrix.shape}")
        out = np.empty_like(matrix)
        for j, col in enumerate(self.columns):
            x = matrix[:, j]
            kind = col.likelihood.kind
            if kind == "gaussian":
                out[:, j] = (x - col.mean) / col.std
            elif kind == "categorical":
                lookup = {v: i for i, v in enumerate(col.categories)}
                try:
                    out[:, j] = [lookup[v] for v in x.tolist()]
                except KeyError as exc:
                    raise DataError(f"column {col.name!r}: unseen category {exc.args[0]}") from None
            else:
                if not np.all((x == 0) | (x == 1)):
                    raise DataError(f"bernoulli column {col.name!r} has values outside {{0, 1}}")
                out[:, j] = x
        return out

    def denormalize(self, targets) -> np.ndarray:
        targets = np.asarray(targets, dtype=float)
        out = np.empty_like(targets)
        for j, col in enumerate(self.columns):
            x = targets[:, j]
            kind = col.likelihood.kind
            if kind == "gaussian":
                out[:, j] = x * col.std + col.mean
            elif kind == "categorical":
                out[:, j] = np.asarray(col.categories)[x.astype(int)]
            else:
                out[:, j] = x
        return out

    @property
    def input_dim(self) -> int:
        return sum(c.likelihood.levels if c.likelihood.kind == "categorical" else 1 for c in self.columns)

    def encoder_inputs(self, targets) -> np.ndarray:
        """Normalized targets with categorical columns expanded to one-hot."""
        targets = np.asarray(targets, dtype=float)
        parts = []
        for j, col in enumerate(self.columns):
            if col.likelihood.kind == "categorical":
                parts.append(np.eye(col.likelihood.levels)[targets[:, j].astype(int)])
            else:
                parts.append(targets[:, j : j + 1])
        return np.concatenate(parts, axis=1) if parts else np.zeros((len(targets), 0))

    def to_json(self) -> dict:
        return {"columns": [c.to_json() for c in self.columns]}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureSchema":
        return cls([ColumnSpec.from_json(c) for c in d["columns"]])
