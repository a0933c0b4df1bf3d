"""Run configuration and the train/evaluate glue shared by the CLI and the tests."""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Cohort, load_dataset, split
from .errors import ContractError, DataError
from .metrics import EvalReport, PredictionMatrix, default_eval_time, evaluate
from .model import ModalityConfig, SamvaeModel, TrainConfig, TrainLog, cif_samples, train
from .stats import SeedMetrics, SummaryStat, aggregate_seeds

DEFAULT_LATENT = 4
DEFAULT_HIDDEN = [32]


@dataclass
class ModalityHyper:
    latent_dim: int = DEFAULT_LATENT
    hidden: list[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    kernel_size: int = 3
    stride: int = 1


@dataclass
class RunConfig:
    """Everything needed to reproduce a train/evaluate run.

    ``modalities`` maps a dataset modality name to its hyperparameters;
    an empty mapping uses every modality of the dataset with defaults.
    ``num_samples`` is the number of latent draws used at prediction time
    (0 uses posterior means).
    """

    dataset: str = ""
    modalities: dict[str, ModalityHyper] = field(default_factory=dict)
    test_fraction: float = 0.2
    split_seed: int = 0
    head_hidden: int = 32
    activation: str = "relu"
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    seeds: list[int] = field(default_factory=lambda: [0])
    num_samples: int = 100
    n_grid: int = 100
    selection: bool = False
    out: str = "results"

    def __post_init__(self):
        self.modalities = {
            name: h if isinstance(h, ModalityHyper) else ModalityHyper(**h) for name, h in self.modalities.items()
        }
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ContractError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ContractError(f"seeds must be distinct: {self.seeds}")
        if self.selection and len(self.seeds) < 3:
            raise ContractError(f"the selection protocol needs at least 3 seeds, got {len(self.seeds)}")
        if not 0 < self.test_fraction < 1:
            raise ContractError("test_fraction must lie in (0, 1)")
        if self.num_samples < 0:
            raise ContractError("num_samples must be >= 0")
        TrainConfig(self.epochs, self.batch_size, self.lr)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict, base_dir=None) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__) - {"grid", "configs", "master_seed"}
        if unknown:
            raise ContractError(f"unknown config keys {sorted(unknown)}")
        for key in ("grid", "configs", "master_seed"):
            d.pop(key, None)
        cfg = cls(**d)
        if base_dir is not None and cfg.dataset and not Path(cfg.dataset).is_absolute():
            cfg.dataset = str(Path(base_dir) / cfg.dataset)
        return cfg

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, seed)


def load_config(path) -> tuple[RunConfig, dict]:
    """Read a JSON run config; returns the config and the raw document."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    try:
        return RunConfig.from_json(raw, path.parent), raw
    except TypeError as exc:
        raise ContractError(f"{path}: {exc}") from None


def load_split(config: RunConfig) -> tuple[Cohort, Cohort]:
    cohort = load_dataset(config.dataset)
    if len(cohort) == 0:
        raise DataError(cohort.diagnostics.get("message", "dataset is empty"))
    return split(cohort, config.test_fraction, config.split_seed)


def build_model(config: RunConfig, train_set: Cohort, seed: int) -> SamvaeModel:
    """Model whose schemas are fitted on ``train_set`` and whose time unit is its mean time."""
    wanted = config.modalities or {name: ModalityHyper() for name in train_set.modality_names}
    mods = []
    for name, h in wanted.items():
        if name in train_set.schemas:
            schema = train_set.schemas[name].fit(train_set.block(name))
            mods.append(ModalityConfig(name, "tabular", h.hidden, h.latent_dim, schema,
                                       kernel_size=h.kernel_size, stride=h.stride))
        elif name in train_set.image_shapes:
            mods.append(ModalityConfig(name, "image", h.hidden, h.latent_dim, image_shape=train_set.image_shapes[name],
                                       kernel_size=h.kernel_size, stride=h.stride))
        else:
            raise DataError(f"config names modality {name!r} absent from the dataset {train_set.modality_names}")
    return SamvaeModel(mods, train_set.n_risks, seed, config.head_hidden, config.activation,
                       time_scale=float(train_set.times.mean()))


def fit_seed(config: RunConfig, train_set: Cohort, seed: int) -> tuple[SamvaeModel, TrainLog]:
    model = build_model(config, train_set, seed)
    return model, train(model, train_set, config.train_config(seed))


def prediction_matrix(model: SamvaeModel, cohort: Cohort, grid, num_samples: int = 100, seed: int = 0) -> PredictionMatrix:
    """Monte-Carlo mean incidence of every cause on ``grid`` (posterior means if ``num_samples == 0``)."""
    values = cif_samples(model, cohort, grid, num_samples, seed).mean(axis=0)
    # averaging can leave rounding-level dips; curves are monotone by construction
    values = np.maximum.accumulate(np.clip(values, 0.0, 1.0), axis=2)
    return PredictionMatrix(values, grid, cohort.times, cohort.events)


def evaluate_model(model: SamvaeModel, test_set: Cohort, num_samples: int = 100, seed: int = 0,
                   n_grid: int = 100, paper_compat: bool = False) -> EvalReport:
    """C-index at the last test event time and IBS over ``n_grid`` points up to it."""
    t_eval = default_eval_time(test_set.times, test_set.events)
    grid = np.linspace(0.0, t_eval, n_grid)
    pred = prediction_matrix(model, test_set, grid, num_samples, seed)
    report = evaluate(pred, t_eval, n_grid, paper_compat)
    report.aggregation["num_samples"] = num_samples
    return report


def combine_reports(per_seed: dict[int, EvalReport], top: int = 3) -> EvalReport:
    """Fold single-seed reports into one; with >= ``top`` seeds the headline values are top-``top`` means."""
    seeds = sorted(per_seed)
    first = per_seed[seeds[0]]
    breakdown = {
        str(s): {
            "c_index": per_seed[s].c_index,
            "ibs": per_seed[s].ibs,
            "ci_minus_ibs": per_seed[s].ci_minus_ibs,
            "n_excluded_G_zero": per_seed[s].n_excluded_G_zero,
        }
        for s in seeds
    }
    agg = {k: v for k, v in first.aggregation.items()}
    if len(seeds) >= top:
        summary = aggregate_seeds([SeedMetrics(s, tuple(per_seed[s].c_index), tuple(per_seed[s].ibs)) for s in seeds], top)
        c = [st.mean for st in summary.c_index]
        b = [st.mean for st in summary.ibs]
        agg.update({
            "rule": f"top-{top} seeds by CI-IBS",
            "selected_seeds": summary.seeds,
            "c_index_std": [st.std for st in summary.c_index],
            "ibs_std": [st.std for st in summary.ibs],
            "n": top,
        })
        excl = [max(per_seed[s].n_excluded_G_zero[k] for s in summary.seeds) for k in range(len(c))]
    else:
        c = list(np.mean([per_seed[s].c_index for s in seeds], axis=0))
        b = list(np.mean([per_seed[s].ibs for s in seeds], axis=0))
        agg.update({"rule": "mean over all seeds", "selected_seeds": seeds})
        excl = [max(per_seed[s].n_excluded_G_zero[k] for s in seeds) for k in range(len(c))]
    return EvalReport(list(first.risks), [float(v) for v in c], [float(v) for v in b], excl, breakdown, agg)


def summary_stats(report: EvalReport) -> tuple[list[SummaryStat], list[SummaryStat]]:
    """Per-risk summary statistics recorded by :func:`combine_reports` (top-3 protocol only)."""
    agg = report.aggregation
    if "c_index_std" not in agg:
        raise ContractError("report was not aggregated over enough seeds")
    n = agg["n"]
    return (
        [SummaryStat(m, s, n) for m, s in zip(report.c_index, agg["c_index_std"])],
        [SummaryStat(m, s, n) for m, s in zip(report.ibs, agg["ibs_std"])],
    )


# -- grids -----------------------------------------------------------------
def _set_path(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    target = doc
    for key in keys[:-1]:
        target = target.setdefault(key, {})
    target[keys[-1]] = value


def expand_grid(raw: dict) -> list[tuple[str, dict]]:
    """Configurations of a grid document, in declaration order.

    ``grid`` maps dotted keys (``"modalities.omics.latent_dim"``) to lists of
    values and expands to their Cartesian product; ``configs`` is an
    explicit list of override documents. Both may be present.
    """
    base = {k: v for k, v in raw.items() if k not in ("grid", "configs")}
    out = []
    grid = raw.get("grid") or {}
    if grid:
        keys = list(grid)
        for values in itertools.product(*(grid[k] for k in keys)):
            doc = copy.deepcopy(base)
            for k, v in zip(keys, values):
                _set_path(doc, k, v)
            label = ",".join(f"{k.split('.', 1)[-1]}={json.dumps(v, separators=(',', ':'))}" for k, v in zip(keys, values))
            out.append((label, doc))
    for i, override in enumerate(raw.get("configs") or []):
        doc, override = copy.deepcopy(base), copy.deepcopy(override)
        label = override.pop("id", None) if isinstance(override, dict) else None
        for k, v in (override or {}).items():
            _set_path(doc, k, v)
        out.append((label or f"config{i}", doc))
    if not out:
        raise ContractError("grid is empty: give a non-empty 'grid' or 'configs'")
    return out
