"""Discrimination and calibration metrics for survival and competing-risks predictions.

All metrics take a :class:`PredictionMatrix` holding, per patient, the
predicted cumulative incidence of each cause on a time grid (for a single
risk, the event-time CDF ``F = 1 - S``). Predictions between grid points are
linearly interpolated.

The default forms are the standard ones. ``paper_compat=True`` switches to
two literal variants: a cause-specific C-index that credits pairs with
``CIF_i <= CIF_j``, and a cause-specific Brier score whose first term uses
any observed event (``y_i != 0``) with ``(1 - CIF_k)^2``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .estimators import StepFunction, kaplan_meier

MONOTONE_TOL = 1e-10


class NoComparablePairsWarning(UserWarning):
    """Raised (as a warning) when a C-index has no comparable pairs; 0.5 is returned."""


@dataclass
class PredictionMatrix:
    """Predicted incidence ``values[i, k, j] = CIF_{k+1}(grid[j] | x_i)`` plus observed outcomes.

    A 2-d ``values`` array is read as a single-risk CDF and stored with a
    singleton risk axis.
    """

    values: np.ndarray
    grid: np.ndarray
    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 2:
            self.values = self.values[:, None, :]
        self.grid = np.asarray(self.grid, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.events = np.asarray(self.events, dtype=int)
        n = len(self.times)
        if n == 0 or self.values.size == 0:
            raise DataError("empty predictions")
        if self.values.ndim != 3 or self.values.shape[0] != n or self.values.shape[2] != len(self.grid):
            raise DataError(
                f"values must have shape (n, K, T) = ({n}, K, {len(self.grid)}), got {self.values.shape}"
            )
        if self.events.shape != (n,):
            raise DataError("times and events must have the same length")
        if np.any(np.diff(self.grid) <= 0):
            raise DataError("grid must be strictly increasing")
        if np.any(self.values < -MONOTONE_TOL) or np.any(self.values > 1 + MONOTONE_TOL):
            raise DataError("predicted incidences must lie in [0, 1]")
        if np.any(np.diff(self.values, axis=2) < -MONOTONE_TOL):
            raise DataError("predicted incidences must be non-decreasing along the grid")
        if self.events.min() < 0 or self.events.max() > self.n_risks:
            raise DataError(f"event labels must lie in 0..{self.n_risks}")

    @property
    def n_risks(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return len(self.times)

    def at(self, t: float, cause: int = 1) -> np.ndarray:
        """Incidence of ``cause`` at time ``t`` for every patient."""
        if not 1 <= cause <= self.n_risks:
            raise ContractError(f"cause must lie in 1..{self.n_risks}, got {cause}")
        if t < self.grid[0] or t > self.grid[-1]:
            raise ContractError(f"t={t} outside the grid span [{self.grid[0]}, {self.grid[-1]}]")
        rows = self.values[:, cause - 1, :]
        j = int(np.searchsorted(self.grid, t, side="right")) - 1
        if j >= len(self.grid) - 1:
            return rows[:, -1].copy()
        w = (t - self.grid[j]) / (self.grid[j + 1] - self.grid[j])
        return (1.0 - w) * rows[:, j] + w * rows[:, j + 1]

    def survival_at(self, t: float) -> np.ndarray:
        return 1.0 - sum(self.at(t, k) for k in range(1, self.n_risks + 1))


def default_eval_time(times, events) -> float:
    """Largest observed event time (or largest time when nothing failed)."""
    times, events = np.asarray(times, dtype=float), np.asarray(events)
    return float(times[events > 0].max()) if np.any(events > 0) else float(times.max())


# -- concordance -----------------------------------------------------------
def _concordance(risk, times, events, cause, t_eval, paper_compat):
    comparable = (events == cause)[:, None] & (times[:, None] < times[None, :]) & (times <= t_eval)[:, None]
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        warnings.warn(f"no comparable pairs for cause {cause}; returning 0.5", NoComparablePairsWarning, stacklevel=3)
        return 0.5
    ri, rj = risk[:, None], risk[None, :]
    if paper_compat:
        credit = (ri <= rj).astype(float)
    else:
        credit = (ri > rj) + 0.5 * (ri == rj)
    return float((credit * comparable).sum() / n_pairs)


def c_index_cause(pred: PredictionMatrix, cause: int, t_eval: float, paper_compat: bool = False) -> float:
    """Cause-specific time-dependent concordance at ``t_eval``.

    Pairs ``(i, j)`` are comparable when ``i`` had an event of type
    ``cause`` at ``T_i <= t_eval`` and ``T_i < T_j``. A pair is concordant
    when ``CIF(t_eval | x_i) > CIF(t_eval | x_j)``; ties earn half credit.
    Returns 0.5 with a :class:`NoComparablePairsWarning` when no pair is
    comparable.
    """
    risk = pred.at(t_eval, cause)
    return _concordance(risk, pred.times, pred.events, cause, t_eval, paper_compat)


def c_index_single(pred: PredictionMatrix, t_eval: float) -> float:
    """Single-risk concordance of ``F(t_eval | x)`` with the observed times."""
    if pred.n_risks != 1:
        raise ContractError("c_index_single needs single-risk predictions; use c_index_cause")
    return c_index_cause(pred, 1, t_eval)


# -- Brier score -----------------------------------------------------------
@dataclass
class BrierResult:
    value: float
    n_excluded: int


def _ipcw_terms(pred: PredictionMatrix, t: float, G: StepFunction, first, second):
    """Shared IPCW average: ``first`` rows (t_i < t) weighted by 1/G(t_i-), ``second`` rows (t_i >= t) by 1/G(t)."""
    before = pred.times < t
    g_own = np.asarray(G.left_limit(pred.times), dtype=float)
    g_t = float(G(t))
    first_rows = before & first[1]
    second_rows = ~before
    excluded = (first_rows & (g_own <= 0)) | (second_rows & (g_t <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(first_rows, first[0] / g_own, 0.0) + np.where(second_rows, second / g_t, 0.0)
    keep = ~excluded
    n = int(keep.sum())
    value = float(terms[keep].sum() / n) if n else 0.0
    return BrierResult(value, int(excluded.sum()))


def brier_score_single(pred: PredictionMatrix, t: float, G: StepFunction, detail: bool = False):
    """IPCW Brier score of the predicted survival at time ``t``.

    ``BS(t) = mean_i [S_i(t)^2 / G(t_i-) 1(t_i < t, y_i = 1) + (1 - S_i(t))^2 / G(t) 1(t_i >= t)]``.
    Subjects whose weight would divide by ``G = 0`` are left out of both
    the sum and the count; ``detail=True`` returns a :class:`BrierResult`
    with that count.
    """
    if pred.n_risks != 1:
        raise ContractError("brier_score_single needs single-risk predictions; use brier_score_cause")
    surv = 1.0 - pred.at(t, 1)
    res = _ipcw_terms(pred, t, G, (surv**2, pred.events == 1), (1.0 - surv) ** 2)
    return res if detail else res.value


def brier_score_cause(
    pred: PredictionMatrix, cause: int, t: float, G: StepFunction, paper_compat: bool = False, detail: bool = False
):
    """IPCW Brier score of the cause-``cause`` incidence at time ``t``.

    Rows with an event of this cause before ``t`` contribute
    ``(1 - CIF)^2 / G(t_i-)``, rows with another cause before ``t``
    contribute ``CIF^2 / G(t_i-)`` and rows still at risk contribute
    ``CIF^2 / G(t)``. With ``paper_compat`` every event before ``t`` uses
    ``(1 - CIF)^2``.
    """
    cif = pred.at(t, cause)
    if paper_compat:
        first = ((1.0 - cif) ** 2, pred.events != 0)
    else:
        own = pred.events == cause
        first = (np.where(own, (1.0 - cif) ** 2, cif**2), pred.events != 0)
    res = _ipcw_terms(pred, t, G, first, cif**2)
    return res if detail else res.value


def integrate_curve(grid, values) -> float:
    """Trapezoidal average of ``values`` over ``grid`` (integral divided by the grid span)."""
    grid, values = np.asarray(grid, dtype=float), np.asarray(values, dtype=float)
    span = grid[-1] - grid[0]
    if len(grid) < 2 or span <= 0:
        raise ContractError("integration grid needs at least two points and a positive span")
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(grid)) / span)


def integrated_brier(pred: PredictionMatrix, grid, G: StepFunction, cause: int | None = None,
                     paper_compat: bool = False, detail: bool = False):
    """Integrated Brier score over ``grid``, normalized by the grid span.

    ``cause=None`` uses the single-risk score. With ``detail`` the result is
    a :class:`BrierResult` whose count is the largest per-time exclusion.
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) == 0 or grid[-1] <= 0:
        raise ContractError("t_max must be positive")
    if cause is None:
        results = [brier_score_single(pred, t, G, detail=True) for t in grid]
    else:
        results = [brier_score_cause(pred, cause, t, G, paper_compat, detail=True) for t in grid]
    value = integrate_curve(grid, [r.value for r in results])
    res = BrierResult(value, max(r.n_excluded for r in results))
    return res if detail else res.value


# -- report ----------------------------------------------------------------
@dataclass
class EvalReport:
    """Per-risk C-index and IBS with optional per-seed breakdown.

    For a multi-seed report the top-level values are the aggregated means
    and ``aggregation`` records how they were formed.
    """

    risks: list[int]
    c_index: list[float]
    ibs: list[float]
    n_excluded_G_zero: list[int] = field(default_factory=list)
    seeds: dict[str, dict] = field(default_factory=dict)
    aggregation: dict = field(default_factory=dict)

    @property
    def ci_minus_ibs(self) -> float:
        return ci_minus_ibs(self)

    def to_json(self) -> dict:
        return {
            "risk": list(self.risks),
            "c_index": list(self.c_index),
            "ibs": list(self.ibs),
            "ci_minus_ibs": self.ci_minus_ibs,
            "n_excluded_G_zero": list(self.n_excluded_G_zero),
            "seeds": self.seeds,
            "aggregation": self.aggregation,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        report = cls(
            list(d["risk"]),
            list(d["c_index"]),
            list(d["ibs"]),
            list(d.get("n_excluded_G_zero", [])),
            dict(d.get("seeds", {})),
            dict(d.get("aggregation", {})),
        )
        if "ci_minus_ibs" in d and d["ci_minus_ibs"] != report.ci_minus_ibs:
            raise DataError("stored ci_minus_ibs disagrees with the per-risk values")
        return report

    @classmethod
    def loads(cls, text: str) -> "EvalReport":
        return cls.from_json(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.to_json() == other.to_json()


def ci_minus_ibs(report) -> float:
    """Mean C-index over risks minus mean IBS over risks."""
    c, b = list(report.c_index), list(report.ibs)
    risks = list(getattr(report, "risks", range(1, len(c) + 1)))
    if not c or len(c) != len(b) or len(c) != len(risks) or any(v is None for v in c + b):
        raise ContractError("report must hold a C-index and an IBS for every risk")
    return float(np.mean(c) - np.mean(b))


def evaluate(pred: PredictionMatrix, t_eval: float | None = None, n_grid: int = 100,
             paper_compat: bool = False) -> EvalReport:
    """C-index at ``t_eval`` and IBS on ``n_grid`` points from 0 to ``t_eval``, per risk.

    ``t_eval`` defaults to the largest observed event time; the censoring
    distribution is the Kaplan-Meier estimate on the same patients.
    """
    if t_eval is None:
        t_eval = default_eval_time(pred.times, pred.events)
    grid = np.linspace(0.0, t_eval, n_grid)
    G = kaplan_meier(pred.times, pred.events, target="censoring")
    c, b, excl = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoComparablePairsWarning)
        for k in range(1, pred.n_risks + 1):
            c.append(c_index_cause(pred, k, t_eval, paper_compat and pred.n_risks > 1))
            cause = None if pred.n_risks == 1 else k
            res = integrated_brier(pred, grid, G, cause, paper_compat, detail=True)
            b.append(res.value)
            excl.append(res.n_excluded)
    return EvalReport(list(range(1, pred.n_risks + 1)), c, b, excl,
                      aggregation={"t_eval": t_eval, "n_grid": n_grid, "paper_compat": paper_compat})
