"""Summary-statistic t-tests, Holm-Bonferroni correction and configuration selection.

Selection runs in two stages. Stage 1 takes the best observed configuration
(largest CI-IBS, earliest declared on ties) as the reference and compares
every other configuration with it, per metric and per risk, using one-sided
Welch tests (C-index: is the reference higher?; IBS: is the reference
lower?). The p-values are corrected with Holm-Bonferroni within each metric
family and any configuration with a corrected p below ``alpha`` is
discarded. The reference is assigned p = 1 against itself and always
survives. Stage 2 picks the survivor with the largest CI-IBS, ties going to
the earliest declared configuration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .errors import ContractError, DomainError


@dataclass(frozen=True)
class SummaryStat:
    mean: float
    std: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ContractError(f"a summary statistic needs n >= 2, got {self.n}")
        if not self.std >= 0:
            raise ContractError(f"std must be >= 0, got {self.std}")

    @classmethod
    def of(cls, values) -> "SummaryStat":
        values = np.asarray(values, dtype=float)
        # the rounded mean of equal values can differ from them in the last bit
        std = float(values.std(ddof=1)) if np.ptp(values) > 0 else 0.0
        return cls(float(values.mean()), std, len(values))

    def __str__(self):
        return f"{self.mean:.3f} ± {self.std:.3f}"


def welch(a: SummaryStat, b: SummaryStat) -> tuple[float, float]:
    """Welch t statistic of ``a.mean - b.mean`` and its Satterthwaite degrees of freedom."""
    va, vb = a.std**2 / a.n, b.std**2 / b.n
    se2 = va + vb
    t = (a.mean - b.mean) / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.n - 1) + vb**2 / (b.n - 1))
    return t, df


def t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` of Student's t, through the regularized incomplete beta."""
    tail = 0.5 * float(betainc(0.5 * df, 0.5, df / (df + t * t)))
    return tail if t >= 0 else 1.0 - tail


def t_test_summary(a: SummaryStat, b: SummaryStat, sides: str = "two") -> float:
    """Welch two-sample t-test from summary statistics.

    ``sides="two"`` tests ``mean_a != mean_b``; ``sides="one"`` tests the
    alternative ``mean_a > mean_b``. When both standard deviations are zero
    the test degenerates: equal means give 1, different means give 0 (or 1
    for a one-sided test whose alternative points the other way).
    """
    if sides not in ("one", "two"):
        raise ValueError(f"sides must be 'one' or 'two', got {sides!r}")
    if a.std == 0 and b.std == 0:
        if a.mean == b.mean:
            return 1.0
        if sides == "one" and a.mean < b.mean:
            return 1.0
        return 0.0
    t, df = welch(a, b)
    if sides == "two":
        return min(1.0, 2.0 * t_sf(abs(t), df))
    return t_sf(t, df)


def holm_bonferroni(p: Sequence[float]) -> list[float]:
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise DomainError("p-values must be a flat sequence")
    if np.any(~(p >= 0) | ~(p <= 1)):
        raise DomainError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.maximum.accumulate(adjusted)
    out = np.empty(m)
    out[order] = adjusted
    return out.tolist()


# -- seed aggregation ------------------------------------------------------
@dataclass
class SeedMetrics:
    """Per-risk metrics of one training seed."""

    seed: int
    c_index: tuple
    ibs: tuple

    @property
    def ci_minus_ibs(self) -> float:
        return float(np.mean(self.c_index) - np.mean(self.ibs))


@dataclass
class SeedAggregate:
    c_index: list[SummaryStat]
    ibs: list[SummaryStat]
    seeds: list[int]

    @property
    def ci_minus_ibs(self) -> float:
        return float(np.mean([s.mean for s in self.c_index]) - np.mean([s.mean for s in self.ibs]))


def aggregate_seeds(per_seed: Sequence[SeedMetrics], top: int = 3) -> SeedAggregate:
    """Mean and sample std (ddof=1) over the ``top`` seeds with the highest CI-IBS.

    Ties in CI-IBS keep the input order.
    """
    per_seed = list(per_seed)
    if len(per_seed) < top:
        raise ContractError(f"need at least {top} seeds, got {len(per_seed)}")
    n_risks = {len(s.c_index) for s in per_seed} | {len(s.ibs) for s in per_seed}
    if len(n_risks) != 1:
        raise ContractError("every seed must report the same number of risks")
    ranked = sorted(range(len(per_seed)), key=lambda i: -per_seed[i].ci_minus_ibs)[:top]
    chosen = [per_seed[i] for i in sorted(ranked)]
    K = n_risks.pop()
    return SeedAggregate(
        [SummaryStat.of([s.c_index[k] for s in chosen]) for k in range(K)],
        [SummaryStat.of([s.ibs[k] for s in chosen]) for k in range(K)],
        [s.seed for s in chosen],
    )


# -- configuration selection -----------------------------------------------
@dataclass
class ConfigResult:
    config_id: str
    c_index: list[SummaryStat]
    ibs: list[SummaryStat]
    ci_minus_ibs: float | None = None

    def __post_init__(self):
        if not self.c_index or len(self.c_index) != len(self.ibs):
            raise ContractError(f"config {self.config_id!r}: need C-index and IBS for every risk")
        if self.ci_minus_ibs is None:
            self.ci_minus_ibs = float(np.mean([s.mean for s in self.c_index]) - np.mean([s.mean for s in self.ibs]))

    @classmethod
    def from_aggregate(cls, config_id: str, agg: SeedAggregate) -> "ConfigResult":
        return cls(config_id, list(agg.c_index), list(agg.ibs))


@dataclass
class AuditRow:
    config_id: str
    c_index: list[SummaryStat]
    ibs: list[SummaryStat]
    ci_minus_ibs: float
    p_ci: list[float]
    p_ibs: list[float]
    survived: bool
    reason: str = ""


@dataclass
class Selection:
    winner: str
    audit: list[AuditRow] = field(default_factory=list)
    alpha: float = 0.01

    def to_csv(self) -> str:
        """Audit table, one row per configuration and risk."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "C-index", "IBS", "CI-IBS", "p-CI HB", "p-IBS HB", "survived"])
        multi = len(self.audit[0].c_index) > 1 if self.audit else False
        for row in self.audit:
            for k in range(len(row.c_index)):
                cid = f"{row.config_id}#risk{k + 1}" if multi else row.config_id
                w.writerow([
                    cid,
                    str(row.c_index[k]),
                    str(row.ibs[k]),
                    f"{row.ci_minus_ibs:.3f}",
                    f"{row.p_ci[k]:.3f}",
                    f"{row.p_ibs[k]:.3f}",
                    "yes" if row.survived else "no",
                ])
        return buf.getvalue()


def select_configuration(results: Sequence[ConfigResult], alpha: float = 0.01) -> Selection:
    """Two-stage selection; see the module docstring."""
    results = list(results)
    if not results:
        raise ContractError("no configurations to select from")
    if not 0 < alpha < 1:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    K = len(results[0].c_index)
    if any(len(r.c_index) != K for r in results):
        raise ContractError("every configuration must report the same number of risks")
    ids = [r.config_id for r in results]
    if len(set(ids)) != len(ids):
        raise ContractError(f"configuration ids must be unique: {ids}")

    n = len(results)
    raw = {"ci": np.ones((n, K)), "ibs": np.ones((n, K))}
    tested = {"ci": np.zeros((n, K), dtype=bool), "ibs": np.zeros((n, K), dtype=bool)}
    best = 0
    for i, r in enumerate(results):
        if r.ci_minus_ibs > results[best].ci_minus_ibs:
            best = i
    ref = results[best]
    for k in range(K):
        for i, r in enumerate(results):
            if i == best:
                continue
            raw["ci"][i, k] = t_test_summary(ref.c_index[k], r.c_index[k], "one")
            raw["ibs"][i, k] = t_test_summary(r.ibs[k], ref.ibs[k], "one")
            tested["ci"][i, k] = tested["ibs"][i, k] = True
    # one family per metric over all configurations and risks; the best's fixed p = 1 stays out
    for key in raw:
        mask = tested[key]
        if mask.any():
            raw[key][mask] = holm_bonferroni(raw[key][mask])

    audit = []
    for i, r in enumerate(results):
        low_ci = [k + 1 for k in range(K) if raw["ci"][i, k] < alpha]
        low_ibs = [k + 1 for k in range(K) if raw["ibs"][i, k] < alpha]
        reasons = []
        if low_ci:
            reasons.append(f"C-index worse than {ref.config_id} (risk {low_ci})")
        if low_ibs:
            reasons.append(f"IBS worse than {ref.config_id} (risk {low_ibs})")
        audit.append(AuditRow(r.config_id, r.c_index, r.ibs, r.ci_minus_ibs,
                              raw["ci"][i].tolist(), raw["ibs"][i].tolist(), not reasons, "; ".join(reasons)))
    survivors = [row for row in audit if row.survived]
    winner = survivors[0]
    for row in survivors[1:]:
        if row.ci_minus_ibs > winner.ci_minus_ibs:
            winner = row
    tied = [row.config_id for row in survivors if row.ci_minus_ibs == winner.ci_minus_ibs]
    if len(tied) > 1:
        for row in audit:
            if row.config_id in tied and row is not winner:
                row.reason = f"tied on CI-IBS with {winner.config_id}; declaration order decides"
    return Selection(winner.config_id, audit, alpha)
