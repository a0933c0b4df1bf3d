"""Stratified train/test split."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ContractError
from .records import Cohort

log = logging.getLogger(__name__)


def split(records, test_fraction: float = 0.2, seed: int = 0):
    """Split by event label so every label with >= 2 rows lands in both parts.

    Within each label the test count is ``round(test_fraction * count)``
    clipped to ``[1, count - 1]``. A label seen only once goes to the
    training part with a warning. Row order within each part follows the
    input order.

    Returns ``(train, test)``, each a :class:`Cohort` when a cohort was
    passed and a list of records otherwise.
    """
    if not 0 < test_fraction < 1:
        raise ContractError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    recs = list(getattr(records, "records", records))
    labels = np.array([r.event for r in recs], dtype=int)
    rng = np.random.default_rng(seed)
    test_idx = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        if len(idx) == 1:
            log.warning("event label %d occurs once; kept in the training split", label)
            continue
        n_test = min(max(int(round(test_fraction * len(idx))), 1), len(idx) - 1)
        test_idx.extend(rng.permutation(idx)[:n_test].tolist())
    in_test = np.zeros(len(recs), dtype=bool)
    in_test[test_idx] = True
    train = [r for r, t in zip(recs, in_test) if not t]
    test = [r for r, t in zip(recs, in_test) if t]
    if isinstance(records, Cohort):
        return records.subset(train), records.subset(test)
    return train, test
