from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .schema import FeatureSchema


@dataclass
class PatientRecord:
    """One patient: raw feature blocks per modality, observed time and event label.

    ``event`` is 0 for right-censored rows and ``k`` for an observed event of
    type ``k``.
    """

    patient_id: str
    features: dict[str, np.ndarray]
    time: float
    event: int

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time <= 0:
            raise DataError(f"patient {self.patient_id!r}: time must be finite and positive, got {self.time}")
        if int(self.event) != self.event or self.event < 0:
            raise DataError(f"patient {self.patient_id!r}: event must be a non-negative integer, got {self.event}")
        self.event = int(self.event)


@dataclass
class Cohort:
    """Records plus the per-modality description needed to model them."""

    records: list[PatientRecord]
    schemas: dict[str, FeatureSchema] = field(default_factory=dict)
    image_shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    n_risks: int = 1
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def modality_names(self) -> list[str]:
        return list(self.schemas) + [m for m in self.image_shapes if m not in self.schemas]

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=float)

    @property
    def events(self) -> np.ndarray:
        return np.array([r.event for r in self.records], dtype=int)

    @property
    def ids(self) -> list[str]:
        return [r.patient_id for r in self.records]

    def subset(self, records: list[PatientRecord]) -> "Cohort":
        return Cohort(list(records), dict(self.schemas), dict(self.image_shapes), self.n_risks)

    def block(self, modality: str) -> np.ndarray:
        return np.stack([np.asarray(r.features[modality], dtype=float) for r in self.records])
