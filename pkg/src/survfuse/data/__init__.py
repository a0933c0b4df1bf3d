"""Patient records, feature schemas, ingestion, splitting and synthetic cohorts."""

from .io import load_dataset, read_pack, read_pgm, write_dataset, write_pack, write_pgm
from .records import Cohort, PatientRecord
from .schema import CATEGORICAL_MAX_LEVELS, ColumnSpec, FeatureSchema, infer_likelihood, parse_override
from .simulate import SimulationTruth, SynthSpec, simulate_competing_risks, simulate_single_risk
from .split import split

__all__ = [name for name in dir() if not name.startswith("_")]
