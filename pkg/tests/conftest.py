import numpy as np
import pytest

from survfuse.data import SynthSpec, simulate_competing_risks, simulate_single_risk
from survfuse.model import ModalityConfig, SamvaeModel


def toy_cohort(n=12, n_risks=1, dims=None, images=None, seed=0, censoring=0.3):
    dims = dims or {"clinical": 3, "omics": 4}
    images = images or {}
    # small cohorts only reach multiples of 1/n
    spec = SynthSpec(n, n_risks, dims, images, censoring_fraction=round(censoring * n) / n, seed=seed)
    rng = np.random.default_rng(seed + 100)
    spec.betas = [rng.normal(size=spec.n_covariates) for _ in range(n_risks)]
    sim = simulate_single_risk if n_risks == 1 else simulate_competing_risks
    return sim(spec)[0]


def toy_model(cohort, latent=2, hidden=(5,), head_hidden=4, seed=0, activation="tanh"):
    mods = []
    for name in cohort.modality_names:
        if name in cohort.schemas:
            schema = cohort.schemas[name].fit(cohort.block(name))
            mods.append(ModalityConfig(name, "tabular", list(hidden), latent, schema))
        else:
            mods.append(ModalityConfig(name, "image", [2], latent, image_shape=cohort.image_shapes[name], kernel_size=3, stride=2))
    return SamvaeModel(mods, cohort.n_risks, seed, head_hidden, activation, time_scale=float(cohort.times.mean()))


@pytest.fixture
def make_cohort():
    return toy_cohort


@pytest.fixture
def make_model():
    return toy_model


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail, elapsed=None, budget=None):
        timing = ""
        if elapsed is not None:
            timing = f" [{elapsed:.1f}s" + (f" of {budget:.0f}s budget]" if budget else "]")
            ok = ok and (budget is None or elapsed < budget)
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}{timing}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
