import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from survfuse.cli import main
from survfuse.metrics import EvalReport


def _simulate(tmp_path, n_risks=1, n=60, name="data"):
    spec = {"n": n, "n_risks": n_risks, "modality_dims": {"clinical": 2, "omics": 3}, "censoring_fraction": 0.2, "seed": 3}
    spec["betas"] = [[1.0, -0.5, 0.5, 0.0, 0.3]] + [[-0.5, 1.0, 0.0, 0.5, 0.0]] * (n_risks - 1)
    (tmp_path / f"{name}.json").write_text(json.dumps(spec))
    assert main(["simulate", "--config", str(tmp_path / f"{name}.json"), "--out", str(tmp_path / name)]) == 0
    return tmp_path / name / "manifest.json"


def _run_config(tmp_path, manifest, name="run.json", **over):
    doc = {
        "dataset": str(manifest),
        "modalities": {"clinical": {"latent_dim": 2, "hidden": [4]}, "omics": {"latent_dim": 2, "hidden": [4]}},
        "head_hidden": 4,
        "epochs": 3,
        "batch_size": 16,
        "lr": 0.01,
        "seeds": [0, 1, 2],
        "num_samples": 5,
        "n_grid": 20,
        "out": str(tmp_path / "results"),
    }
    doc.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def single_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("single")
    manifest = _simulate(tmp)
    config = _run_config(tmp, manifest)
    assert main(["train", "--config", str(config), "--selection"]) == 0
    assert main(["evaluate", "--config", str(config)]) == 0
    return tmp, config


def test_simulate_writes_dataset_and_truth(tmp_path):
    manifest = _simulate(tmp_path)
    truth = json.loads((manifest.parent / "truth.json").read_text())
    assert set(truth) == {"spec", "oracle_c_index", "censor_max", "censored_fraction"}
    assert abs(truth["censored_fraction"] - 0.2) <= 0.02
    first = (manifest.parent / "outcomes.csv").read_bytes()
    _simulate(tmp_path)
    assert (manifest.parent / "outcomes.csv").read_bytes() == first


def test_train_writes_checkpoint_and_loss(single_run):
    tmp, _ = single_run
    for seed in (0, 1, 2):
        seed_dir = tmp / "results" / f"seed_{seed}"
        assert (seed_dir / "model.ckpt").is_file()
        rows = list(csv.reader((seed_dir / "loss.csv").open()))
        assert rows[0][:2] == ["epoch", "total"] and len(rows) == 4
        assert all(np.isfinite(float(v)) for row in rows[1:] for v in row[1:])


def test_train_rerun_is_byte_identical(single_run, tmp_path):
    tmp, config = single_run
    doc = json.loads(config.read_text())
    doc["out"] = str(tmp_path / "again")
    (tmp_path / "again.json").write_text(json.dumps(doc))
    assert main(["train", "--config", str(tmp_path / "again.json")]) == 0
    for seed in (0, 1, 2):
        for name in ("loss.csv", "model.ckpt"):
            assert (tmp_path / "again" / f"seed_{seed}" / name).read_bytes() == (
                tmp / "results" / f"seed_{seed}" / name
            ).read_bytes()


def test_evaluate_report(single_run):
    tmp, config = single_run
    report = EvalReport.loads((tmp / "results" / "metrics.json").read_text())
    assert len(report.c_index) == 1 and len(report.ibs) == 1
    assert report.ci_minus_ibs == pytest.approx(report.c_index[0] - report.ibs[0], abs=1e-15)
    assert EvalReport.loads(report.dumps()) == report
    lines = (tmp / "results" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "seed,risk,c_index,ibs,ci_minus_ibs"
    assert len(lines) == 1 + 3 + 1 and lines[-1].startswith("aggregate,")
    before = (tmp / "results" / "metrics.csv").read_bytes()
    assert main(["evaluate", "--config", str(config)]) == 0
    assert (tmp / "results" / "metrics.csv").read_bytes() == before


def test_population_curves_single_risk(single_run, tmp_path):
    tmp, config = single_run
    out = tmp_path / "curves"
    assert main(["curves", "--config", str(config), "--out", str(out), "--svg", "--grid-points", "15"]) == 0
    rows = list(csv.reader((out / "curves_population.csv").open()))
    assert rows[0] == ["time", "model_mean", "model_p5", "model_p95", "km"]
    values = np.array(rows[1:], dtype=float)
    assert len(values) == 15 and values[0, 1] == 1.0
    assert np.all(values[:, 2] <= values[:, 1] + 1e-12) and np.all(values[:, 1] <= values[:, 3] + 1e-12)
    assert (out / "curves_population.svg").read_text().startswith("<svg")
    first = (out / "curves_population.csv").read_bytes()
    assert main(["curves", "--config", str(config), "--out", str(out), "--grid-points", "15"]) == 0
    assert (out / "curves_population.csv").read_bytes() == first


def test_patient_curves_and_unknown_patient(single_run, tmp_path, capsys):
    tmp, config = single_run
    out = tmp_path / "curves"
    assert main(["curves", "--config", str(config), "--out", str(out), "--patients", "p00001"]) == 0
    header = (out / "curves_p00001.csv").read_text().splitlines()[0]
    assert header == "time,model_mean,model_p5,model_p95,population_mean,km"
    assert main(["curves", "--config", str(config), "--out", str(out), "--patients", "nobody"]) == 2
    err = capsys.readouterr().err
    assert "nobody" in err and "p00000" in err


def test_competing_risks_flow(tmp_path):
    manifest = _simulate(tmp_path, n_risks=2)
    config = _run_config(tmp_path, manifest)
    assert main(["train", "--config", str(config)]) == 0
    assert main(["evaluate", "--config", str(config), "--paper-compat"]) == 0
    report = EvalReport.loads((tmp_path / "results" / "metrics.json").read_text())
    assert len(report.c_index) == 2
    assert report.ci_minus_ibs == pytest.approx(np.mean(report.c_index) - np.mean(report.ibs), abs=1e-15)
    out = tmp_path / "curves"
    assert main(["curves", "--config", str(config), "--out", str(out), "--patients", "p00002"]) == 0
    for k in (1, 2):
        header = (out / f"curves_population_risk{k}.csv").read_text().splitlines()[0]
        assert header == "time,model_mean,model_p5,model_p95,aj"
        assert (out / f"curves_p00002_risk{k}.csv").is_file()


def test_bad_manifest_exit_code(tmp_path, capsys):
    (tmp_path / "broken.json").write_text("{")
    config = _run_config(tmp_path, tmp_path / "broken.json")
    assert main(["train", "--config", str(config)]) == 2
    assert "manifest" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2


def test_two_seeds_with_selection_exit_code(tmp_path, capsys):
    manifest = _simulate(tmp_path)
    config = _run_config(tmp_path, manifest, seeds=[0, 1])
    assert main(["train", "--config", str(config), "--selection"]) == 2
    assert "at least 3 seeds" in capsys.readouterr().err
    assert not (tmp_path / "results").exists()


def test_checkpoint_schema_mismatch_exit_code(single_run, tmp_path):
    tmp, _ = single_run
    manifest = _simulate(tmp_path, n_risks=2)
    config = _run_config(tmp_path, manifest)
    ckpt = tmp / "results" / "seed_0" / "model.ckpt"
    assert main(["evaluate", "--config", str(config), "--checkpoint", str(ckpt)]) == 2


def test_divergence_exit_code(tmp_path, capsys):
    manifest = _simulate(tmp_path)
    config = _run_config(tmp_path, manifest, lr=1e12, epochs=20)
    assert main(["train", "--config", str(config)]) == 3
    assert "epoch" in capsys.readouterr().err


def test_gridsearch_nine_configs(tmp_path):
    manifest = _simulate(tmp_path, n=40)
    config = _run_config(
        tmp_path,
        manifest,
        epochs=2,
        num_samples=0,
        grid={"modalities.omics.latent_dim": [5, 50, 500], "modalities.omics.hidden": [[5], [50], [500]]},
    )
    out = tmp_path / "grid"
    assert main(["gridsearch", "--config", str(config), "--out", str(out)]) == 0
    lines = (out / "audit.csv").read_text().splitlines()
    assert lines[0] == "config,C-index,IBS,CI-IBS,p-CI HB,p-IBS HB,survived"
    assert len(lines) == 10
    winner = json.loads((out / "winner.json").read_text())
    assert len(winner["audit"]) == 9
    survivors = [row for row in winner["audit"] if row["survived"]]
    assert winner["winner"] == max(survivors, key=lambda r: r["ci_minus_ibs"])["config"]
    first = (out / "audit.csv").read_bytes()
    assert main(["gridsearch", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "audit.csv").read_bytes() == first


def test_gridsearch_single_config_wins(tmp_path):
    manifest = _simulate(tmp_path, n=40)
    config = _run_config(tmp_path, manifest, epochs=1, num_samples=0, configs=[{"id": "solo", "lr": 0.005}])
    assert main(["gridsearch", "--config", str(config), "--out", str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "winner.json").read_text())["winner"] == "solo"


def test_gridsearch_all_fail_exit_code(tmp_path):
    manifest = _simulate(tmp_path, n=40)
    config = _run_config(tmp_path, manifest, epochs=20, num_samples=0, configs=[{"id": "boom", "lr": 1e12}])
    assert main(["gridsearch", "--config", str(config), "--out", str(tmp_path / "g")]) == 3
    winner = json.loads((tmp_path / "g" / "winner.json").read_text())
    assert winner["winner"] is None and "boom" in winner["failures"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "survfuse.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("simulate", "train", "evaluate", "gridsearch", "curves"):
        assert command in proc.stdout
