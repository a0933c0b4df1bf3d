"""Command-line interface: simulate, train, evaluate, gridsearch and curves.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
The log level comes from ``SURVFUSE_LOG`` (error, info or debug).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .data import SynthSpec, load_dataset, simulate_competing_risks, simulate_single_risk, split, write_dataset
from .data.io import atomic_write_text
from .errors import NumericalError, SurvfuseError
from .estimators import aalen_johansen, kaplan_meier
from .model import cif_samples, load_checkpoint, save_checkpoint
from .pipeline import (
    RunConfig,
    combine_reports,
    evaluate_model,
    expand_grid,
    fit_seed,
    load_config,
    load_split,
    summary_stats,
)
from .plotting import render_curves
from .stats import ConfigResult, select_configuration

log = logging.getLogger("survfuse")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INPUT_ERRORS = (ValueError, KeyError, FileNotFoundError, SurvfuseError)


def _fmt(x) -> str:
    return repr(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _parse_seeds(text):
    if text is None:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _map(fn, items, jobs: int):
    """Apply ``fn`` to ``items`` in order, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _resolve(args, out_is_run_dir: bool = True) -> RunConfig:
    config, _ = load_config(args.config)
    if getattr(args, "seeds", None):
        config.seeds = args.seeds
    if out_is_run_dir and getattr(args, "out", None):
        config.out = args.out
    if getattr(args, "selection", False):
        config.selection = True
    if getattr(args, "samples", None) is not None:
        config.num_samples = args.samples
    # re-run validation after command-line overrides
    return RunConfig.from_json(config.to_json())


# -- simulate --------------------------------------------------------------
def cmd_simulate(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FileNotFoundError(f"cannot read {args.config}: {exc}") from None
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = SynthSpec.from_json(doc)
    simulate = simulate_single_risk if spec.n_risks == 1 else simulate_competing_risks
    cohort, truth = simulate(spec)
    out = Path(args.out or "data")
    manifest = write_dataset(cohort, out)
    atomic_write_text(out / "truth.json", json.dumps({
        "spec": spec.to_json(),
        "oracle_c_index": truth.oracle_c_index,
        "censor_max": truth.censor_max,
        "censored_fraction": float(np.mean(cohort.events == 0)),
    }, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d patients to %s", len(cohort), manifest)
    print(manifest)
    return EXIT_OK


# -- train -----------------------------------------------------------------
def _train_one(job):
    config, seed = job
    train_set, _ = load_split(config)
    model, history = fit_seed(config, train_set, seed)
    seed_dir = Path(config.out) / f"seed_{seed}"
    save_checkpoint(model, seed_dir / "model.ckpt")
    atomic_write_text(seed_dir / "loss.csv", history.to_csv())
    return seed_dir


def cmd_train(args) -> int:
    config = _resolve(args)
    load_split(config)  # validate the dataset before fanning out
    out = Path(config.out)
    atomic_write_text(out / "config.json", json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    for seed_dir in _map(_train_one, [(config, s) for s in config.seeds], args.jobs):
        log.info("wrote %s", seed_dir)
    return EXIT_OK


# -- evaluate --------------------------------------------------------------
def _metrics_csv(report) -> str:
    rows = []
    for seed, m in report.seeds.items():
        for k, risk in enumerate(report.risks):
            rows.append([seed, risk, _fmt(m["c_index"][k]), _fmt(m["ibs"][k]), _fmt(m["ci_minus_ibs"])])
    for k, risk in enumerate(report.risks):
        rows.append(["aggregate", risk, _fmt(report.c_index[k]), _fmt(report.ibs[k]), _fmt(report.ci_minus_ibs)])
    return _csv(["seed", "risk", "c_index", "ibs", "ci_minus_ibs"], rows)


def cmd_evaluate(args) -> int:
    config = _resolve(args)
    _, test_set = load_split(config)
    out = Path(config.out)
    checkpoints = {}
    if args.checkpoint:
        for i, path in enumerate(args.checkpoint):
            checkpoints[i] = Path(path)
    else:
        checkpoints = {s: out / f"seed_{s}" / "model.ckpt" for s in config.seeds}
    per_seed = {}
    for seed, path in checkpoints.items():
        model = load_checkpoint(path)
        report = evaluate_model(model, test_set, config.num_samples, seed, config.n_grid, args.paper_compat)
        per_seed[seed] = report
        atomic_write_text(path.parent / "metrics.json", report.dumps())
    combined = combine_reports(per_seed)
    atomic_write_text(out / "metrics.json", combined.dumps())
    atomic_write_text(out / "metrics.csv", _metrics_csv(combined))
    print(f"CI-IBS {combined.ci_minus_ibs:.4f}")
    return EXIT_OK


# -- gridsearch ------------------------------------------------------------
def _grid_job(job):
    index, label, config, seed, derived, paper_compat = job
    try:
        train_set, test_set = load_split(config)
        model, history = fit_seed(config, train_set, derived)
        report = evaluate_model(model, test_set, config.num_samples, derived, config.n_grid, paper_compat)
    except NumericalError as exc:
        return index, seed, None, f"numerical failure: {exc}"
    except INPUT_ERRORS as exc:
        return index, seed, None, f"{type(exc).__name__}: {exc}"
    seed_dir = Path(config.out) / f"seed_{seed}"
    atomic_write_text(seed_dir / "loss.csv", history.to_csv())
    atomic_write_text(seed_dir / "metrics.json", report.dumps())
    return index, seed, report, None


def cmd_gridsearch(args) -> int:
    base, raw = load_config(args.config)
    master = int(raw.get("master_seed", 0))
    out = Path(args.out or base.out)
    seeds = args.seeds or base.seeds
    if len(seeds) < 3:
        raise ValueError(f"grid search aggregates the top 3 seeds and needs at least 3, got {len(seeds)}")
    configs = []
    for i, (label, doc) in enumerate(expand_grid(raw)):
        doc = dict(doc, seeds=seeds, out=str(out / f"config_{i}"))
        if args.samples is not None:
            doc["num_samples"] = args.samples
        configs.append((label, RunConfig.from_json(doc, Path(args.config).parent)))
    jobs = []
    for i, (label, cfg) in enumerate(configs):
        for j, seed in enumerate(seeds):
            derived = int(np.random.SeedSequence([master, i, j]).generate_state(1)[0])
            jobs.append((i, label, cfg, seed, derived, args.paper_compat))
    outcomes = _map(_grid_job, jobs, args.jobs)

    results, failures = [], {}
    for i, (label, cfg) in enumerate(configs):
        reports = {seed: rep for idx, seed, rep, err in outcomes if idx == i and rep is not None}
        errors = [f"seed {seed}: {err}" for idx, seed, rep, err in outcomes if idx == i and err]
        if len(reports) < 3:
            failures[label] = errors or ["fewer than 3 successful seeds"]
            log.error("configuration %s failed: %s", label, "; ".join(failures[label]))
            continue
        combined = combine_reports(reports)
        atomic_write_text(Path(cfg.out) / "metrics.json", combined.dumps())
        c_stats, ibs_stats = summary_stats(combined)
        results.append((ConfigResult(label, c_stats, ibs_stats), cfg))
    if not results:
        log.error("every configuration failed")
        atomic_write_text(out / "winner.json", json.dumps({"winner": None, "failures": failures}, indent=2) + "\n")
        return EXIT_NUMERIC
    selection = select_configuration([r for r, _ in results], args.alpha)
    atomic_write_text(out / "audit.csv", selection.to_csv())
    winner_cfg = next(cfg for r, cfg in results if r.config_id == selection.winner)
    summary = {
        "winner": selection.winner,
        "config": winner_cfg.to_json(),
        "alpha": args.alpha,
        "audit": [
            {"config": row.config_id, "ci_minus_ibs": row.ci_minus_ibs, "p_ci_hb": row.p_ci,
             "p_ibs_hb": row.p_ibs, "survived": row.survived, "reason": row.reason}
            for row in selection.audit
        ],
        "failures": failures,
    }
    atomic_write_text(out / "winner.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"winner: {selection.winner}")
    return EXIT_OK


# -- curves ----------------------------------------------------------------
def _band(traj):
    """Mean and 5th/95th percentiles over the leading (sample) axis."""
    return traj.mean(axis=0), np.percentile(traj, 5, axis=0), np.percentile(traj, 95, axis=0)


def _write_curve(out: Path, stem: str, grid, mean, p5, p95, ref_name, ref, extra=None, svg=False, title="",
                 ylabel="survival probability"):
    header = ["time", "model_mean", "model_p5", "model_p95"]
    cols = [grid, mean, p5, p95]
    if extra is not None:
        header.append(extra[0])
        cols.append(extra[1])
    header.append(ref_name)
    cols.append(ref)
    rows = [[_fmt(v) for v in row] for row in zip(*cols)]
    atomic_write_text(out / f"{stem}.csv", _csv(header, rows))
    if svg:
        lines = [("model mean", mean)] + ([(extra[0].replace("_", " "), extra[1])] if extra is not None else [])
        doc = render_curves(grid, lines, bands=[("5-95% band", p5, p95)], steps=[(ref_name.upper(), ref)],
                            title=title, ylabel=ylabel)
        atomic_write_text(out / f"{stem}.svg", doc)


def cmd_curves(args) -> int:
    # here --out names the curve directory; checkpoints stay under the config's out
    config = _resolve(args, out_is_run_dir=False)
    if args.checkpoint:
        ckpt = Path(args.checkpoint)
    else:
        seed = args.seed if args.seed is not None else config.seeds[0]
        ckpt = Path(config.out) / f"seed_{seed}" / "model.ckpt"
    model = load_checkpoint(ckpt)
    cohort = load_dataset(config.dataset)
    train_set, test_set = split(cohort, config.test_fraction, config.split_seed)
    population = {"test": test_set, "train": train_set, "all": cohort}[args.split]
    grid = np.linspace(0.0, float(population.times.max()), args.grid_points)
    samples = config.num_samples if config.num_samples > 0 else 1
    K = model.n_risks
    out = Path(args.out or Path(config.out) / "curves")

    # population: average the patients within each draw, then band across draws
    pop = cif_samples(model, population, grid, samples, seed=0).mean(axis=1)  # (S, K, T)
    if K == 1:
        ref = kaplan_meier(population.times, population.events)(grid)
        mean, p5, p95 = _band(1.0 - pop[:, 0])
        _write_curve(out, "curves_population", grid, mean, p5, p95, "km", ref, svg=args.svg,
                     title="population survival")
        pop_mean = {1: mean}
    else:
        ajs = aalen_johansen(population.times, population.events, K)
        pop_mean = {}
        for k in range(K):
            mean, p5, p95 = _band(pop[:, k])
            pop_mean[k + 1] = mean
            _write_curve(out, f"curves_population_risk{k + 1}", grid, mean, p5, p95, "aj", ajs[k](grid),
                         svg=args.svg, title=f"population incidence, risk {k + 1}", ylabel="cumulative incidence")

    if args.patients != "population":
        wanted = [p.strip() for p in args.patients.split(",") if p.strip()]
        by_id = {r.patient_id: r for r in cohort.records}
        unknown = [p for p in wanted if p not in by_id]
        if unknown:
            raise KeyError(f"unknown patient ids {unknown}; available: {', '.join(sorted(by_id))}")
        for pid in wanted:
            draws = cif_samples(model, by_id[pid], grid, samples, seed=0)[:, 0]  # (S, K, T)
            if K == 1:
                mean, p5, p95 = _band(1.0 - draws[:, 0])
                ref = kaplan_meier(population.times, population.events)(grid)
                _write_curve(out, f"curves_{pid}", grid, mean, p5, p95, "km", ref, ("population_mean", pop_mean[1]),
                             args.svg, f"patient {pid}")
            else:
                ajs = aalen_johansen(population.times, population.events, K)
                for k in range(K):
                    mean, p5, p95 = _band(draws[:, k])
                    _write_curve(out, f"curves_{pid}_risk{k + 1}", grid, mean, p5, p95, "aj", ajs[k](grid),
                                 ("population_mean", pop_mean[k + 1]), args.svg, f"patient {pid}, risk {k + 1}",
                                 "cumulative incidence")
    print(out)
    return EXIT_OK


# -- entry point -----------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survfuse", description="Multimodal variational survival analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort with known ground truth")
    p.add_argument("--config", required=True, help="JSON synthetic-cohort description")
    p.add_argument("--out", help="output directory (default: data)")
    p.add_argument("--seed", type=int, help="override the simulation seed")
    p.set_defaults(func=cmd_simulate)

    def run_flags(p, seeds=True, out_help="output directory (overrides the config)"):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help=out_help)
        if seeds:
            p.add_argument("--seeds", type=_parse_seeds, help="comma-separated training seeds")
        p.add_argument("--samples", type=int, help="latent draws at prediction time (0: posterior mean)")

    p = sub.add_parser("train", help="train one model per seed")
    run_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--selection", action="store_true", help="require the top-3 selection protocol (>= 3 seeds)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate trained checkpoints on the held-out split")
    run_flags(p)
    p.add_argument("--checkpoint", nargs="+", help="explicit checkpoint files (default: one per configured seed)")
    p.add_argument("--selection", action="store_true", help="require the top-3 selection protocol (>= 3 seeds)")
    p.add_argument("--paper-compat", action="store_true", help="use the literal competing-risks metric forms")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="train, evaluate and select over a hyperparameter grid")
    run_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--alpha", type=float, default=0.01, help="selection threshold for corrected p-values")
    p.add_argument("--paper-compat", action="store_true", help="use the literal competing-risks metric forms")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("curves", help="export survival or incidence curves as CSV (and SVG)")
    run_flags(p, seeds=False, out_help="curve directory (default: <config out>/curves)")
    p.add_argument("--checkpoint", help="checkpoint file (default: the --seed run under the config's out)")
    p.add_argument("--seed", type=int, help="which seed's checkpoint to use")
    p.add_argument("--patients", default="population", help="'population' or comma-separated patient ids")
    p.add_argument("--split", choices=["test", "train", "all"], default="test", help="patients forming the population")
    p.add_argument("--grid-points", type=int, default=100, help="number of time points")
    p.add_argument("--svg", action="store_true", help="also write SVG plots")
    p.set_defaults(func=cmd_curves)
    return parser


def _configure_logging():
    level = os.environ.get("SURVFUSE_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        where = f" (epoch {exc.epoch})" if exc.epoch is not None else ""
        print(f"survfuse: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"survfuse: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
