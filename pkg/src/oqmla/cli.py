"""Command-line entry point: ``generate``, ``run`` and ``report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 search hit the
generation cap below the fitness threshold (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, DesignMode, FormatError, NoiseConfig, TrueModel, generate_dataset, split_records
from .evaluation import TestSet
from .inference import InferenceConfig, PriorConfig
from .models import ModelSpecError, build_primitive_set, parse_model_spec
from .quantum import COHERENT, label_qubits
from .scenarios import GENERATE_DEFAULTS, RUN_DEFAULTS, SCENARIOS
from .search import SearchConfig, SearchError, run_search

log = logging.getLogger("oqmla")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 2, 3, 4
REPORT_VERSION = 1


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


def _load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    # a run report embeds the exact config that produced it
    if "report_version" in cfg:
        cfg = cfg["config"]
    return cfg


def _merge(defaults: dict, *layers: dict) -> dict:
    out = dict(defaults)
    for layer in layers:
        out.update({k: v for k, v in layer.items() if v is not None})
    return out


def _parse_noise(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        p, q = (float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"--noise expects 'p,q', got {text!r}") from None
    return [p, q]


# -- generate -------------------------------------------------------------------


def generate_config(args) -> dict:
    file_cfg = _load_config_file(args.config) if args.config else {}
    scenario = args.scenario or file_cfg.get("scenario")
    preset = {}
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
        preset = {k: v for k, v in SCENARIOS[scenario].items() if k != "threshold"}
    flags = {"model": args.model, "mode": args.mode, "seed": args.seed, "shots": args.shots,
             "n_times": args.times, "t_min": args.t_min, "t_max": args.t_max,
             "designs_per_time": args.designs,
             "noise": _parse_noise(args.noise) if args.noise is not None else None}
    cfg = _merge(GENERATE_DEFAULTS, preset, {k: v for k, v in file_cfg.items() if k != "scenario"}, flags)
    cfg["scenario"] = scenario
    if not cfg.get("model"):
        raise ConfigError("either --scenario or --model is required")
    return cfg


def cmd_generate(args) -> int:
    cfg = generate_config(args)
    try:
        true_model = TrueModel.from_spec(cfg["model"])
    except (ModelSpecError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    try:
        mode = DesignMode.parse(cfg["mode"])
        noise = NoiseConfig(*_parse_noise(cfg["noise"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    times = np.geomspace(cfg["t_min"], cfg["t_max"], int(cfg["n_times"]))
    extra = {"scenario": cfg["scenario"], "model_spec": cfg["model"],
             "time_grid": {"kind": "geometric", "t_min": cfg["t_min"], "t_max": cfg["t_max"], "n": int(cfg["n_times"])}}
    try:
        ds = generate_dataset(true_model, times, int(cfg["shots"]), mode, noise, int(cfg["seed"]),
                              int(cfg["designs_per_time"]), None, extra)
        ds.write(args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset: {exc}") from None
    print(f"wrote {len(ds.records)} records to {args.out}")
    print(f"  true model : {cfg['model']}")
    print(f"  qubits     : {true_model.n_qubits}")
    print(f"  mode       : {mode}   noise p={noise.p} q={noise.q}   shots/record={cfg['shots']}   seed={cfg['seed']}")
    return EXIT_OK


# -- run ------------------------------------------------------------------------


def run_config(args) -> dict:
    file_cfg = _load_config_file(args.config) if args.config else {}
    flags = {"data": args.data, "replicates": args.replicates, "target_primitives": args.target_primitives,
             "population": args.population, "particles": args.particles,
             "max_generations": args.max_generations, "threshold": args.threshold, "seed": args.seed,
             "budget": args.budget}
    cfg = _merge(RUN_DEFAULTS, file_cfg, flags)
    if not cfg.get("data"):
        raise ConfigError("--data is required")
    for key in ("p_one_to_zero", "crossover_p", "test_fraction", "ess_threshold"):
        if not 0.0 <= float(cfg[key]) <= 1.0:
            raise ConfigError(f"{key} must lie in [0, 1], got {cfg[key]}")
    if int(cfg["replicates"]) < 1:
        raise ConfigError("replicates must be at least 1")
    return cfg


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _replicate_seed(seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([seed, replicate]).generate_state(1)[0])


def _terms_table(trained) -> list:
    model = trained.model
    return [{"label": p.label, "kind": p.kind, "rate": float(r), "std": float(s)}
            for p, r, s in zip(model.primitives, model.rates, trained.stds)]


def compare_with_truth(terms: list, truth: list | None) -> list:
    """Rows pairing learned and true rates by (label, kind)."""
    rows = []
    truth_map = {(t["label"], t["kind"]): t["rate"] for t in truth} if truth is not None else {}
    seen = set()
    for t in terms:
        key = (t["label"], t["kind"])
        seen.add(key)
        true_rate = truth_map.get(key, 0.0) if truth is not None else None
        rows.append({"label": t["label"], "kind": t["kind"], "learned": t["rate"], "true": true_rate,
                     "abs_diff": None if true_rate is None else abs(t["rate"] - true_rate)})
    for (label, kind), rate in truth_map.items():
        if (label, kind) not in seen:
            rows.append({"label": label, "kind": kind, "learned": 0.0, "true": rate, "abs_diff": abs(rate)})
    return rows


def execute_run(cfg: dict, dataset: Dataset | None = None, on_generation=None) -> tuple[dict, str, dict]:
    """Run every replicate; returns (report, csv trace text, timing info)."""
    if dataset is None:
        dataset = load_dataset(cfg["data"])
    n_qubits = dataset.n_qubits
    pset = build_primitive_set(n_qubits)
    split_rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 0x5E1]))
    train_records, test_records = split_records(dataset.records, float(cfg["test_fraction"]), split_rng)
    tests = TestSet.from_records(test_records)
    inference = InferenceConfig(budget=int(cfg["budget"]), shots=int(cfg["shots"]),
                                n_particles=cfg["particles"], ess_threshold=float(cfg["ess_threshold"]),
                                lw_a=float(cfg["lw_a"]), discrete=bool(cfg["discrete"]),
                                prior=PriorConfig.from_dict(cfg.get("prior", {})))
    truth = dataset.manifest.get("true_model")
    replicates, timing = [], {"replicates": []}
    t_start = time.perf_counter()
    for r in range(int(cfg["replicates"])):
        seed = _replicate_seed(int(cfg["seed"]), r)
        search_cfg = SearchConfig(population=int(cfg["population"]), target_primitives=float(cfg["target_primitives"]),
                                  p_one_to_zero=float(cfg["p_one_to_zero"]), crossover_p=float(cfg["crossover_p"]),
                                  beta=float(cfg["beta"]), max_generations=int(cfg["max_generations"]),
                                  threshold=float(cfg["threshold"]), reduce_ratio=float(cfg["reduce_ratio"]),
                                  seed=seed)
        t0 = time.perf_counter()
        callback = (lambda g, ranked, r=r: on_generation(r, g, ranked)) if on_generation else None
        result = run_search(search_cfg, pset, train_records, tests, inference, on_generation=callback)
        timing["replicates"].append({"replicate": r, "seconds": time.perf_counter() - t0})
        best = result.best
        replicates.append({
            "replicate": r,
            "seed": seed,
            "converged": result.converged,
            "generations": result.generations,
            "experiments": result.experiments,
            "trace": result.trace,
            "best": {"id": best.id, "chromosome": "".join("1" if b else "0" for b in best.chromosome),
                     "terms": _terms_table(best.trained), "rmse": best.report.rmse,
                     "fitness": best.report.fitness, "sigma": best.trained.sigma},
            "history": result.history,
        })
    timing["total_seconds"] = time.perf_counter() - t_start
    overall = max(replicates, key=lambda rep: (rep["best"]["fitness"], -rep["replicate"]))
    n_gen = max(rep["generations"] for rep in replicates)
    envelope = []
    for g in range(n_gen):
        vals = [rep["trace"][min(g, rep["generations"] - 1)]["best_fitness"] for rep in replicates]
        envelope.append({"generation": g, "mean": float(np.mean(vals)), "min": float(np.min(vals)),
                         "max": float(np.max(vals))})
    report = {
        "report_version": REPORT_VERSION,
        "package_version": __version__,
        "config": cfg,
        "dataset": {"path": str(cfg["data"]), "sha256": _file_digest(cfg["data"]) if Path(cfg["data"]).exists() else None,
                    "n_qubits": n_qubits, "records": len(dataset.records),
                    "train_records": len(train_records), "test_records": len(test_records)},
        "primitive_set_size": len(pset),
        "best": {"replicate": overall["replicate"], **overall["best"]},
        "truth": truth,
        "comparison": compare_with_truth(overall["best"]["terms"], truth),
        "envelope": envelope,
        "accounting": {"experiments": sum(rep["experiments"] for rep in replicates),
                       "trainings": sum(1 for rep in replicates for gen in rep["history"] for m in gen
                                        if not m["elite"])},
        "replicates": replicates,
    }
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["replicate", "generation", "best_fitness", "mean_fitness"])
    for rep in replicates:
        for row in rep["trace"]:
            writer.writerow([rep["replicate"], row["generation"], repr(row["best_fitness"]), repr(row["mean_fitness"])])
    return report, buf.getvalue(), timing


def load_dataset(path) -> Dataset:
    if not Path(path).is_file():
        raise DataError(f"dataset {path} does not exist")
    try:
        return Dataset.read(path)
    except FormatError as exc:
        raise DataError(str(exc)) from None


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def cmd_run(args) -> int:
    cfg = run_config(args)
    dataset = load_dataset(cfg["data"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(r, g, ranked):
        print(f"replicate {r} generation {g}: best fitness {ranked[0].report.fitness:.2f}  {ranked[0].trained.model}",
              flush=True)

    try:
        report, trace_csv, timing = execute_run(cfg, dataset, progress if not args.quiet else None)
    except SearchError as exc:
        raise DataError(str(exc)) from exc
    (out / "report.json").write_text(dump_report(report))
    (out / "trace.csv").write_text(trace_csv)
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    best = report["best"]
    print(f"best model (replicate {best['replicate']}): fitness {best['fitness']:.2f}, rmse {best['rmse']:.5f}")
    print(f"report written to {out / 'report.json'}")
    if not all(rep["converged"] for rep in report["replicates"]):
        print(f"fitness threshold {cfg['threshold']} not reached within {cfg['max_generations']} generations",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# -- report ---------------------------------------------------------------------


def format_report(report: dict) -> str:
    lines = []
    best = report["best"]
    lines.append(f"best model (replicate {best['replicate']}, {best['id']})")
    if not best["terms"]:
        lines.append("  identity evolution (no primitives)")
    truth = report.get("truth")
    header = f"  {'term':<24}{'kind':<13}{'learned':>12}{'true':>12}{'|diff|':>12}"
    lines.append(header)
    for row in report["comparison"] if truth is not None else compare_with_truth(best["terms"], None):
        term = f"{'C' if row['kind'] == COHERENT else 'D'}[{row['label']}]"
        true = "unknown" if row["true"] is None else f"{row['true']:.4f}"
        diff = "unknown" if row["abs_diff"] is None else f"{row['abs_diff']:.4f}"
        lines.append(f"  {term:<24}{row['kind']:<13}{row['learned']:>12.4f}{true:>12}{diff:>12}")
    lines.append(f"final fitness {best['fitness']:.2f}  (rmse {best['rmse']:.5f})")
    for rep in report["replicates"]:
        status = "converged" if rep["converged"] else "generation cap"
        lines.append(f"  replicate {rep['replicate']}: fitness {rep['best']['fitness']:.2f} "
                     f"after {rep['generations']} generation(s), {status}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        with open(args.path) as fh:
            report = json.load(fh)
        text = format_report(report)
    except FileNotFoundError:
        raise DataError(f"report {args.path} does not exist") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"corrupt report {args.path}: {exc}") from None
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oqmla", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset from a hidden model")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=sorted(SCENARIOS))
    src.add_argument("--model", help="model spec, e.g. 0.5*C[XI],0.2*D[-+]")
    g.add_argument("--out", required=True)
    g.add_argument("--noise", help="readout flip probabilities p,q")
    g.add_argument("--mode", help="arbitrary | local | mixed:<fraction>")
    g.add_argument("--seed", type=int)
    g.add_argument("--shots", type=int, help="shots per record")
    g.add_argument("--times", type=int, help="number of grid times")
    g.add_argument("--t-min", type=float)
    g.add_argument("--t-max", type=float)
    g.add_argument("--designs", type=int, help="designs per grid time")
    g.add_argument("--config", help="JSON config file")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="search for the model behind a dataset")
    r.add_argument("--data")
    r.add_argument("--out", required=True)
    r.add_argument("--replicates", type=int)
    r.add_argument("--target-primitives", type=float)
    r.add_argument("--population", type=int)
    r.add_argument("--particles", type=int)
    r.add_argument("--max-generations", type=int)
    r.add_argument("--threshold", type=float)
    r.add_argument("--budget", type=int, help="experiments per training")
    r.add_argument("--seed", type=int)
    r.add_argument("--config", help="JSON config file or a previous report.json")
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize a run report")
    p.add_argument("path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
