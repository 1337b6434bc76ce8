import csv
import json
import subprocess
import sys

import pytest

from oqmla import cli, data

SMALL_RUN = ["--population", "3", "--max-generations", "2", "--budget", "15", "--particles", "150", "-q"]


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("ds") / "bench.jsonl"
    code = cli.main(["generate", "--scenario", "bench-a", "--out", str(path), "--times", "40", "--shots", "500",
                     "--designs", "1", "--seed", "4"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def small_run(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["run", "--data", str(small_dataset), "--out", str(out), "--replicates", "2", "--seed", "7",
                     "--threshold", "1e9", *SMALL_RUN])
    return code, out


@pytest.mark.parametrize("scenario,spec", [
    ("bench-a", "0.5*C[XI],1.3*C[ZZ],0.2*D[-+],0.3*D[YX]"),
    ("local", "-0.3*C[ZI],-1.5*C[ZX],0.2*D[-I]"),
    ("noisy", "1.5*C[XZ],0.3*D[I-],0.2*D[Y+]"),
])
def test_generate_scenarios(tmp_path, scenario, spec):
    path = tmp_path / "d.jsonl"
    assert cli.main(["generate", "--scenario", scenario, "--out", str(path), "--times", "3", "--shots", "10"]) == 0
    ds = data.Dataset.read(path)
    assert ds.true_model == data.TrueModel.from_spec(spec)
    assert len(ds.records) == 3 * 3
    if scenario == "local":
        assert all(r.local is not None for r in ds.records)
    if scenario == "noisy":
        assert ds.manifest["noise"] == {"p": 0.02, "q": 0.02}


def test_generate_bad_label_names_it(tmp_path, capsys):
    code = cli.main(["generate", "--model", "0.5*C[XQ]", "--out", str(tmp_path / "x")])
    assert code == cli.EXIT_CONFIG
    assert "XQ" in capsys.readouterr().err


def test_generate_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "0.3*D[-]", "shots": 7, "n_times": 2}))
    path = tmp_path / "d.jsonl"
    assert cli.main(["generate", "--config", str(cfg), "--shots", "9", "--out", str(path)]) == 0
    ds = data.Dataset.read(path)
    assert ds.manifest["shots"] == 9 and len(ds.records) == 2 * 3


def test_run_outputs(small_run):
    code, out = small_run
    assert code == cli.EXIT_NOT_CONVERGED  # threshold unreachable
    report = json.loads((out / "report.json").read_text())
    assert len(report["replicates"]) == 2
    rows = list(csv.DictReader((out / "trace.csv").open()))
    assert list(rows[0]) == ["replicate", "generation", "best_fitness", "mean_fitness"]
    for rep in report["replicates"]:
        assert len(rep["trace"]) == rep["generations"] == 2
        assert sum(1 for r in rows if int(r["replicate"]) == rep["replicate"]) == rep["generations"]
    assert report["config"]["seed"] == 7
    assert {row["label"] for row in report["comparison"]} >= {"XI", "ZZ", "-+", "YX"}
    assert len(report["envelope"]) == 2
    assert (out / "timing.json").exists()


def test_run_is_deterministic(small_dataset, small_run, tmp_path):
    _, first = small_run
    cli.main(["run", "--data", str(small_dataset), "--out", str(tmp_path), "--replicates", "2", "--seed", "7",
              "--threshold", "1e9", *SMALL_RUN])
    assert (tmp_path / "report.json").read_bytes() == (first / "report.json").read_bytes()
    assert (tmp_path / "trace.csv").read_bytes() == (first / "trace.csv").read_bytes()


def test_rerun_from_report_config(small_run, tmp_path):
    _, first = small_run
    cli.main(["run", "--config", str(first / "report.json"), "--out", str(tmp_path), "-q"])
    assert (tmp_path / "report.json").read_bytes() == (first / "report.json").read_bytes()


def test_run_missing_dataset(tmp_path, capsys):
    code = cli.main(["run", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_DATA
    assert "does not exist" in capsys.readouterr().err


def test_run_version_mismatch(tmp_path):
    path = tmp_path / "old.jsonl"
    path.write_text('{"format_version": 0, "n_qubits": 2}\n')
    assert cli.main(["run", "--data", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


def test_run_config_errors(tmp_path, small_dataset):
    assert cli.main(["run", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"crossover_p": 3}))
    assert cli.main(["run", "--data", str(small_dataset), "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_report_prints_table(small_run, capsys):
    _, out = small_run
    assert cli.main(["report", str(out / "report.json")]) == 0
    text = capsys.readouterr().out
    assert "C[XI]" in text and "final fitness" in text


def test_report_without_truth(small_run, tmp_path, capsys):
    _, out = small_run
    report = json.loads((out / "report.json").read_text())
    report["truth"] = None
    path = tmp_path / "r.json"
    path.write_text(json.dumps(report))
    assert cli.main(["report", str(path)]) == 0
    assert "unknown" in capsys.readouterr().out


def test_report_empty_model(small_run, tmp_path, capsys):
    _, out = small_run
    report = json.loads((out / "report.json").read_text())
    report["best"]["terms"] = []
    report["truth"] = None
    path = tmp_path / "r.json"
    path.write_text(json.dumps(report))
    assert cli.main(["report", str(path)]) == 0
    assert "identity evolution" in capsys.readouterr().out


def test_report_corrupt(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["report", str(path)]) == cli.EXIT_DATA
    path.write_text("{}")
    assert cli.main(["report", str(path)]) == cli.EXIT_DATA


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "oqmla", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "generate" in out.stdout
