import csv
import json
import math

import pytest
import yaml

from dhmm import cli, experiment, graph
from dhmm.experiment import ExperimentConfig


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_graph(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "gen-graph", "--S", "10", "--r", "0.5", "--seed", "3")
    assert code == 0
    doc = json.loads(out)
    assert doc["S"] == 10 and len(doc["positions"]) == 10
    assert graph.is_connected(graph.GraphTopology.from_dict(doc))
    path = tmp_path / "g.json"
    assert run_cli(capsys, "gen-graph", "--S", "10", "--r", "0.5", "--out", str(path))[0] == 0
    assert graph.GraphTopology.load(path).S == 10


def test_analyze_spectrum(capsys, tmp_path):
    curve = tmp_path / "curve.csv"
    code, out, _ = run_cli(capsys, "analyze-spectrum", "--S", "60", "--r", "0.2", "--seed", "1",
                           "--construction", "max-degree", "--curve-csv", str(curve))
    assert code == 0
    doc = json.loads(out)
    assert {"lambda2", "eps_star", "rho_star", "gamma", "tau", "m_eigenvalues"} <= set(doc)
    assert len(doc["m_eigenvalues"]) == 120
    rows = list(csv.DictReader(curve.open()))
    assert set(rows[0]) == {"lambda2", "eps", "rho"} and len(rows) > 100


def test_analyze_spectrum_needs_topology(capsys):
    code, _, err = run_cli(capsys, "analyze-spectrum")
    assert code == 2 and "--graph" in err


def test_run_artifacts_and_rerun_identity(capsys, tmp_path):
    args = ["run", "--preset", "small", "--n", "20", "--T", "4", "--seeds", "0..2", "--keep-traces"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(capsys, *args, "--output", str(a))[0] == 0
    assert run_cli(capsys, *args, "--output", str(b), "--workers", "2")[0] == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert {"summary.json", "topology.json", "spectrum.json", "model.json"} <= {str(f) for f in files}
    assert (a / "seed_2" / "consensus_traces.csv").exists()
    for f in files:
        if f.name == "config.json":
            continue
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    summary = experiment.load_summary(a)
    assert summary["seeds"] == [0, 1, 2]
    assert summary["max_sup_disagreement"] == max(summary["sup_disagreement"].values())


def test_output_root_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(experiment.OUTPUT_ENV, str(tmp_path / "env"))
    code, out, _ = run_cli(capsys, "run", "--preset", "small", "--n", "5", "--T", "1")
    assert code == 0 and json.loads(out)["output"] == str(tmp_path / "env")


def test_config_file_with_overrides(capsys, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"model": "small", "n": 7, "T": 2, "seeds": "3,5", "eps": 1.5}))
    code, _, _ = run_cli(capsys, "run", "--config", str(cfg), "--T", "3", "--output", str(tmp_path / "o"))
    assert code == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["T"] == 3 and saved["n"] == 7 and saved["seeds"] == [3, 5] and saved["eps"] == 1.5
    run = json.loads((tmp_path / "o" / "seed_5" / "run.json").read_text())
    assert run["eps"] == 1.5


def test_model_file_and_graph_file(capsys, tmp_path):
    from dhmm import hmm
    model = tmp_path / "model.json"
    model.write_text(json.dumps(hmm.model_to_dict(hmm.small_model(5))))
    g = tmp_path / "g.json"
    graph.sample_connected_rgg(5, 0.7, 2).save(g)
    from dhmm.errors import AssumptionWarning
    with pytest.warns(AssumptionWarning):
        code, _, err = run_cli(capsys, "run", "--model-file", str(model), "--graph", str(g), "--T", "2",
                               "--n", "4", "--output", str(tmp_path / "o"))
    assert code == 0, err


def test_invalid_config_exit_code(capsys, tmp_path):
    assert run_cli(capsys, "run", "--preset", "small", "--n", "0")[0] == 2
    assert run_cli(capsys, "run", "--preset", "nothing-like-this")[0] == 2
    assert run_cli(capsys, "run", "--preset", "small", "--graph", str(tmp_path / "missing.json"))[0] == 2
    with pytest.raises(Exception):
        ExperimentConfig.from_dict({"model": "small", "bogus": 1})


def test_disconnected_topology_reports_error(capsys):
    code, _, err = run_cli(capsys, "analyze-spectrum", "--S", "40", "--r", "0.01")
    assert code == 2 and "connected" in err


def test_sweep_mixing(capsys, tmp_path):
    out = tmp_path / "sweep.csv"
    assert run_cli(capsys, "sweep-mixing", "--S", "10..30..10", "--trials", "4", "--out", str(out))[0] == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 12 and set(rows[0]) == {"S", "trial", "lambda2", "rho_star", "tau"}
    for r in rows:
        assert float(r["tau"]) == pytest.approx(1 / math.log(1 / float(r["rho_star"])))


def test_required_n(capsys):
    code, out, _ = run_cli(capsys, "required-n", "--preset", "small", "--beta", "6.9")
    assert code == 0
    doc = json.loads(out)
    assert doc["iterate_floor"] <= doc["unnormalized"]["n"]
    assert set(doc["posterior"]["n"]) == {"0", "2"}


def test_required_n_reports_posterior_hypotheses(capsys):
    code, out, _ = run_cli(capsys, "required-n", "--preset", "small", "--beta", "6.9", "--T", "1")
    assert code == 0 and "error" in json.loads(out)["posterior"]


def test_verify_bounds_small(capsys, tmp_path):
    out = tmp_path / "report.json"
    code, _, _ = run_cli(capsys, "verify-bounds", "--preset", "small", "--beta", "6.9", "--seeds", "0..4",
                         "--m", "0", "--out", str(out))
    doc = json.loads(out.read_text())
    assert code in (0, 3)
    assert code == (0 if doc["event"]["satisfied"] and all(b["satisfied"] for b in doc["bounds"].values()) else 3)
    for b in doc["bounds"].values():
        assert {"bound", "satisfied", "event_rate", "floor"} <= set(b)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for name in ("gen-graph", "analyze-spectrum", "run", "verify-bounds", "sweep-mixing", "required-n"):
        assert name in text
