from __future__ import annotations

import json
import subprocess
import sys

import pytest

from trustgrid.cli import main
from trustgrid.identity import parse_certificate

SMALL = ["--set", "neighborhoods=2", "--set", "nodes_per_neighborhood=5", "--set", "market_cycles=4",
         "--set", "scheme='digest'"]


@pytest.fixture
def run_dir(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", *SMALL, "--scenario", "50-50", "--out", str(out)]) == 0
    return out


def test_simulate_writes_every_artifact(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    assert {"prices.csv", "trades.csv", "ledger-trust.jsonl", "ledger-trading.jsonl", "graph.txt",
            "certificates.json", "metrics.json", "manifest.json"} <= names
    prices = (run_dir / "prices.csv").read_text().splitlines()
    assert prices[0].startswith("# trustgrid 0.1.0 seed=42")
    assert len(prices) == 2 + 4
    assert (run_dir / "trades.csv").read_text().splitlines()[1] == (
        "cycle,buy_id,sell_id,kw,unit_price,buyer,seller,green,cross_neighborhood"
    )
    for name in ("ledger-trust.jsonl", "ledger-trading.jsonl", "graph.txt"):
        assert (run_dir / name).read_text().startswith("# trustgrid 0.1.0 seed=42\n")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["seed"] == 42
    assert manifest["config"]["buyer_fraction"] == 0.5


def test_rerun_from_manifest_is_byte_identical(run_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["rerun", str(run_dir / "manifest.json"), "--out", str(again)]) == 0
    for p in run_dir.iterdir():
        assert (again / p.name).read_bytes() == p.read_bytes(), p.name


def test_same_seed_twice_same_outputs(tmp_path):
    outs = []
    for name in ("a", "b"):
        assert main(["simulate", *SMALL, "--seed", "42", "--out", str(tmp_path / name)]) == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir()})
    assert outs[0] == outs[1]


def test_inspect_cert_prints_certificate(run_dir, capsys):
    capsys.readouterr()
    assert main(["inspect", "--state", str(run_dir), "cert", "7"]) == 0
    text = capsys.readouterr().out.rstrip("\n")
    lines = text.split("\n")
    assert lines[0].startswith("Pk 2048R/") and lines[1].startswith("uid ")
    assert all(line.startswith("sig ") for line in lines[2:]) and len(lines) >= 4
    parse_certificate(text)


def test_inspect_unknown_cert_is_usage_error(run_dir):
    assert main(["inspect", "--state", str(run_dir), "cert", "9999"]) == 2


def test_inspect_ledger_and_graph(run_dir, capsys):
    capsys.readouterr()
    assert main(["inspect", "--state", str(run_dir), "ledger", "trust"]) == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    edges = sum(1 for e in lines if e.get("kind") == "TrustEstablished")
    assert main(["inspect", "--state", str(run_dir), "graph"]) == 0
    graph = capsys.readouterr().out.splitlines()
    assert edges == len(graph) > 0
    assert sum(1 for e in lines if e.get("kind") == "NodeJoined") == 10


def test_inspect_missing_state_dir(tmp_path):
    assert main(["inspect", "--state", str(tmp_path / "none"), "graph"]) == 2


def test_missing_config_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.toml"
    assert main(["simulate", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_override_key_is_usage_error(tmp_path):
    assert main(["simulate", "--set", "colour=blue", "--out", str(tmp_path)]) == 2


def test_bad_scenario_is_usage_error():
    assert main(["simulate", "--scenario", "60-40"]) == 2


def test_preset_with_scenario(tmp_path):
    out = tmp_path / "p"
    code = main(["simulate", "--preset", "config2", "--scenario", "25-75", "--set", "market_cycles=2",
                 "--set", "nodes_per_neighborhood=4", "--out", str(out)])
    assert code == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert (cfg["neighborhoods"], cfg["buyer_fraction"]) == (3, 0.25)


def test_benchmark_join_rows(tmp_path, capsys):
    assert main(["benchmark", "join", "--sizes", "8,16", "--reps", "1", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "benchmark-join.csv").read_text().splitlines()[2:]
    assert [r.split(",")[0] for r in rows] == ["8", "16"]
    assert [r.split(",")[4] for r in rows] == ["7", "15"]


def test_benchmark_trust_decentralized(tmp_path):
    assert main(["benchmark", "trust", "--sizes", "30", "--decentralized", "--reps", "10",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "benchmark-trust-decentralized.csv").is_file()


@pytest.mark.parametrize("sizes", ["1", "0,5", "a,b", ""])
def test_benchmark_bad_sizes(sizes):
    assert main(["benchmark", "join", "--sizes", sizes]) == 2


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("RETINA_OUT", str(tmp_path / "env"))
    assert main(["simulate", *SMALL]) == 0
    assert (tmp_path / "env" / "prices.csv").is_file()


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "trustgrid", "--version"], capture_output=True, text=True)
    assert ok.returncode == 0 and "trustgrid" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "trustgrid", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2
