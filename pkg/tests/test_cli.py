import csv
import json

import pytest
from click.testing import CliRunner

from bhtransistor.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_version_and_listing(runner):
    out = runner.invoke(main, ["--version"])
    assert out.exit_code == 0 and "0.1.0" in out.output
    out = runner.invoke(main, ["list-protocols", "--json"])
    tags = [p["tag"] for p in json.loads(out.output)["protocols"]]
    assert tags == sorted(tags) and "noon-ramsey" in tags
    text = runner.invoke(main, ["list-protocols"]).output
    assert "phonon-swap" in text and "fields:" in text


def test_run_writes_results_and_metadata(runner, tmp_path):
    out_dir = tmp_path / "res"
    res = runner.invoke(main, [
        "run", "--config", "noon5", "--protocol", "conditional-transport",
        "--set", "protocol.t_ramp_ns=40", "--seed", "5", "--out", str(out_dir),
    ])
    assert res.exit_code == 0, res.output
    rows = _rows(out_dir / "results.csv")
    assert {r["ancilla"] for r in rows} == {"ground", "excited"}
    assert len(rows) == 10
    meta = json.loads((out_dir / "meta.json").read_text())
    assert meta["protocol"] == "conditional-transport"
    assert meta["seed"] == 5
    assert meta["points"][0]["config"]["protocol"]["t_ramp_ns"] == 40
    assert {"numpy", "scipy", "python"} <= set(meta["versions"])
    assert not (out_dir / "spectrum.csv").exists()
    assert not [p for p in out_dir.iterdir() if p.name.startswith(".staging")]


def test_sweep_adds_key_columns(runner, tmp_path):
    res = runner.invoke(main, [
        "run", "--config", "noon5", "--protocol", "conditional-transport",
        "--set", "protocol.t_ramp_ns=[20, 40]", "--set", "ancilla=ground", "--out", str(tmp_path),
    ])
    assert res.exit_code == 0, res.output
    rows = _rows(tmp_path / "results.csv")
    assert [r["protocol.t_ramp_ns"] for r in rows[::5]] == ["20", "40"]
    assert len(json.loads((tmp_path / "meta.json").read_text())["points"]) == 2


def test_ramsey_writes_spectrum(runner, tmp_path):
    res = runner.invoke(main, [
        "run", "--config", "noon5", "--set", "protocol.hold_ns={start: 0, stop: 40, step: 1}",
        "--out", str(tmp_path),
    ])
    assert res.exit_code == 0, res.output
    spec = _rows(tmp_path / "spectrum.csv")
    assert spec[0].keys() >= {"freq_mhz", "amplitude"}
    assert len(_rows(tmp_path / "results.csv")) == 41


def test_invalid_config_exits_3_without_outputs(runner, tmp_path):
    res = runner.invoke(main, ["run", "--config", "noon5", "--set", "protocol.tau_fraction=[0.5, 0.9]",
                               "--out", str(tmp_path / "x")])
    assert res.exit_code == 3
    err = json.loads(res.stderr.strip().splitlines()[-1])
    assert err["error"] == "validation"
    assert any("tau_fraction" in p for p in err["problems"])
    assert not (tmp_path / "x").exists()
    assert runner.invoke(main, ["run", "--config", "no_such_preset", "--out", str(tmp_path / "y")]).exit_code == 3


def test_unknown_protocol_exits_2(runner, tmp_path):
    res = runner.invoke(main, ["run", "--config", "noon5", "--protocol", "teleport", "--out", str(tmp_path)])
    assert res.exit_code == 2
    assert json.loads(res.stderr.strip())["error"] == "usage"


def test_runtime_error_exits_1(runner, tmp_path):
    res = runner.invoke(main, ["run", "--config", "noon5", "--protocol", "noon-ramsey",
                               "--set", "ancilla=ground", "--out", str(tmp_path / "z")])
    assert res.exit_code == 1
    assert json.loads(res.stderr.strip())["error"] == "DomainError"
    assert not (tmp_path / "z").exists()
