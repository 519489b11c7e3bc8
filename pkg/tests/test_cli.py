from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from defaultbsde.cli import KINDS, RunConfig, apply_overrides, run
from defaultbsde.errors import ConfigError

SMALL = ["--set", "n_paths=500", "--set", "N=10"]


def _report(capsys, argv):
    code = run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


def test_unknown_subcommand_exits_2(capsys):
    assert run(["nonsense"]) == 2


def test_unknown_key_exits_2(capsys):
    assert run(["simulate", "--set", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_invalid_values_exit_2(capsys):
    assert run(["price-linear", *SMALL, "--set", "c=1.0"]) == 2
    assert run(["simulate", "--set", "N=0"]) == 2
    assert run(["solve", *SMALL, "--set", 'driver={"type":"bogus"}']) == 2


def test_numerical_failure_exits_3(capsys):
    argv = ["solve", "--set", "n_paths=200", "--set", "N=5", "--set", "theta=0",
            "--set", 'driver={"type":"linear","a":1e300}']
    with np.errstate(over="ignore"):
        assert run(argv) == 3
    assert "non-finite" in capsys.readouterr().err


def test_unwritable_output_exits_2(tmp_path, capsys):
    assert run(["simulate", *SMALL, "--output", str(tmp_path / "missing" / "r.json")]) == 2


def test_reports_are_reproducible(capsys):
    _, a = _report(capsys, ["price-linear", *SMALL])
    _, b = _report(capsys, ["price-linear", *SMALL])
    a.pop("timestamp"), b.pop("timestamp")
    assert a == b
    assert set(a) == {"kind", "config", "seed", "result"}


def test_price_linear_reports_closed_form(capsys):
    code, rep = _report(capsys, ["price-linear", "--set", "n_paths=20000"])
    assert code == 0
    assert rep["result"]["closed_form"] == pytest.approx(np.exp(-0.05))
    assert rep["result"]["agree"]


def test_config_file_round_trip(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"N": 10, "n_paths": 400, "gamma": 0.3, "claim": {"amount": 2.0}}))
    _, rep = _report(capsys, ["price-linear", "--config", str(path)])
    path2 = tmp_path / "cfg2.json"
    cfg = dict(rep["config"])
    path2.write_text(json.dumps(cfg))
    _, rep2 = _report(capsys, ["price-linear", "--config", str(path2)])
    assert rep2["config"] == rep["config"] and rep2["result"] == rep["result"]
    assert rep["config"]["claim"] == {"type": "survival", "amount": 2.0}


def test_simulate_csv_without_defaults(tmp_path):
    out = tmp_path / "paths.csv"
    assert run(["simulate", *SMALL, "--set", "gamma=0", "--set", "max_paths=5", "--format", "csv",
                "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 5 * 11
    assert all(r["H1"] == "0" and float(r["M1"]) == 0.0 for r in rows)
    side = json.loads((tmp_path / "paths.csv.json").read_text())
    assert side["seed"] == 2024 and side["config"]["gamma"] == 0


def test_thread_count_does_not_change_results(monkeypatch, capsys):
    _, one = _report(capsys, ["counterexample", *SMALL])
    monkeypatch.setenv("DEFAULTBSDE_THREADS", "3")
    _, three = _report(capsys, ["counterexample", *SMALL])
    assert one["result"] == three["result"]
    monkeypatch.setenv("DEFAULTBSDE_THREADS", "many")
    assert run(["counterexample", *SMALL]) == 2


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_runs(kind, capsys):
    extra = {"compare": ["--set", "n_trials=2"], "game": ["--set", "n_perturbations=1", "--set", "grid_points=5"],
             "robust": ["--set", "degree=1"]}.get(kind, [])
    code, rep = _report(capsys, [kind, *SMALL, *extra])
    assert code == 0 and rep["kind"] == kind


def test_overrides_parse_json_and_dotted_keys():
    raw = apply_overrides({"claim": {"type": "survival"}}, ["claim.amount=3", "gamma=[0.1, 0.2]", "form=pricing"])
    assert raw == {"claim": {"type": "survival", "amount": 3}, "gamma": [0.1, 0.2], "form": "pricing"}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_run_config_to_dict_round_trip():
    cfg = RunConfig.from_dict("robust", {"N": 20})
    again = RunConfig.from_dict("robust", {k: v for k, v in cfg.to_dict().items() if k != "kind"})
    assert again == cfg
