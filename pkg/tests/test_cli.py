import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from nospin.cli import (EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, jsonable, run_cli, scenario_from_json,
                        scenario_to_json, validate_report)
from nospin.dynamics import scenario_library


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def lagrange_files(workdir):
    sc = workdir / "lag.json"
    assert run_cli(["scenario", "lagrange_homothetic_collision", "-o", str(sc)]) == EXIT_OK
    csv = workdir / "lag.csv"
    assert run_cli(["simulate", str(sc), "-o", str(csv)]) == EXIT_OK
    blow = workdir / "lag_blow.csv"
    assert run_cli(["transform", str(csv), "--cluster", "1,2,3", "--variant", "collision", "-o", str(blow)]) == EXIT_OK
    return sc, csv, blow


def test_simulate_outputs(lagrange_files):
    sc, csv, _ = lagrange_files
    assert csv.read_text().splitlines()[0] == "t,q1x,q1y,q2x,q2y,q3x,q3y,v1x,v1y,v2x,v2y,v3x,v3y"
    side = json.loads((csv.parent / (csv.name + ".json")).read_text())
    assert side["stop_reason"] == "collision-approach"
    assert side["cluster"] == [1, 2, 3]
    assert side["energy_drift"] < 1e-9


def test_scenario_json_round_trip():
    sc = scenario_library("lagrange_homothetic_collision", {})
    doc = json.loads(json.dumps(jsonable(scenario_to_json(sc))))
    back = scenario_from_json(doc)
    assert np.array_equal(back.state.q, sc.state.q) and np.array_equal(back.state.v, sc.state.v)
    assert back.cluster == sc.cluster and back.mode == sc.mode and back.stop == sc.stop


def test_transform_and_spin(lagrange_files, workdir):
    _, _, blow = lagrange_files
    header = blow.read_text().splitlines()[0].split(",")
    assert header[:4] == ["tau", "t", "r", "v"]
    assert {"hk", "F", "P", "theta", "mu"} <= set(header)
    out = workdir / "spin.json"
    assert run_cli(["spin", str(blow), "-o", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["tail_cauchy"] and rep["winding"] == 0 and rep["evidence_only"]


def test_rates_synthetic(workdir):
    t = np.geomspace(1, 1e4, 200)
    p = workdir / "synthetic.csv"
    p.write_text("t,y\n" + "\n".join(f"{a:.17g},{b:.17g}" for a, b in zip(t, t ** (-5 / 3))) + "\n")
    out = workdir / "rates.json"
    assert run_cli(["rates", str(p), "--target", str(-5 / 3), "--kind", "upper", "-o", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["slope"] == pytest.approx(-5 / 3, abs=1e-6)


def test_rates_trajectory(lagrange_files, workdir):
    _, csv, _ = lagrange_files
    out = workdir / "rates_traj.json"
    assert run_cli(["rates", str(csv), "--cluster", "1,2,3", "--mode", "collision", "-o", str(out)]) == EXIT_OK
    fits = {f["name"]: f for f in json.loads(out.read_text())["fits"]}
    assert fits["I_k"]["passed"]


def test_rates_needs_masses(lagrange_files, workdir):
    _, csv, _ = lagrange_files
    bare = workdir / "bare.csv"
    bare.write_text(csv.read_text())
    assert run_cli(["rates", str(bare), "--cluster", "1,2", "--mode", "collision"]) == EXIT_INPUT
    out = workdir / "bare_rates.json"
    assert run_cli(["rates", str(bare), "--cluster", "1,2,3", "--mode", "collision", "--masses", "1,1,1",
                    "-o", str(out)]) == EXIT_OK


def test_cc_find_and_classify(workdir, rng):
    from conftest import equilateral

    q = equilateral() * (1 + 0.05 * rng.normal(size=(3, 2)))
    p = workdir / "guess.json"
    p.write_text(json.dumps({"masses": [1, 1, 1], "positions": q.tolist()}))
    out = workdir / "cc.json"
    assert run_cli(["cc", "find", str(p), "-o", str(out)]) == EXIT_OK
    rec = json.loads(out.read_text())
    assert rec["lambda"] == pytest.approx(3.0, abs=1e-10)
    out2 = workdir / "cls.json"
    assert run_cli(["cc", "classify", str(out), "--mode", "collision", "-o", str(out2)]) == EXIT_OK
    cls = json.loads(out2.read_text())
    assert cls["v0"] == pytest.approx(-np.sqrt(6), abs=1e-12)
    assert cls["mode"] == "collision" and cls["signature"] == [4, 0, 2]
    assert run_cli(["cc", "classify", str(out)]) == EXIT_INPUT


def test_shadow_scalar_toy(workdir):
    p = workdir / "toy.json"
    p.write_text(json.dumps({"type": "scalar_toy"}))
    out = workdir / "toy_out.json"
    assert run_cli(["shadow", str(p), "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["max_error_vs_closed_form"] < 1e-7
    assert doc["rate_fit"] >= doc["eta"]


def test_input_errors(workdir, capsys):
    assert run_cli(["simulate", str(workdir / "missing.json"), "-o", str(workdir / "x.csv")]) == EXIT_INPUT
    bad = workdir / "bad.json"
    bad.write_text('{"masses": [1, 1],\n "positions": oops}')
    assert run_cli(["simulate", str(bad), "-o", str(workdir / "x.csv")]) == EXIT_INPUT
    assert "bad.json:2" in capsys.readouterr().err
    doc = jsonable(scenario_to_json(scenario_library("lagrange_homothetic_collision", {})))
    doc["mode"] = "sideways"
    wrong = workdir / "wrong_mode.json"
    wrong.write_text(json.dumps(doc))
    assert run_cli(["simulate", str(wrong), "-o", str(workdir / "x.csv")]) == EXIT_INPUT
    assert "field mode" in capsys.readouterr().err
    assert run_cli(["no-such-command"]) == EXIT_INPUT


def test_report_empty_cluster_validate_stage(workdir, capsys):
    doc = jsonable(scenario_to_json(scenario_library("lagrange_homothetic_collision", {})))
    doc["cluster"] = []
    p = workdir / "empty_cluster.json"
    p.write_text(json.dumps(doc))
    assert run_cli(["report", str(p)]) == EXIT_INPUT
    assert "validate" in capsys.readouterr().err


def test_report_lagrange(workdir):
    out = workdir / "report.json"
    assert run_cli(["report", "lagrange_homothetic_collision", "-o", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    validate_report(doc)
    assert doc["summary"]["all_passed"]
    assert all(c["status"] in ("pass", "n/a") for c in doc["summary"]["checks"])
    doc["summary"]["checks"][0]["status"] = "maybe"
    with pytest.raises(jsonschema.ValidationError):
        validate_report(doc)


def test_jsonable_nonfinite():
    assert jsonable({"a": np.inf, "b": [np.nan, np.float64(2.0)], "c": np.int64(3)}) == {"a": None, "b": [None, 2.0],
                                                                                         "c": 3}


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "nospin.cli", "scenario", "--list"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "lagrange_homothetic_collision" in res.stdout.split()


def test_exit_codes_distinct():
    assert len({EXIT_OK, EXIT_NUMERIC, EXIT_INPUT}) == 3
