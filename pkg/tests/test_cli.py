import json
import subprocess
import sys
from pathlib import Path

import pytest

from cppmech.cli import main

DATA = Path(__file__).parent / "data"


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_allocate_single_project(capsys):
    code, out, _ = run(["allocate", "--instance", str(DATA / "single.json"), "--seed", "7"], capsys)
    data = json.loads(out)
    assert code == 0
    assert data["chosen"] == [1]
    assert data["expected_payments"] == [0.0]


def test_allocate_is_byte_identical_given_seed(tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        subprocess.run([sys.executable, "-m", "cppmech.cli", "allocate", "--instance",
                        str(DATA / "two_players.json"), "--k", "2", "--seed", "7", "--out", str(path)],
                       check=True)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert json.loads(outs[0])["brute_force"]["ratio"] >= 1 - 1 / 2.718281828459045


def test_allocate_table(capsys):
    code, out, _ = run(["allocate", "--instance", str(DATA / "two_players.json"), "--seed", "1",
                        "--format", "table"], capsys)
    assert code == 0 and "ratio vs OPT" in out


def test_malformed_json_exits_2_with_position(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 1,\n "m": }')
    code, _, err = run(["solve", "--instance", str(bad)], capsys)
    assert code == 2 and "line 2" in err


def test_negative_weight_rejected_at_parse(tmp_path, capsys):
    bad = tmp_path / "neg.json"
    bad.write_text(json.dumps({"n": 1, "m": 1, "k": 1, "players": [
        {"type": "mrs", "terms": [{"weight": -1, "matroid": {"kind": "uniform", "rank": 1}}]}]}))
    code, _, err = run(["audit", "--instance", str(bad), "--seed", "0"], capsys)
    assert code == 2 and "players[0].terms[0].weight" in err


def test_capacity_error_exits_3(capsys):
    code, _, err = run(["distribution", "--x", "0.1,0.1,0.1", "--k", "1", "--enum-cap", "2"], capsys)
    assert code == 3


def test_missing_file_exits_2(capsys):
    code, _, _ = run(["solve", "--instance", "/nonexistent.json"], capsys)
    assert code == 2


def test_distribution_examples(capsys):
    code, out, _ = run(["distribution", "--x", "1,1", "--k", "2"], capsys)
    data = json.loads(out)
    assert data["distribution"] == {"1": 0.25, "2": 0.25, "1,2": 0.5}
    code, out, _ = run(["distribution", "--x", "0.3", "--k", "1", "--format", "table"], capsys)
    assert "{}           0.700000000" in out
    assert "{1}          0.300000000" in out
    assert "sum          1.000000000" in out


def test_distribution_monte_carlo_column(capsys):
    code, out, _ = run(["distribution", "--x", "0.5,0.5", "--k", "2", "--mc", "20000", "--seed", "3"], capsys)
    assert json.loads(out)["monte_carlo"]["tv_distance"] < 0.02


def test_distribution_from_instance(capsys):
    code, out, _ = run(["distribution", "--instance", str(DATA / "two_players.json"), "--rounding", "rkplus"], capsys)
    assert code == 0 and abs(json.loads(out)["total"] - 1) < 1e-12


def test_solve_and_payments(capsys):
    code, out, _ = run(["solve", "--instance", str(DATA / "two_players.json"), "--tol", "1e-9"], capsys)
    assert code == 0 and json.loads(out)["status"] == "converged"
    code, out, _ = run(["payments", "--instance", str(DATA / "two_players.json"), "--seed", "2"], capsys)
    assert code == 0 and len(json.loads(out)["expected"]) == 2


def test_smoke_audit_exits_0(capsys):
    code, out, _ = run(["audit", "--seed", "0"], capsys)
    assert code == 0 and json.loads(out)["passed"] is True


def test_random_audit_is_deterministic(capsys):
    args = ["audit", "--suite", "random", "--count", "3", "--misreports", "2", "--seed", "11"]
    first = run(args, capsys)
    second = run(args, capsys)
    assert first == second and first[0] == 0


def test_unseeded_run_logs_seed(capsys, caplog):
    code, out, err = run(["allocate", "--instance", str(DATA / "single.json")], capsys)
    assert code == 0 and "no --seed given" in caplog.text


def test_bench(capsys):
    code, out, _ = run(["bench", "--count", "2", "--seed", "0"], capsys)
    assert code == 0 and len(json.loads(out)["runs"]) == 2


@pytest.mark.parametrize("argv", [["solve", "--tol", "-1"], ["frobnicate"]])
def test_bad_flags_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
