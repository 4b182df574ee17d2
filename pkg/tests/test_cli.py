import json

import pytest

from diagcert.certificate import Certificate
from diagcert.cli import main
from diagcert.diagnoser import read_stream


@pytest.fixture(autouse=True)
def _in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def _strip_timing(doc):
    doc.pop("timing", None)
    for row in doc.get("log", []):
        row.pop("seconds", None)
    return doc


def test_oracle_diagnosable(capsys):
    code, out = _run(capsys, "oracle", "--spec", "running", "--delta", "1", "--K", "3")
    assert code == 0 and "verdict: DIAGNOSABLE" in out


def test_oracle_witness_file(capsys, tmp_path):
    code, out = _run(capsys, "oracle", "--spec", "running", "--delta", "1", "--K", "2", "--report", "rep")
    assert code == 0 and "verdict: NOT DIAGNOSABLE" in out and "witness_replays: True" in out
    w = json.loads((tmp_path / "witness.json").read_text())
    assert w["fault_step"] == 1 and len(w["x_run"]) == len(w["xh_run"])
    assert (tmp_path / "rep" / "witness.png").stat().st_size > 0


def test_oracle_definition_method(capsys):
    code, out = _run(capsys, "oracle", "--spec", "running", "--delta", "1", "--K", "3", "--method", "definition")
    assert code == 0 and "verdict: DIAGNOSABLE" in out


def test_text_report_is_delimited(capsys):
    _, out = _run(capsys, "dfa", "--delta", "1", "--K", "3")
    lines = out.strip().splitlines()
    assert lines[0] == "== diagcert dfa ==" and lines[-1] == "== end =="


def test_check_printed_barrier_reports_invalid(capsys):
    code, out = _run(capsys, "check-certificate", "--spec", "running", "--cert", "b_running_k3.json", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["verdict"] == "INVALID"
    assert "decrease[q0->q1]" in doc["details"]["failing"]


def test_verify_then_check_round_trip(capsys, tmp_path):
    code, out = _run(capsys, "verify", "--spec", "running", "--delta", "1", "--K", "3", "--degree", "3",
                     "--out", "b.json", "--report", "rep")
    assert code == 0 and "check: VALID" in out
    cert = Certificate.from_json(tmp_path / "b.json")
    assert Certificate.from_json(json.loads(cert.dumps())) == cert
    assert (tmp_path / "rep" / "verify_iterations.png").exists()
    code, out = _run(capsys, "check-certificate", "--spec", "running", "--cert", "b.json")
    assert code == 0 and "verdict: VALID" in out


def test_refute_running_k2(capsys, tmp_path):
    code, out = _run(capsys, "refute", "--spec", "running", "--delta", "1", "--K", "2", "--out", "v.json")
    assert code == 0 and "NOT DIAGNOSABLE" in out
    assert Certificate.from_json(tmp_path / "v.json").kind == "V"


def test_refute_without_outcome_exits_two(capsys):
    code, out = _run(capsys, "refute", "--spec", "running", "--delta", "1", "--K", "3", "--i-max", "3")
    assert code == 2


def test_simulate_then_diagnose(capsys, tmp_path):
    code, out = _run(capsys, "simulate", "--spec", "two-room", "--delta", "0.5", "--x0", "20,20",
                     "--input", "0.5,0.5", "--steps", "10", "--out", "s.jsonl")
    assert code == 0 and "first_fault_exact: 3" in out
    assert len(list(read_stream(tmp_path / "s.jsonl"))) == 11
    code, out = _run(capsys, "diagnose", "--spec", "two-room", "--delta", "0.5", "--K", "5", "--stream", "s.jsonl",
                     "--report", "rep")
    assert code == 0 and "verdict: FAULT DETECTED" in out
    assert (tmp_path / "rep" / "diagnosis.png").exists()


def test_diagnose_running_silent(capsys, tmp_path):
    (tmp_path / "y.jsonl").write_text("".join(json.dumps({"k": k, "y": [v]}) + "\n"
                                              for k, v in enumerate([0, 1.2, 3.2, 5.2, 9])))
    code, out = _run(capsys, "diagnose", "--spec", "running", "--delta", "1", "--K", "3", "--stream", "y.jsonl")
    assert code == 0 and "D: 0" in out


@pytest.mark.parametrize("argv", [
    ["oracle", "--spec", "running", "--delta", "1", "--K", "3", "--bogus"],
    ["oracle", "--spec", "missing.json", "--delta", "1", "--K", "3"],
    ["oracle", "--spec", "two-room", "--delta", "0.5", "--K", "3"],
    ["dfa", "--delta", "0", "--K", "3"],
    ["frobnicate"],
])
def test_errors_exit_one(capsys, argv):
    assert main(argv) == 1


def test_malformed_document_exits_one(capsys, tmp_path):
    (tmp_path / "bad.json").write_text('{"kind": "finite"}')
    assert main(["oracle", "--spec", "bad.json", "--delta", "1", "--K", "3"]) == 1
    assert "states" in capsys.readouterr().err


def test_reports_are_deterministic(capsys):
    argv = ["verify", "--spec", "running", "--delta", "1", "--K", "3", "--degree", "3", "--json", "--serial"]
    a = _strip_timing(json.loads(_run(capsys, *argv)[1]))
    b = _strip_timing(json.loads(_run(capsys, *argv)[1]))
    assert a == b
