import json
import subprocess
import sys

import pytest

from hdcycle import cli
from hdcycle.errors import OracleMismatch
from hdcycle.stabilizer import verify_certificate


@pytest.fixture
def files(tmp_path):
    def write(name, obj):
        p = tmp_path / name
        p.write_text(json.dumps(obj))
        return str(p)
    return {
        "dyadic": write("dy.json", {"lambda": 0.5, "beta": 2.0}),
        "twisted": write("tw.json", {"lambda": 0.5, "beta": 2.0, "sign_t1": -1}),
        "twisted_data": write("twd.json", {"spec": {"lambda": 0.5, "beta": 2.0, "sign_t1": -1},
                                           "accumulation": [2.0 ** -i for i in range(1, 20)]}),
        "bad": write("bad.json", {"lambda": 1.5, "beta": 2.0}),
        "blender": write("bl.json", {"branch_A": {"slope": 1.2, "offset": -0.3},
                                     "branch_B": {"slope": 1.2, "offset": 0.3}, "base": [-1, 1]}),
        "dir": tmp_path,
    }


def test_classify(files, capsys):
    assert cli.main(["classify", "--input", files["twisted"]]) == 0
    assert json.loads(capsys.readouterr().out) == {"signs": ["+", "+", "-"], "verdict": "Twisted"}


def test_stabilize_writes_verifiable_certificate(files):
    out = files["dir"] / "cert.json"
    assert cli.main(["stabilize", "--input", files["dyadic"], "--output", str(out)]) == 0
    check = verify_certificate(out.read_text())
    assert check["ok"]


def test_exit_codes(files):
    assert cli.main(["stabilize", "--input", files["twisted"]]) == 3
    assert cli.main(["classify", "--input", files["bad"]]) == 1
    assert cli.main(["classify", "--input", str(files["dir"] / "missing.json")]) == 1
    assert cli.main(["stabilize", "--input", files["dyadic"], "--eps-pert", "1e-7"]) == 2
    assert cli.main(["scan", "--input", files["dyadic"]]) == 1
    assert cli.main(["scan", "--input", files["dyadic"], "--scan", "gamma:0:1:3"]) == 1
    assert cli.main(["bogus", "--input", files["dyadic"]]) == 1


def test_twisted_with_data(files):
    out = files["dir"] / "tw_cert.json"
    assert cli.main(["stabilize", "--input", files["twisted_data"], "--output", str(out)]) == 0
    assert verify_certificate(out.read_text())["ok"]


def test_oracle_mismatch_exit(files, monkeypatch):
    def boom(model, report):
        raise OracleMismatch("forced")
    monkeypatch.setattr(cli, "cross_check", boom)
    assert cli.main(["oracle-check", "--input", files["dyadic"]]) == 4


def test_oracle_check_and_dictionary(files, capsys):
    assert cli.main(["oracle-check", "--input", files["dyadic"]]) == 0
    capsys.readouterr()
    assert cli.main(["dictionary", "--input", files["dyadic"], "--k-max", "4", "--n-max", "4"]) == 0
    assert set(json.loads(capsys.readouterr().out)) >= {"periodic", "cycles", "homoclinic_F"}


def test_scan_finds_cycle_at_t_k(files):
    out = files["dir"] / "scan.csv"
    assert cli.main(["scan", "--input", files["dyadic"], "--scan", "t:0:0.1:161", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == cli.CSV_HEADER
    assert len(lines) == 162
    row = dict(zip(lines[0].split(","), lines[101].split(",")))
    assert row["param_value"] == "0.0625" and row["has_cycle"] == "true"
    # cycles exactly at the dyadic values t = 2^-j that fall on the grid
    hits = [float(ln.split(",")[0]) for ln in lines[1:] if ln.split(",")[3] == "true"]
    assert hits == [1 / 64, 1 / 32, 1 / 16]


def test_scan_workers_identical(files):
    a, b = files["dir"] / "a.csv", files["dir"] / "b.csv"
    args = ["scan", "--input", files["dyadic"], "--scan", "lambda:0.3:0.7:23"]
    assert cli.main(args + ["--output", str(a)]) == 0
    assert cli.main(args + ["--output", str(b), "--workers", "4"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_blender_verify(files, capsys):
    assert cli.main(["blender-verify", "--input", files["blender"]]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["robust"] is True and d["superposition"]["region"] == [-1.0, 1.0]


def test_module_entry_point(files):
    r = subprocess.run([sys.executable, "-m", "hdcycle", "classify", "--input", files["dyadic"]],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "NonTwisted" in r.stdout
