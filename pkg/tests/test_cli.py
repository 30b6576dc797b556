import json
import subprocess
import sys

import pytest

from frogbound.certify import CERT_FIELDS
from frogbound.cli import EXIT_CONFIG, main
from frogbound.output import dumps, fmt_float

SMALL = {
    "simulate-tfm": ["--d", "2", "--tau", "delta:1", "--mu", "1", "--horizon", "200", "--depth-cap", "10",
                     "--pop", "500", "--reps", "30"],
    "simulate-ssfm": ["--d", "2", "--tau", "delta:2", "--mu", "2", "--depth-cap", "10", "--steps", "2000",
                      "--reps", "10"],
    "rde": ["--d", "2", "--tau", "delta:1", "--mu", "1", "--depth", "3", "--pop", "1000", "--generations", "1"],
    "operator": ["--d", "2", "--tau", "delta:2", "--mu", "3", "--lambda", "1", "--reps", "500"],
    "certify": ["--d", "2", "--tau", "delta:1", "--mode", "paper"],
    "verify": ["--claims", "hc,hb,hexpand,constant1", "--d", "2", "--n-max", "3", "--lambdas", "0.5,1"],
    "estimate-mu-c": ["--d", "2", "--tau", "delta:1", "--m", "5", "--horizon", "200", "--depth-cap", "10",
                      "--pop", "300", "--reps", "6", "--mu-max", "8", "--iterations", "2"],
}


def _run(cmd, out, extra=()):
    return main([cmd, *SMALL[cmd], "--out", str(out), "--workers", "1", *extra])


@pytest.mark.parametrize("cmd", sorted(SMALL))
def test_rerun_is_byte_identical(cmd, tmp_path, capsys):
    a, b = tmp_path / "a.out", tmp_path / "b.out"
    assert _run(cmd, a) == 0
    assert _run(cmd, b) == 0
    assert a.read_bytes() == b.read_bytes()
    ma = json.loads((tmp_path / "a.out.manifest.json").read_text())
    mb = json.loads((tmp_path / "b.out.manifest.json").read_text())
    ma.pop("output"), mb.pop("output")
    ma["config"].pop("out"), mb["config"].pop("out")
    ma.pop("argv"), mb.pop("argv")
    assert ma == mb
    assert ma["wall_clock"] is None


@pytest.mark.parametrize("cmd", ["simulate-tfm", "certify", "rde"])
def test_replay_reproduces(cmd, tmp_path, capsys):
    a = tmp_path / "a.out"
    assert _run(cmd, a) == 0
    man = tmp_path / "a.out.manifest.json"
    before = (a.read_bytes(), man.read_bytes())
    a.unlink()
    assert main(["replay", str(man)]) == 0
    assert (a.read_bytes(), man.read_bytes()) == before


def test_workers_do_not_change_output(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate-tfm", *SMALL["simulate-tfm"], "--reps", "9000"]
    assert main([*args, "--out", str(a), "--workers", "1"]) == 0
    assert main([*args, "--out", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_certificate_schema(tmp_path, capsys):
    out = tmp_path / "cert.json"
    assert _run("certify", out) == 0
    cert = json.loads(out.read_text())
    assert tuple(cert) == CERT_FIELDS
    assert abs(cert["mu0"] - 5.079441541679836) < 1e-6


def test_tfm_csv_layout(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert _run("simulate-tfm", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "replica,t,arrivals,cumulative_visits,caps_hit"
    last = {}
    for line in lines[1:]:
        r, t, a, c, caps = line.split(",")
        assert int(a) >= 0 and int(c) >= last.get(r, 0)
        last[r] = int(c)
    assert len(last) == 30


def test_config_errors(tmp_path, capsys):
    assert main(["certify", "--d", "2", "--tau", "delta:1", "--out", "/nonexistent/dir/x.json"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        main(["certify", "--d", "2", "--tau", "pmf:inf=1.0", "--out", str(tmp_path / "x")])
    assert e.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        main(["simulate-tfm", "--d", "2", "--tau", "delta:1", "--out", str(tmp_path / "x")])
    assert e.value.code == EXIT_CONFIG
    assert main(["verify", "--claims", "lemmaA", "--out", str(tmp_path / "v.json")]) == EXIT_CONFIG
    assert main(["simulate-tfm", "--d", "1", "--tau", "delta:1", "--mu", "1", "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_verify_lemma_a_grid(tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"d": 2, "n": 1, "a": "all", "mu": 1, "lambda": 0}]))
    out = tmp_path / "v.json"
    assert main(["verify", "--claims", "lemmaA", "--grid", str(grid), "--reps", "20000", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["lemmaA"]
    assert len(rows) == 2 and all(r["verdict"] == "holds" for r in rows)


def test_float_format():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert dumps({"x": 1.0, "y": [float("inf")], "z": None}) == '{\n  "x": 1,\n  "y": [\n    "inf"\n  ],\n  "z": null\n}'


def test_console_script(tmp_path):
    out = tmp_path / "c.json"
    r = subprocess.run(["frogbound", "certify", "--d", "2", "--tau", "delta:1", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "frogbound.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "frogbound" in r.stdout
