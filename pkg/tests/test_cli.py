import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest
from conftest import ROOT

from cemkit.cli import build_parser, main

CHAIN = str(ROOT / "models" / "chain.json")
OVERLAP = str(ROOT / "models" / "overlapping-trails.json")


@pytest.fixture(autouse=True)
def no_output_dir(monkeypatch):
    monkeypatch.delenv("CEMKIT_OUTPUT_DIR", raising=False)


def test_solve_chain(tmp_path, capsys):
    out = tmp_path / "chain.state.json"
    assert main(["solve", CHAIN, "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    p3 = next(n["position"] for n in doc["nodes"] if n["id"] == 3)
    assert np.allclose(p3, [3.0, 0.0, 0.0], atol=1e-6)
    assert doc["report"]["converged"] is True and "wall_time" not in doc["report"]
    assert "L = " in capsys.readouterr().err


def test_solve_timings_flag(tmp_path):
    out = tmp_path / "s.json"
    assert main(["solve", CHAIN, "-o", str(out), "--timings"]) == 0
    assert json.loads(out.read_text())["report"]["wall_time"] >= 0.0


def test_validate(capsys):
    assert main(["validate", CHAIN]) == 0
    assert main(["validate", OVERLAP]) == 1
    out = capsys.readouterr().out
    assert "rule 1" in out


def test_formfind_to_stdout(capsysbinary):
    assert main(["formfind", CHAIN]) == 0
    doc = json.loads(capsysbinary.readouterr().out)
    assert next(n["position"] for n in doc["nodes"] if n["id"] == 3) == [2.0, 0.0, 0.0]


def test_formfind_from_stdin(monkeypatch, capsysbinary):
    monkeypatch.setattr(sys, "stdin", io.StringIO((ROOT / "models" / "chain.json").read_text()))
    assert main(["formfind", "-", "-o", "-"]) == 0
    assert json.loads(capsysbinary.readouterr().out)["nodes"]


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CEMKIT_OUTPUT_DIR", str(tmp_path / "out"))
    assert main(["formfind", CHAIN]) == 0
    state = tmp_path / "out" / "chain.state.json"
    assert state.exists()
    assert main(["export", str(state), "--format", "obj"]) == 0
    assert (tmp_path / "out" / "chain.state.obj").read_text().count("\nl ") == 2


def test_export_formats(tmp_path):
    state = tmp_path / "chain.state.json"
    assert main(["formfind", CHAIN, "-o", str(state)]) == 0
    for fmt in ("svg", "obj", "json"):
        target = tmp_path / f"chain.{fmt}"
        assert main(["export", str(state), "--format", fmt, "-o", str(target), "--plane", "xy"]) == 0
        assert target.stat().st_size > 0
    assert (tmp_path / "chain.svg").read_text().rstrip().endswith("</svg>")


def test_bench_report_and_figures(tmp_path):
    csv_path = tmp_path / "wheel.csv"
    assert main(["bench", "wheel", "--sizes", "4,8,16", "--grad", "ad,fd", "--report", str(csv_path)]) == 0
    rows = list(csv.DictReader(csv_path.open()))
    assert len(rows) == 6
    assert [(r["size"], r["grad"]) for r in rows] == [(s, g) for s in ("4", "8", "16") for g in ("ad", "fd")]
    assert all(r["converged"] == "true" for r in rows)
    for name in ("wheel-time.png", "wheel-objective.png"):
        assert (tmp_path / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_bench_to_stdout_skips_figures(tmp_path, capsysbinary, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["bench", "wheel", "--sizes", "4", "--grad", "ad"]) == 0
    text = capsysbinary.readouterr().out.decode()
    assert text.splitlines()[0].startswith("family,size,params")
    assert not list(tmp_path.iterdir())


@pytest.mark.parametrize("argv", [
    ["solve", "missing.json"],
    ["solve", CHAIN, "--eps", "-1"],
    ["solve", CHAIN, "--bogus"],
    ["bench", "wheel", "--sizes", "5"],
    ["bench", "wheel", "--sizes", "a,b"],
    ["bench", "wheel", "--sizes", "4", "--grad", "symbolic"],
    [],
])
def test_user_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("cemkit:") or "usage" in err


def test_bad_model_reports_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": "1.0"')
    assert main(["validate", str(bad)]) == 1
    assert "invalid json" in capsys.readouterr().err


def test_invalid_topology_blocks_solve(capsys):
    assert main(["formfind", OVERLAP]) == 1
    assert "invalid topology" in capsys.readouterr().err


def test_strict_exits_2_on_budget(tmp_path):
    from cemkit.bench import gen_bridge

    model = tmp_path / "bridge.json"
    model.write_text(json.dumps(gen_bridge(4)))
    out = str(tmp_path / "b.json")
    assert main(["solve", str(model), "--max-iter", "2", "--jitter", "0.05", "-o", out, "--strict"]) == 2
    assert main(["solve", str(model), "--max-iter", "2", "--jitter", "0.05", "-o", out]) == 0
    assert main(["formfind", str(model), "--tmax", "1", "-o", out, "--strict"]) == 2


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for target in (a, b):
        assert main(["solve", CHAIN, "-o", str(target), "--seed", "3", "--jitter", "0.1"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["report"]["seed"] == 3
    for fmt in ("svg", "obj"):
        x, y = tmp_path / f"x.{fmt}", tmp_path / f"y.{fmt}"
        main(["export", str(a), "--format", fmt, "-o", str(x)])
        main(["export", str(b), "--format", fmt, "-o", str(y)])
        assert x.read_bytes() == y.read_bytes()


def test_help_lists_flags():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    expected = {
        "solve": ["--tmax", "--eta", "--aux", "--eps", "--max-iter", "--algo", "--grad", "--fd-step",
                  "--fd-scheme", "--seed", "--jitter", "--strict", "--timings", "--output"],
        "bench": ["--sizes", "--grad", "--repeats", "--jobs", "--report", "--no-figures", "--seed", "--jitter"],
        "export": ["--format", "--plane", "--output"],
        "formfind": ["--tmax", "--eta", "--aux", "--strict", "--output"],
        "validate": ["--aux"],
    }
    for name, flags in expected.items():
        text = sub[name].format_help()
        for flag in flags:
            assert flag in text, (name, flag)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "cemkit.cli", "validate", CHAIN], capture_output=True, text=True)
    assert out.returncode == 0 and "valid" in out.stdout
