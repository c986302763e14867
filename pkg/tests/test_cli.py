"""End-to-end command line tests: exit codes, determinism, round trips."""
from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from condflow import (
    default_bump_set,
    import_sigma_table,
    reconstruct_on_grid,
    weak_residual,
)
from condflow.cli import main
from condflow.fields import ExpressionField
from condflow.geometry import Box

# a deliberately light configuration: 4 coarse bumps cannot reach the default
# weak gate, so the scenario relaxes it; accuracy itself is tested elsewhere
PAIR = {
    "field": {"kind": "expression", "source": "x1 + x2^2/4", "dimension": 2},
    "box": {"lo": [-1, -1], "hi": [1, 1]},
    "grid": [9, 9],
    "tolerances": {"tol_weak": 1e-4},
    "tasks": [
        {"kind": "reconstruct"},
        {"kind": "verify", "bumps": 4, "order": 12},
        {"kind": "export", "path": "sigma.txt"},
    ],
}

WORKED_FAN = {
    "field": {
        "kind": "fan",
        "spokes": [[1, 0], [0, 1], [-1, -1]],
        "gradients": [[2, -1], [1, -1], [2, -2]],
    },
    "box": {"lo": [-1, -1], "hi": [1, 1]},
    "tasks": [{"kind": "admissible"}, {"kind": "build"}, {"kind": "verify"}],
}

BAD_FAN = {
    "field": {
        "kind": "fan",
        "spokes": [[1, 0], [-1, 2], [-1, -2]],
        "gradients": [[1, 1], [3, 2], [1, 3]],
    },
    "box": {"lo": [-1, -1], "hi": [1, 1]},
    "tasks": [{"kind": "admissible"}],
}


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def test_check_reports_the_task_count(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    assert main(["check", path]) == 0
    out = capsys.readouterr().out
    assert out.strip() == "scenario pair valid: 3 tasks"


def test_run_writes_a_summary_and_exits_zero(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    out_dir = tmp_path / "out"
    assert main(["run", path, "--out", str(out_dir)]) == 0
    captured = capsys.readouterr()
    summary = (out_dir / "pair.summary.txt").read_text()
    assert captured.out == summary
    assert summary.startswith("scenario pair\n")
    assert "result ok" in summary
    assert (out_dir / "sigma.txt").exists()


def test_repeat_runs_are_byte_identical(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    main(["run", path, "--out", str(tmp_path / "a")])
    main(["run", path, "--out", str(tmp_path / "b")])
    capsys.readouterr()
    first = (tmp_path / "a" / "pair.summary.txt").read_bytes()
    second = (tmp_path / "b" / "pair.summary.txt").read_bytes()
    assert first == second


def test_threads_do_not_change_the_output(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    main(["run", path, "--out", str(tmp_path / "a")])
    main(["run", path, "--out", str(tmp_path / "b"), "--threads", "4"])
    capsys.readouterr()
    assert (tmp_path / "a" / "pair.summary.txt").read_bytes() == (
        tmp_path / "b" / "pair.summary.txt"
    ).read_bytes()
    assert (tmp_path / "a" / "sigma.txt").read_bytes() == (
        tmp_path / "b" / "sigma.txt"
    ).read_bytes()


def test_exported_table_passes_verification_again(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    out_dir = tmp_path / "out"
    assert main(["run", path, "--out", str(out_dir)]) == 0
    capsys.readouterr()
    imported = import_sigma_table(out_dir / "sigma.txt")
    field = ExpressionField("x1 + x2^2/4", 2)
    box = Box([-1, -1], [1, 1])
    direct, _ = reconstruct_on_grid(field, box, (9, 9))
    # %.17g round-trips doubles exactly, so the table is the same grid
    np.testing.assert_array_equal(imported.values, direct.values)
    tests = default_bump_set(box, per_axis=2, order=12)
    direct_res = weak_residual(direct, field, tests).max_normalized
    imported_res = weak_residual(imported, field, tests).max_normalized
    assert imported_res <= 2.0 * direct_res


def test_worked_fan_runs_clean(tmp_path, capsys):
    path = _write(tmp_path, "fan.json", WORKED_FAN)
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "loop constraint fails: lhs 4 rhs 8" in out
    assert "split cone 3 along (2, -2)" in out
    assert "3.2 = 1, 1 = 2, 2 = 4, 3.1 = 2" in out
    assert "result ok" in out


def test_inadmissible_fan_fails_the_task(tmp_path, capsys):
    path = _write(tmp_path, "bad.json", BAD_FAN)
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 1
    captured = capsys.readouterr()
    assert "result failed" in captured.out
    assert "task 1 admissible" in captured.err
    assert "product -4" in captured.err


def test_malformed_json_exits_two(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_field_kind_exits_three(tmp_path, capsys):
    payload = dict(PAIR, field={"kind": "mystery", "source": "x1", "dimension": 1})
    path = _write(tmp_path, "odd.json", payload)
    assert main(["run", path]) == 3
    assert "unknown field kind" in capsys.readouterr().err


def test_unknown_task_kind_exits_three(tmp_path, capsys):
    payload = dict(PAIR, tasks=[{"kind": "summon"}])
    path = _write(tmp_path, "odd.json", payload)
    assert main(["run", path]) == 3
    assert "summon" in capsys.readouterr().err


def test_missing_file_exits_two(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.json")]) == 2
    assert "error:" in capsys.readouterr().err


def test_profile_env_var_switches_tolerances(tmp_path, capsys, monkeypatch):
    path = _write(tmp_path, "pair.json", PAIR)
    monkeypatch.setenv("CONDFLOW_PROFILE", "fast")
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "profile fast" in out
    assert "tol_ode 1e-06" in out


def test_unknown_profile_env_var_exits_three(tmp_path, capsys, monkeypatch):
    path = _write(tmp_path, "pair.json", PAIR)
    monkeypatch.setenv("CONDFLOW_PROFILE", "turbo")
    assert main(["run", path]) == 3
    assert "unknown tolerance profile" in capsys.readouterr().err


def test_trace_writes_a_deterministic_table(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    code = main(
        [
            "trace",
            path,
            "--point",
            "0.5,0.25",
            "--tmax",
            "0.4",
            "--samples",
            "8",
            "--out",
            str(tmp_path / "out"),
        ]
    )
    capsys.readouterr()
    assert code == 0
    table = (tmp_path / "out" / "trace.txt").read_text()
    lines = table.splitlines()
    assert lines[0] == "# condflow trace"
    assert lines[1].startswith("# columns t x1 x2 u integral")
    rows = [line.split() for line in lines if not line.startswith("#")]
    assert len(rows) == 9
    t_final, x1, x2, u, integral = map(float, rows[-1])
    assert t_final == 0.4
    assert x1 == pytest.approx(0.9, abs=1e-9)
    assert integral == pytest.approx(0.2, abs=1e-9)


def test_trace_leaving_the_box_is_a_task_failure(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    code = main(["trace", path, "--point", "0.5,0.25", "--tmax", "2.0"])
    capsys.readouterr()
    assert code == 1


def test_zero_threads_is_rejected(tmp_path, capsys):
    path = _write(tmp_path, "pair.json", PAIR)
    assert main(["run", path, "--threads", "0"]) == 2
    assert "--threads" in capsys.readouterr().err


def test_module_entry_point_runs(tmp_path):
    path = _write(tmp_path, "pair.json", PAIR)
    proc = subprocess.run(
        [sys.executable, "-m", "condflow.cli", "check", path],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "valid: 3 tasks" in proc.stdout
