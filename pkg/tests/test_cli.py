"""End-to-end tests for the `hilqr` command line.

Every test drives `hilqr.cli.main` in-process with a real config file and
inspects the produced artifacts; one smoke test checks the installed console
script. A short 0.6 s / 2 ms reference keeps the solve and closed-loop runs
fast while still containing one impact.
"""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from hilqr.cli import main
from hilqr.systems import BouncingBallParams, bouncing_ball
from hilqr.trajectory import read_trajectory

FAST = {
    "reference": {
        "start": [1.0, 0.0],
        "goal": [0.7, 0.0],
        "duration": 0.6,
        "dt": 2e-3,
        "extension_horizon": 40,
    },
    "mpc": {"horizon": 20, "extension_horizon": 40},
    "perturbation": {"component": 0, "magnitude": -0.1},
}


def write_config(path, payload) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    return write_config(tmp_path_factory.mktemp("cfg") / "fast.json", FAST)


@pytest.fixture(scope="module")
def solve_dir(fast_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert main(["solve", "--config", fast_config, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def mpc_dir(fast_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("mpc")
    assert main(["mpc", "--config", fast_config, "--out", str(out)]) == 0
    return out


class TestConfigErrors:
    def test_missing_file(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_invalid_json_reports_position(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"reference": {»}')
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        err = capsys.readouterr().err
        assert "not valid JSON" in err and "line 1" in err

    def test_non_object_root(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", [1, 2])
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "root must be a JSON object" in capsys.readouterr().err

    def test_unknown_section(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"simulator": {}})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "unknown config section 'simulator'" in capsys.readouterr().err

    def test_unknown_field_dotted_path(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"mpc": {"horizons": 9}})
        assert main(["mpc", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "unknown config field 'mpc.horizons'" in capsys.readouterr().err

    def test_wrong_type_dotted_path(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"mpc": {"horizon": 12.5}})
        assert main(["mpc", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "'mpc.horizon' must be an integer" in capsys.readouterr().err

    def test_bad_system_parameter(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"system": {"restitution": -0.2}})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "system" in capsys.readouterr().err

    def test_duration_not_multiple_of_dt(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json", {"simulate": {"duration": 0.0505, "dt": 1e-2}}
        )
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_input_list_length_mismatch(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json",
            {"simulate": {"duration": 0.01, "dt": 1e-2, "input": [0.0, 0.0]}},
        )
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "horizon needs 1" in capsys.readouterr().err

    def test_perturb_override_malformed(self, fast_config, tmp_path, capsys):
        rc = main(["mpc", "--config", fast_config, "--out", str(tmp_path),
                   "--perturb", "zdot"])
        assert rc == 2
        assert "component:magnitude" in capsys.readouterr().err

    def test_perturb_unknown_component(self, fast_config, tmp_path, capsys):
        rc = main(["mpc", "--config", fast_config, "--out", str(tmp_path),
                   "--perturb", "y:0.2"])
        assert rc == 2
        assert "unknown perturbation component 'y'" in capsys.readouterr().err

    def test_perturb_component_out_of_range(self, fast_config, tmp_path):
        rc = main(["mpc", "--config", fast_config, "--out", str(tmp_path),
                   "--perturb", "5:0.1"])
        assert rc == 2


class TestSimulate:
    def test_default_drop_writes_artifacts(self, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--out", str(out)]) == 0
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert len(rows) == 1 + 1001  # header + one row per knot
        events = json.loads((out / "events.json").read_text())
        pairs = {(ev["source"], ev["target"]) for ev in events}
        assert (0, 1) in pairs  # an impact happens inside 1 s
        for ev in events:
            assert set(ev) == {
                "knot", "source", "target", "event_time",
                "x_pre", "x_post", "dt1", "dt2",
            }

    def test_deterministic_bytes(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--out", str(out_a)]) == 0
        assert main(["simulate", "--out", str(out_b)]) == 0
        assert (out_a / "trajectory.csv").read_bytes() == \
            (out_b / "trajectory.csv").read_bytes()
        assert (out_a / "events.json").read_bytes() == \
            (out_b / "events.json").read_bytes()

    def test_hover_has_no_events(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "simulate": {"start": [2.0, 0.0], "duration": 0.2, "input": 9.81},
        })
        out = tmp_path / "sim"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        assert json.loads((out / "events.json").read_text()) == []

    def test_csv_round_trips_exactly(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "simulate": {"start": [0.3, -1.0], "duration": 0.3, "mode": 0},
        })
        out = tmp_path / "sim"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        traj = read_trajectory(
            str(out / "trajectory.csv"), str(out / "events.json"),
            bouncing_ball(BouncingBallParams()),
        )
        assert traj.n_steps == 300
        assert len(traj.events) == 1
        # knot states re-read bit-for-bit (the writer uses round-trip floats)
        z0, zd0 = traj.states[0]
        assert (z0, zd0) == (0.3, -1.0)


class TestSolve:
    def test_artifacts_and_convergence(self, solve_dir):
        report = json.loads((solve_dir / "report.json").read_text())
        assert report["converged"] is True
        assert report["iterations"] <= 50
        term = np.asarray(report["terminal_state"])
        np.testing.assert_allclose(term, [0.7, 0.0], atol=5e-3)
        # cost history is non-increasing on accepted iterates
        hist = report["cost_history"]
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
        gains_rows = (solve_dir / "gains.csv").read_text().splitlines()
        assert len(gains_rows) == 1 + 300  # header + one row per step
        exts = json.loads((solve_dir / "extensions.json").read_text())
        assert len(exts) >= 1
        assert {"event_knot", "pre_states", "post_states"} <= set(exts[0])

    def test_reference_readable_as_trajectory(self, solve_dir):
        traj = read_trajectory(
            str(solve_dir / "reference.csv"),
            str(solve_dir / "reference_events.json"),
            bouncing_ball(BouncingBallParams()),
        )
        assert traj.n_steps == 300
        assert any(ev.transition == 0 for _, ev in traj.events)

    def test_deterministic_bytes(self, fast_config, solve_dir, tmp_path):
        out = tmp_path / "again"
        assert main(["solve", "--config", fast_config, "--out", str(out)]) == 0
        assert (out / "reference.csv").read_bytes() == \
            (solve_dir / "reference.csv").read_bytes()
        assert (out / "reference_events.json").read_bytes() == \
            (solve_dir / "reference_events.json").read_bytes()

    def test_nonconvergence_exits_4(self, tmp_path, capsys):
        strangled = dict(FAST)
        strangled["reference"] = dict(FAST["reference"], max_iterations=1)
        cfg = write_config(tmp_path / "c.json", strangled)
        out = tmp_path / "solve"
        assert main(["solve", "--config", cfg, "--out", str(out)]) == 4
        assert "did not converge" in capsys.readouterr().err
        # artifacts are still written for post-mortem inspection
        assert json.loads((out / "report.json").read_text())["converged"] is False


class TestMpc:
    def test_closed_loop_artifacts(self, mpc_dir):
        summary = json.loads((mpc_dir / "summary.json").read_text())
        assert set(summary) == {
            "n_steps", "n_nonconverged", "max_tracking_error",
            "mean_iterations", "mean_solve_ms",
        }
        assert summary["n_steps"] == 301
        assert summary["n_nonconverged"] == 0
        rows = (mpc_dir / "closed_loop.csv").read_text().splitlines()
        assert len(rows) == 1 + 301
        assert rows[0].split(",") == [
            "t", "mode", "x0", "x1", "u0",
            "converged", "iterations", "expected_reduction",
        ]

    def test_perturbation_applied_to_first_state(self, mpc_dir):
        first = (mpc_dir / "closed_loop.csv").read_text().splitlines()[1].split(",")
        # reference starts at z=1.0; config perturbs z by -0.1
        assert float(first[2]) == pytest.approx(0.9)
        assert float(first[3]) == 0.0

    def test_reference_csv_round_trip_matches_direct(
        self, fast_config, solve_dir, mpc_dir, tmp_path
    ):
        """Feeding the solver's CSV back in reproduces the direct run exactly."""
        loaded = dict(FAST)
        loaded["mpc"] = dict(
            FAST["mpc"],
            reference_csv=str(solve_dir / "reference.csv"),
            reference_events=str(solve_dir / "reference_events.json"),
        )
        cfg = write_config(tmp_path / "c.json", loaded)
        out = tmp_path / "mpc"
        assert main(["mpc", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "closed_loop.csv").read_bytes() == \
            (mpc_dir / "closed_loop.csv").read_bytes()

    def test_missing_events_path_rejected(self, solve_dir, tmp_path):
        loaded = dict(FAST)
        loaded["mpc"] = dict(FAST["mpc"], reference_csv=str(solve_dir / "reference.csv"))
        cfg = write_config(tmp_path / "c.json", loaded)
        assert main(["mpc", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_perturb_override_changes_start(self, fast_config, tmp_path):
        out = tmp_path / "mpc"
        rc = main(["mpc", "--config", fast_config, "--out", str(out),
                   "--perturb", "zdot:-0.2"])
        assert rc == 0
        first = (out / "closed_loop.csv").read_text().splitlines()[1].split(",")
        assert float(first[2]) == pytest.approx(1.0)
        assert float(first[3]) == pytest.approx(-0.2)

    def test_ablation_writes_paired_runs(self, fast_config, tmp_path):
        out = tmp_path / "ab"
        rc = main(["mpc", "--config", fast_config, "--out", str(out), "--ablation"])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"update_on", "update_off"}
        on_rows = (out / "closed_loop_update_on.csv").read_text().splitlines()
        off_rows = (out / "closed_loop_update_off.csv").read_text().splitlines()
        assert len(on_rows) == len(off_rows) == 1 + 301


class TestCheck:
    def test_battery_passes(self, tmp_path, capsys):
        out = tmp_path / "chk"
        assert main(["check", "--out", str(out)]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 7
        assert all(l.startswith("PASS") for l in lines)
        payload = json.loads((out / "checks.json").read_text())
        assert len(payload) == 7
        assert all(entry["passed"] for entry in payload)
        names = {entry["name"] for entry in payload}
        assert {"saltation-vs-oracle", "riccati-equivalence",
                "hybrid-gradient-check", "drop-invariants"} <= names

    def test_seed_override(self, tmp_path):
        assert main(["check", "--out", str(tmp_path / "c"), "--seed", "3"]) == 0

    def test_injected_fault_is_caught(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path / "c.json", {"check": {"inject_fault": "oracle-restitution"}}
        )
        out = tmp_path / "chk"
        assert main(["check", "--config", cfg, "--out", str(out)]) == 5
        payload = json.loads((out / "checks.json").read_text())
        failed = [e["name"] for e in payload if not e["passed"]]
        assert failed == ["saltation-vs-oracle"]
        assert "FAIL" in capsys.readouterr().out


def test_console_script_smoke(tmp_path):
    exe = shutil.which("hilqr")
    if exe is None:
        pytest.skip("console script not installed")
    proc = subprocess.run(
        [exe, "check", "--out", str(tmp_path)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    assert "drop-invariants" in proc.stdout


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "hilqr.cli", "--help"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "check" in proc.stdout
