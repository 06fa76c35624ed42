"""Experiment runner: simulate | solve | mpc | check.

Configuration comes from one JSON document; every field has a default so a
minimal config (or `{}`) runs the canonical bouncing-ball study. Data files
are deterministic for a fixed config (wall-clock timing only ever appears in
summary JSON). Exit codes: 0 ok, 2 config, 3 simulation, 4 solver,
5 verification.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .checks import run_all_checks
from .errors import ConfigError, HilqrError, SimulationError, SolverError
from .mpc import ClosedLoopLog, MpcConfig, TrackingProblem, run_mpc
from .simulate import build_extensions, rollout
from .systems import (
    BouncingBallParams,
    bouncing_ball,
    classify_ball_mode,
    make_single_bounce_reference,
)
from .trajectory import (
    FLOAT_FMT,
    HybridTrajectory,
    read_trajectory,
    write_events_json,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_SOLVER = 4
EXIT_VERIFICATION = 5

_BALL_COMPONENTS = {"z": 0, "zdot": 1}


class _Section:
    """Typed, defaulted access into one nested config dict.

    Reports errors with the dotted path of the offending field and rejects
    unknown keys so typos fail loudly.
    """

    def __init__(self, raw: Any, path: str):
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config section '{path}' must be an object")
        self.raw = raw
        self.path = path
        self.seen: set[str] = set()

    def _fetch(self, key: str, default):
        self.seen.add(key)
        return self.raw.get(key, default)

    def number(self, key: str, default: float) -> float:
        value = self._fetch(key, default)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"config field '{self.path}.{key}' must be a number")
        return float(value)

    def integer(self, key: str, default: int) -> int:
        value = self._fetch(key, default)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"config field '{self.path}.{key}' must be an integer")
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self._fetch(key, default)
        if not isinstance(value, bool):
            raise ConfigError(f"config field '{self.path}.{key}' must be a boolean")
        return value

    def vector(self, key: str, default) -> np.ndarray:
        value = self._fetch(key, default)
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"config field '{self.path}.{key}' must be a number list")
        return np.asarray(value, dtype=float)

    def text(self, key: str, default: Optional[str]) -> Optional[str]:
        value = self._fetch(key, default)
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"config field '{self.path}.{key}' must be a string")
        return value

    def close(self) -> None:
        unknown = set(self.raw) - self.seen
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown config field '{self.path}.{name}'")


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {
        "system", "simulate", "reference", "mpc",
        "perturbation", "ablation", "check",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config section '{sorted(unknown)[0]}'")
    return raw


def _ball_params(cfg: dict) -> BouncingBallParams:
    sec = _Section(cfg.get("system"), "system")
    try:
        params = BouncingBallParams(
            mass=sec.number("mass", 1.0),
            gravity=sec.number("gravity", 9.81),
            restitution=sec.number("restitution", 0.8),
        )
    except ValueError as exc:
        raise ConfigError(f"config section 'system': {exc}") from None
    sec.close()
    return params


def _perturbation(cfg: dict, override: Optional[str]) -> tuple[int, float]:
    sec = _Section(cfg.get("perturbation"), "perturbation")
    component: Any = sec._fetch("component", 0)
    magnitude = sec.number("magnitude", -0.6)
    sec.close()
    if override is not None:
        try:
            comp_text, mag_text = override.split(":", 1)
            component = comp_text.strip()
            magnitude = float(mag_text)
        except ValueError:
            raise ConfigError(
                f"--perturb wants component:magnitude, got '{override}'"
            ) from None
    if isinstance(component, str):
        if component in _BALL_COMPONENTS:
            component = _BALL_COMPONENTS[component]
        else:
            try:
                component = int(component)
            except ValueError:
                raise ConfigError(
                    f"unknown perturbation component '{component}'"
                ) from None
    if not isinstance(component, int) or isinstance(component, bool):
        raise ConfigError("perturbation component must be an index or z/zdot")
    return component, magnitude


def _fmt(value: float) -> str:
    return format(float(value), FLOAT_FMT)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_simulate(cfg: dict, out: Path) -> int:
    params = _ball_params(cfg)
    sec = _Section(cfg.get("simulate"), "simulate")
    start = sec.vector("start", [4.0, 0.0])
    duration = sec.number("duration", 1.0)
    dt = sec.number("dt", 1e-3)
    mode_raw = sec._fetch("mode", None)
    input_raw = sec._fetch("input", 0.0)
    sec.close()
    if start.shape != (2,):
        raise ConfigError("config field 'simulate.start' must have 2 entries")
    n_steps = round(duration / dt)
    if n_steps < 0 or abs(n_steps * dt - duration) > 1e-9:
        raise ConfigError("simulate.duration must be a whole number of timesteps")
    if isinstance(input_raw, (int, float)) and not isinstance(input_raw, bool):
        inputs = np.full((n_steps, 1), float(input_raw))
    elif isinstance(input_raw, list):
        inputs = np.asarray(input_raw, dtype=float).reshape(-1, 1)
        if inputs.shape[0] != n_steps:
            raise ConfigError(
                f"simulate.input has {inputs.shape[0]} entries, horizon needs {n_steps}"
            )
    else:
        raise ConfigError("simulate.input must be a number or a list")
    if mode_raw is None:
        mode = classify_ball_mode(start)
    elif isinstance(mode_raw, int) and not isinstance(mode_raw, bool):
        mode = mode_raw
    else:
        raise ConfigError("simulate.mode must be an integer or null")

    sys_ball = bouncing_ball(params)
    traj = rollout(sys_ball, start, mode, inputs, dt)
    write_trajectory_csv(out / "trajectory.csv", traj)
    write_events_json(out / "events.json", traj)
    print(f"wrote {traj.n_steps + 1} knots, {len(traj.events)} events -> {out}")
    return EXIT_OK


def _reference_settings(cfg: dict) -> dict:
    sec = _Section(cfg.get("reference"), "reference")
    settings = dict(
        x_start=sec.vector("start", [4.0, 0.0]),
        x_goal=sec.vector("goal", [2.5, 0.0]),
        duration=sec.number("duration", 1.0),
        dt=sec.number("dt", 1e-3),
        terminal_weight=np.diag(sec.vector("terminal_weight", [1e3, 1e3])),
        input_weight=sec.number("input_weight", 1e-5),
        tolerance=sec.number("tolerance", 1e-4),
        max_iterations=sec.integer("max_iterations", 200),
        extension_horizon=sec.integer("extension_horizon", 150),
        line_search_depth=sec.integer("line_search_depth", 17),
    )
    sec.close()
    return settings


def _ablation_flags(cfg: dict) -> tuple[bool, bool]:
    sec = _Section(cfg.get("ablation"), "ablation")
    cost_update = sec.boolean("cost_update", True)
    saltation = sec.boolean("saltation", True)
    sec.close()
    return cost_update, saltation


def cmd_solve(cfg: dict, out: Path) -> int:
    params = _ball_params(cfg)
    settings = _reference_settings(cfg)
    _, saltation = _ablation_flags(cfg)
    traj, extensions, gains, report = make_single_bounce_reference(
        params, use_saltation=saltation, **settings
    )
    write_trajectory_csv(out / "reference.csv", traj)
    write_events_json(out / "reference_events.json", traj)
    _write_json(out / "extensions.json", [
        {
            "event_knot": ext.event_knot,
            "transition": ext.transition,
            "source": ext.source,
            "target": ext.target,
            "pre_states": [[_fmt(v) for v in row] for row in ext.pre_states],
            "post_states": [[_fmt(v) for v in row] for row in ext.post_states],
            "pre_input": [_fmt(v) for v in ext.pre_input],
            "post_input": [_fmt(v) for v in ext.post_input],
        }
        for ext in extensions
    ])
    with open(out / "gains.csv", "w") as handle:
        n = traj.state_dim
        m = traj.input_dim
        cols = ["k"]
        cols += [f"u_ff{i}" for i in range(m)]
        cols += [f"K{i}_{j}" for i in range(m) for j in range(n)]
        handle.write(",".join(cols) + "\n")
        for k in range(traj.n_steps):
            row = [str(k)]
            row += [_fmt(v) for v in gains.u_ff[k]]
            row += [_fmt(v) for v in gains.K[k].ravel()]
            handle.write(",".join(row) + "\n")
    _write_json(out / "report.json", {
        "converged": report.converged,
        "iterations": report.iterations,
        "final_cost": report.final_cost,
        "cost_history": report.cost_history,
        "expected_reduction_history": report.expected_reduction_history,
        "regularization_history": report.regularization_history,
        "accepted_alphas": report.accepted_alphas,
        "terminal_state": [float(v) for v in traj.states[-1]],
    })
    print(
        f"reference: converged={report.converged} iterations={report.iterations} "
        f"final_cost={report.final_cost:.6g} terminal={np.array2string(traj.states[-1])}"
    )
    if not report.converged:
        print("solver did not converge", file=_sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _mpc_config(cfg: dict) -> tuple[MpcConfig, dict]:
    sec = _Section(cfg.get("mpc"), "mpc")
    mpc_cfg = MpcConfig(
        horizon=sec.integer("horizon", 50),
        threshold=sec.number("threshold", 1e-4),
        max_iterations=sec.integer("max_iterations", 15),
        batch_width=sec.integer("batch_width", 9),
        extension_horizon=sec.integer("extension_horizon", 150),
        warm_start=sec.boolean("warm_start", True),
        parallel=sec.boolean("parallel", True),
    )
    extras = dict(
        state_weight=sec.vector("state_weight", [2000.0, 20.0]),
        input_weight=sec.number("input_weight", 0.05),
        terminal_weight=sec._fetch("terminal_weight", None),
        reference_csv=sec.text("reference_csv", None),
        reference_events=sec.text("reference_events", None),
    )
    sec.close()
    return mpc_cfg, extras


def _closed_loop_rows(log: ClosedLoopLog, path: Path) -> None:
    n = log.states.shape[1]
    m = log.inputs.shape[1]
    cols = ["t", "mode"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(m)]
    cols += ["converged", "iterations", "expected_reduction"]
    with open(path, "w") as handle:
        handle.write(",".join(cols) + "\n")
        for k in range(log.states.shape[0]):
            row = [_fmt(log.times[k]), str(int(log.modes[k]))]
            row += [_fmt(v) for v in log.states[k]]
            row += [_fmt(v) for v in log.inputs[k]]
            row += [
                str(int(log.converged[k])),
                str(int(log.iterations[k])),
                _fmt(log.expected_reductions[k]),
            ]
            handle.write(",".join(row) + "\n")


def _summarize(log: ClosedLoopLog, reference: HybridTrajectory) -> dict:
    return {
        "n_steps": int(log.n_solves),
        "n_nonconverged": int(log.n_nonconverged),
        "max_tracking_error": float(np.max(log.tracking_errors(reference))),
        "mean_iterations": float(np.mean(log.iterations)),
        "mean_solve_ms": float(np.mean(log.solve_ms)),
    }


def cmd_mpc(cfg: dict, out: Path, ablation: bool, perturb: Optional[str]) -> int:
    params = _ball_params(cfg)
    sys_ball = bouncing_ball(params)
    mpc_cfg, extras = _mpc_config(cfg)
    cost_update, saltation = _ablation_flags(cfg)
    mpc_cfg.use_saltation = saltation
    component, magnitude = _perturbation(cfg, perturb)

    if extras["reference_csv"] is not None:
        events_path = extras["reference_events"]
        if events_path is None:
            raise ConfigError("mpc.reference_events is required with mpc.reference_csv")
        reference = read_trajectory(extras["reference_csv"], events_path, sys_ball)
        extensions = build_extensions(sys_ball, reference, mpc_cfg.extension_horizon)
    else:
        settings = _reference_settings(cfg)
        settings["extension_horizon"] = mpc_cfg.extension_horizon
        reference, extensions, _, ref_report = make_single_bounce_reference(
            params, **settings
        )
        if not ref_report.converged:
            print("reference generation did not converge", file=_sys.stderr)
            return EXIT_SOLVER

    n = reference.state_dim
    if not 0 <= component < n:
        raise ConfigError(f"perturbation component {component} outside state dim {n}")
    disturbance = np.zeros(n)
    disturbance[component] = magnitude
    q = np.diag(extras["state_weight"])
    r = np.array([[extras["input_weight"]]])
    if extras["terminal_weight"] is None:
        q_n = q.copy()
    else:
        q_n = np.diag(np.asarray(extras["terminal_weight"], dtype=float))

    # the disturbance can flip which side of an apex the plant starts on, so
    # classify the perturbed state instead of inheriting the reference mode
    mode0 = classify_ball_mode(reference.states[0] + disturbance)

    def one_run(update: bool) -> tuple[ClosedLoopLog, dict]:
        problem = TrackingProblem(
            system=sys_ball, reference=reference, extensions=extensions,
            q=q, r=r, q_n=q_n, cost_update=update,
        )
        log = run_mpc(problem, sys_ball, reference.states[0], mpc_cfg,
                      disturbance=disturbance, mode0=mode0)
        return log, _summarize(log, reference)

    if ablation:
        log_on, summary_on = one_run(True)
        log_off, summary_off = one_run(False)
        _closed_loop_rows(log_on, out / "closed_loop_update_on.csv")
        _closed_loop_rows(log_off, out / "closed_loop_update_off.csv")
        payload = {"update_on": summary_on, "update_off": summary_off}
        _write_json(out / "summary.json", payload)
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        log, summary = one_run(cost_update)
        _closed_loop_rows(log, out / "closed_loop.csv")
        _write_json(out / "summary.json", summary)
        print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_check(cfg: dict, out: Path, seed_override: Optional[int]) -> int:
    sec = _Section(cfg.get("check"), "check")
    seed = sec.integer("seed", 0)
    inject = sec.text("inject_fault", None)
    sec.close()
    if seed_override is not None:
        seed = seed_override
    results = run_all_checks(seed=seed, inject_fault=inject)
    payload = []
    for res in results:
        state = "PASS" if res.passed else "FAIL"
        print(
            f"{state}  {res.name:28s} measured {res.measured:.3e} "
            f"(threshold {res.threshold:.1e})  {res.detail}"
        )
        payload.append({
            "name": res.name,
            "passed": bool(res.passed),
            "measured": float(res.measured),
            "threshold": float(res.threshold),
            "detail": res.detail,
        })
    _write_json(out / "checks.json", payload)
    if not all(res.passed for res in results):
        return EXIT_VERIFICATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hilqr",
        description="Hybrid trajectory optimization experiments (bouncing ball)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "open-loop hybrid rollout to CSV + events JSON"),
        ("solve", "generate the single-bounce reference trajectory"),
        ("mpc", "closed-loop receding-horizon tracking run"),
        ("check", "numerical verification battery"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--config", default=None, help="JSON config path")
        cmd.add_argument("--out", default="out", help="output directory")
        if name == "mpc":
            cmd.add_argument(
                "--ablation", action="store_true",
                help="run the cost update both on and off, paired summary",
            )
            cmd.add_argument(
                "--perturb", default=None, metavar="COMPONENT:MAGNITUDE",
                help="override the initial-state perturbation (e.g. z:0.5)",
            )
        if name == "check":
            cmd.add_argument("--seed", type=int, default=None,
                             help="seed for randomized verification states")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "mpc":
            return cmd_mpc(cfg, out, args.ablation, args.perturb)
        return cmd_check(cfg, out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=_sys.stderr)
        return EXIT_SOLVER
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=_sys.stderr)
        return EXIT_SIMULATION
    except HilqrError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_VERIFICATION


if __name__ == "__main__":
    _sys.exit(main())
