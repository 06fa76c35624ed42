"""Receding-horizon tracking on hybrid references.

Each control step solves a windowed tracking problem on the current measured
state, applies the first planned input to the plant for one timestep, and
reuses the shifted previous plan as the warm start (the reference inputs
always ride along as the fallback seed). The window cost compares mismatched
modes against the reference extensions when cost_update is on; switching it
off reproduces the naive tracking cost whose flipped-velocity error spikes
around event-timing differences.

Plant time is suspended while a solve runs: the input applied over
[t_k, t_k + dt) always comes from the solve performed at t_k.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cost import CostModel
from .errors import ForwardPassError, SimulationError, SolverError
from .hybrid import FloatArray, HybridSystem
from .integrate import ATOL_DEFAULT, RTOL_DEFAULT
from .simulate import integrate_step, rollout
from .solver import GainSchedule, SolveOptions, SolveReport, solve
from .trajectory import (
    EventRecord,
    HybridTrajectory,
    ReferenceExtension,
    shift_extensions,
)


@dataclass
class MpcConfig:
    horizon: int = 50  # window length in knots
    threshold: float = 1e-4  # convergence cut on |expected reduction|
    max_iterations: int = 15
    batch_width: int = 9  # parallel line-search rollouts per pass
    extension_horizon: int = 150
    warm_start: bool = True
    parallel: bool = True
    use_saltation: bool = True
    rtol: float = RTOL_DEFAULT
    atol: float = ATOL_DEFAULT

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2 knots")
        if self.threshold <= 0.0:
            raise ValueError("threshold must be positive")
        if self.max_iterations < 1 or self.batch_width < 1:
            raise ValueError("max_iterations and batch_width must be positive")

    def alpha_schedule(self) -> FloatArray:
        return 0.6 ** np.arange(self.batch_width)


@dataclass
class TrackingProblem:
    """Full reference, its extensions, penalty schedule, and the plant model."""

    system: HybridSystem
    reference: HybridTrajectory
    extensions: Sequence[ReferenceExtension]
    q: FloatArray
    r: FloatArray
    q_n: FloatArray
    cost_update: bool = True  # event-driven mode-mismatch reference switch

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.q_n = np.asarray(self.q_n, dtype=float)
        n = self.reference.state_dim
        m = self.reference.input_dim
        if self.q.shape != (n, n) or self.q_n.shape != (n, n):
            raise ValueError("Q and Q_N must be n-by-n")
        if self.r.shape != (m, m):
            raise ValueError("R must be m-by-m")


@dataclass
class MpcSolution:
    plan: HybridTrajectory
    gains: GainSchedule
    first_input: FloatArray
    report: SolveReport


def mpc_step(
    problem: TrackingProblem,
    x_now: FloatArray,
    mode_now: int,
    t_index: int,
    previous: Optional[MpcSolution],
    cfg: MpcConfig,
) -> MpcSolution:
    """One receding-horizon solve on the window [t_index, t_index + horizon].

    The window clips at the reference end, applying the terminal penalty at
    the reference's final knot. The zero-length window at the very last knot
    has no decision variables and returns a trivially converged solution.
    """
    ref = problem.reference
    n_total = ref.n_steps
    if not (0 <= t_index <= n_total):
        raise ValueError(f"t_index {t_index} outside reference [0, {n_total}]")
    x_now = np.asarray(x_now, dtype=float)
    hi = min(t_index + cfg.horizon, n_total)
    window = ref.slice(t_index, hi)
    n_window = window.n_steps
    m = ref.input_dim
    if n_window == 0:
        plan = HybridTrajectory(
            dt=ref.dt,
            times=window.times.copy(),
            states=x_now[None, :].copy(),
            inputs=np.zeros((0, m)),
            modes=np.array([mode_now]),
            events=[],
        )
        dx = x_now - ref.states[-1]
        terminal = float(dx @ problem.q_n @ dx)
        report = SolveReport(
            converged=True, iterations=0, final_cost=terminal, cost_history=[terminal]
        )
        gains = GainSchedule(
            u_ff=np.zeros((0, m)),
            K=np.zeros((0, m, ref.state_dim)),
            dj_linear=0.0,
            dj_quadratic=0.0,
        )
        return MpcSolution(plan=plan, gains=gains, first_input=np.zeros(m), report=report)

    cost = CostModel(
        x_ref=window.states,
        u_ref=window.inputs,
        q=problem.q,
        r=problem.r,
        q_n=problem.q_n,
        modes_ref=window.modes,
        extensions=shift_extensions(problem.extensions, t_index),
        use_extensions=problem.cost_update,
    )

    seeds = []
    if cfg.warm_start and previous is not None and previous.plan.n_steps > 0:
        carried = previous.plan.inputs[1:][:n_window]
        seeds.append(np.vstack([carried, window.inputs[len(carried) :]]))
    seeds.append(window.inputs.copy())  # reference seed always available
    t0 = float(ref.times[t_index])
    init = None
    for seed in seeds:
        try:
            init = rollout(
                problem.system, x_now, mode_now, seed, ref.dt, t0=t0,
                rtol=cfg.rtol, atol=cfg.atol,
            )
            break
        except SimulationError:
            continue
    if init is None:
        raise ForwardPassError(f"no seed produced a feasible rollout at knot {t_index}")

    opts = SolveOptions(
        max_iterations=cfg.max_iterations,
        tolerance=cfg.threshold,
        alphas=cfg.alpha_schedule(),
        parallel=cfg.parallel,
        extension_horizon=cfg.extension_horizon,
        use_saltation=cfg.use_saltation,
        rtol=cfg.rtol,
        atol=cfg.atol,
    )
    plan, gains, report = solve(problem.system, cost, init, opts)
    return MpcSolution(
        plan=plan, gains=gains, first_input=plan.inputs[0].copy(), report=report
    )


@dataclass
class ClosedLoopLog:
    """Closed-loop run record: one row per knot, solve metadata alongside.

    The input row at the final knot is the zero vector (no input is applied
    there); solve wall times are kept out of the data rows so logs stay
    byte-reproducible.
    """

    dt: float
    times: FloatArray
    states: FloatArray
    inputs: FloatArray
    modes: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    expected_reductions: FloatArray
    solve_ms: list[float]
    reports: list[SolveReport]
    events: list[tuple[int, EventRecord]]

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[0] - 1

    @property
    def n_solves(self) -> int:
        return len(self.reports)

    @property
    def n_nonconverged(self) -> int:
        return int(np.sum(~self.converged))

    def tracking_errors(self, reference: HybridTrajectory) -> FloatArray:
        return np.linalg.norm(self.states - reference.states, axis=1)


def run_mpc(
    problem: TrackingProblem,
    plant: HybridSystem,
    x0: FloatArray,
    cfg: MpcConfig,
    disturbance: Optional[FloatArray] = None,
    mode0: Optional[int] = None,
) -> ClosedLoopLog:
    """Track the reference with one solve per knot, including the final one.

    The plant may differ from the problem's model. `disturbance` offsets the
    initial state. Solves run at knots 0..N; the first input of each solve is
    applied for one dt, except at knot N where the run ends.
    """
    ref = problem.reference
    n_total = ref.n_steps
    x = np.asarray(x0, dtype=float).copy()
    if disturbance is not None:
        x = x + np.asarray(disturbance, dtype=float)
    mode = int(ref.modes[0]) if mode0 is None else int(mode0)

    n = ref.state_dim
    m = ref.input_dim
    states = np.empty((n_total + 1, n))
    inputs = np.zeros((n_total + 1, m))
    modes = np.empty(n_total + 1, dtype=int)
    converged = np.empty(n_total + 1, dtype=bool)
    iterations = np.empty(n_total + 1, dtype=int)
    reductions = np.zeros(n_total + 1)
    solve_ms: list[float] = []
    reports: list[SolveReport] = []
    events: list[tuple[int, EventRecord]] = []

    previous: Optional[MpcSolution] = None
    for k in range(n_total + 1):
        tic = time.perf_counter()
        try:
            sol = mpc_step(problem, x, mode, k, previous, cfg)
        except SolverError:
            # a blown solve counts as non-converged; the plant coasts one step
            # and the next solve restarts from the reference seed
            sol = None
        solve_ms.append(1e3 * (time.perf_counter() - tic))
        states[k] = x
        modes[k] = mode
        if sol is None:
            report = SolveReport(
                converged=False, iterations=cfg.max_iterations, final_cost=float("inf")
            )
            u_k = np.zeros(m)
        else:
            report = sol.report
            u_k = sol.first_input
        converged[k] = report.converged
        iterations[k] = report.iterations
        if report.expected_reduction_history:
            reductions[k] = report.expected_reduction_history[-1]
        reports.append(report)
        if k < n_total:
            inputs[k] = u_k
            step = integrate_step(
                plant, mode, float(ref.times[k]), x, u_k, ref.dt,
                rtol=cfg.rtol, atol=cfg.atol,
            )
            if step.event is not None:
                events.append((k, step.event))
            x = step.x_next
            mode = step.mode_next
        previous = sol
    return ClosedLoopLog(
        dt=ref.dt,
        times=ref.times.copy(),
        states=states,
        inputs=inputs,
        modes=modes,
        converged=converged,
        iterations=iterations,
        expected_reductions=reductions,
        solve_ms=solve_ms,
        reports=reports,
        events=events,
    )


@dataclass(frozen=True)
class ForceWeightConfig:
    """Endpoints for the contact-force-weighted input penalty.

    legs maps each force channel to the input indices it scales; the penalty
    interpolates between r_max (no force authority) and r_min (full force
    authority) along the weight simplex.
    """

    r_min: FloatArray
    r_max: FloatArray
    legs: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "r_min", np.asarray(self.r_min, dtype=float))
        object.__setattr__(self, "r_max", np.asarray(self.r_max, dtype=float))
        for name, mat in (("r_min", self.r_min), ("r_max", self.r_max)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square")
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(mat)) <= 0.0:
                raise ValueError(f"{name} must be positive definite")
        gap = self.r_max - self.r_min
        for leg in self.legs:
            idx = np.asarray(leg, dtype=int)
            block = gap[np.ix_(idx, idx)]
            if np.min(np.linalg.eigvalsh(block)) < -1e-12:
                raise ValueError("r_max - r_min must be PSD on every leg block")


def force_weights(lams: FloatArray) -> FloatArray:
    """Normalized contact-force weights; all zero when no channel has force."""
    lams = np.asarray(lams, dtype=float)
    if np.any(lams < 0.0):
        raise ValueError("contact force magnitudes must be nonnegative")
    total = float(np.sum(lams))
    if total <= 0.0:
        return np.zeros_like(lams)
    return lams / total


def force_weighted_penalty(lams: FloatArray, cfg: ForceWeightConfig) -> list[FloatArray]:
    """Per-channel input penalties interpolated by contact-force share.

    A channel carrying all the force gets r_min; a channel with none gets
    r_max. With zero total force every channel is penalized at r_max.
    """
    w = force_weights(lams)
    if w.shape[0] != len(cfg.legs):
        raise ValueError("one force magnitude per leg required")
    gap = cfg.r_max - cfg.r_min
    return [cfg.r_max - wj * gap for wj in w]
