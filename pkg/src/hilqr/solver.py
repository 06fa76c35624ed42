"""Saltation-aware iLQR: linearization, backward pass, line-searched forward pass.

Event knots use the exact one-step Jacobian composition
    f_x = Phi(dt2) Xi Phi(dt1),   f_u = Phi(dt2) Xi Psi(dt1) + Psi(dt2)
where Phi/Psi are the smooth variational Jacobians of the two sub-intervals
and Xi the saltation matrix, so the expansion coefficients see the saltation
exactly where the value recursion premultiplies through the event. Smooth
knots reduce to the standard iLQR coefficients.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .cost import CostModel, StageTerms
from .errors import BackwardPassError, ForwardPassError, SimulationError
from .hybrid import FloatArray, HybridSystem, linearize_flow_step, reset_derivatives
from .integrate import ATOL_DEFAULT, RTOL_DEFAULT
from .simulate import build_extensions, closed_loop_rollout, rollout
from .trajectory import HybridTrajectory


@dataclass(frozen=True)
class StepLinearization:
    """One-step flow Jacobians; pre-event sub-Jacobians kept for cost hooks."""

    f_x: FloatArray
    f_u: FloatArray
    pre_f_x: Optional[FloatArray] = None
    pre_f_u: Optional[FloatArray] = None


@dataclass(frozen=True)
class ExpansionCoefficients:
    q_x: FloatArray
    q_u: FloatArray
    q_xx: FloatArray
    q_ux: FloatArray
    q_uu: FloatArray


@dataclass
class GainSchedule:
    """Backward-pass output: feedforward, feedback, and the expected-reduction sums."""

    u_ff: FloatArray  # (N, m)
    K: FloatArray  # (N, m, n)
    dj_linear: float
    dj_quadratic: float


@dataclass
class SolveOptions:
    max_iterations: int = 50
    tolerance: float = 1e-4  # convergence threshold on |expected_reduction(1)|
    alphas: Optional[FloatArray] = None  # default 0.6**j, j = 0..8
    parallel: bool = True
    armijo: float = 1e-4
    reg_init: float = 1e-9
    reg_min: float = 1e-9
    reg_max: float = 1e6
    extension_horizon: Optional[int] = None  # default 10% of the horizon
    use_saltation: bool = True  # ablation: False uses bare reset Jacobians
    rtol: float = RTOL_DEFAULT
    atol: float = ATOL_DEFAULT

    def alpha_schedule(self) -> FloatArray:
        if self.alphas is not None:
            alphas = np.asarray(self.alphas, dtype=float)
        else:
            alphas = 0.6 ** np.arange(9)
        if alphas.size == 0 or np.any(np.diff(alphas) >= 0.0):
            raise ValueError("alphas must be non-empty and sorted descending")
        return alphas


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_cost: float
    cost_history: list[float] = field(default_factory=list)
    expected_reduction_history: list[float] = field(default_factory=list)
    regularization_history: list[float] = field(default_factory=list)
    accepted_alphas: list[float] = field(default_factory=list)


def linearize_trajectory(
    sys: HybridSystem,
    traj: HybridTrajectory,
    use_saltation: bool = True,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> list[StepLinearization]:
    """Per-knot discrete flow Jacobians, composing events exactly.

    use_saltation=False swaps Xi for the bare reset Jacobian (the ablation
    that ignores event-timing sensitivity); identity-reset transitions with
    continuous fields are unaffected by the switch.
    """
    out: list[StepLinearization] = []
    events = dict(traj.events)
    for k in range(traj.n_steps):
        t_k = float(traj.times[k])
        ev = events.get(k)
        if ev is None:
            f_x, f_u = linearize_flow_step(
                sys, int(traj.modes[k]), t_k, traj.states[k], traj.inputs[k], traj.dt
            )
            out.append(StepLinearization(f_x=f_x, f_u=f_u))
            continue
        phi1, psi1 = linearize_flow_step(
            sys, ev.source, t_k, traj.states[k], traj.inputs[k], ev.dt1
        )
        phi2, psi2 = linearize_flow_step(
            sys, ev.target, ev.event_time, ev.x_post, traj.inputs[k], ev.dt2
        )
        if use_saltation:
            jump = ev.saltation
        else:
            _, jump = reset_derivatives(sys, ev.transition, ev.event_time, ev.x_pre)
        out.append(
            StepLinearization(
                f_x=phi2 @ jump @ phi1,
                f_u=phi2 @ jump @ psi1 + psi2,
                pre_f_x=phi1,
                pre_f_u=psi1,
            )
        )
    return out


def stage_expansion(
    terms: StageTerms,
    lin: StepLinearization,
    v_x: FloatArray,
    v_xx: FloatArray,
    transition_terms: Optional[tuple[FloatArray, FloatArray]] = None,
) -> ExpansionCoefficients:
    """Second-order expansion coefficients of one Bellman stage.

    The event composition (saltation included) is already inside lin.f_x and
    lin.f_u. Optional transition-cost derivatives attach through the
    pre-event sub-Jacobians.
    """
    a = lin.f_x
    b = lin.f_u
    q_x = terms.j_x + a.T @ v_x
    q_u = terms.j_u + b.T @ v_x
    q_xx = terms.j_xx + a.T @ v_xx @ a
    q_ux = terms.j_ux + b.T @ v_xx @ a
    q_uu = terms.j_uu + b.T @ v_xx @ b
    if transition_terms is not None:
        jx_nj, jxx_nj = transition_terms
        pa = lin.pre_f_x if lin.pre_f_x is not None else a
        pb = lin.pre_f_u if lin.pre_f_u is not None else b
        q_x = q_x + pa.T @ jx_nj
        q_u = q_u + pb.T @ jx_nj
        q_xx = q_xx + pa.T @ jxx_nj @ pa
        q_ux = q_ux + pb.T @ jxx_nj @ pa
        q_uu = q_uu + pb.T @ jxx_nj @ pb
    return ExpansionCoefficients(
        q_x=q_x,
        q_u=q_u,
        q_xx=0.5 * (q_xx + q_xx.T),
        q_ux=q_ux,
        q_uu=0.5 * (q_uu + q_uu.T),
    )


def backward_pass(
    cost: CostModel,
    traj: HybridTrajectory,
    lins: Sequence[StepLinearization],
    regularization: float,
    feedback_in_value: bool = True,
) -> GainSchedule:
    """Value recursion from the terminal knot; stores gains and the linear
    and quadratic expected-reduction sums used by the line search.

    feedback_in_value=False freezes K out of the recursion (V_x = Q_x), which
    turns V_x into the plain cost adjoint; the resulting u_ff then points down
    the exact gradient of total cost with respect to the inputs. Used by the
    gradient checks.
    """
    n_steps = traj.n_steps
    if len(lins) != n_steps:
        raise ValueError("linearization/trajectory length mismatch")
    m = traj.input_dim
    n = traj.state_dim
    u_ff = np.empty((n_steps, m))
    gains = np.empty((n_steps, m, n))
    _, v_x, v_xx = cost.terminal_terms(traj.states[-1], int(traj.modes[-1]))
    dj_lin = 0.0
    dj_quad = 0.0
    eye_m = np.eye(m)
    events = dict(traj.events)
    for k in range(n_steps - 1, -1, -1):
        terms = cost.stage_terms(k, traj.states[k], traj.inputs[k], int(traj.modes[k]))
        ttc = None
        if cost.transition_cost is not None and k in events:
            ttc = cost.transition_cost(events[k])
        exp = stage_expansion(terms, lins[k], v_x, v_xx, ttc)
        quu_reg = exp.q_uu + regularization * eye_m
        try:
            np.linalg.cholesky(quu_reg)
        except np.linalg.LinAlgError:
            raise BackwardPassError(
                f"Q_uu not positive definite at knot {k} "
                f"(regularization {regularization:.3e})"
            ) from None
        u_ff[k] = -np.linalg.solve(quu_reg, exp.q_u)
        gains[k] = -np.linalg.solve(quu_reg, exp.q_ux)
        dj_lin += float(u_ff[k] @ exp.q_u)
        dj_quad += float(u_ff[k] @ quu_reg @ u_ff[k])
        if feedback_in_value:
            v_x = exp.q_x + gains[k].T @ exp.q_u
            v_xx = exp.q_xx + exp.q_ux.T @ gains[k]
        else:
            v_x = exp.q_x
            v_xx = exp.q_xx
        v_xx = 0.5 * (v_xx + v_xx.T)
    return GainSchedule(u_ff=u_ff, K=gains, dj_linear=dj_lin, dj_quadratic=dj_quad)


def expected_reduction(gains: GainSchedule, alpha: float) -> float:
    """alpha-scaled predicted cost change; negative predicts a decrease."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    return alpha * gains.dj_linear + 0.5 * alpha * alpha * gains.dj_quadratic


@dataclass(frozen=True)
class ForwardPassResult:
    trajectory: HybridTrajectory
    alpha: float  # 0.0 signals that no candidate qualified
    cost: float


def forward_pass(
    sys: HybridSystem,
    cost: CostModel,
    traj: HybridTrajectory,
    extensions,
    gains: GainSchedule,
    alphas: FloatArray,
    baseline_cost: float,
    parallel: bool = True,
    armijo: float = 1e-4,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> ForwardPassResult:
    """Evaluate the alpha batch (plus the alpha=0 seed) and pick a winner.

    Candidates that fail to roll out (coverage, Zeno, grazing) score inf.
    A candidate qualifies when its actual reduction reaches the Armijo
    fraction of |expected_reduction(alpha)|; the lowest cost wins, ties going
    to the larger alpha. Selection depends only on the evaluated costs, never
    on completion order, so parallel and sequential evaluation agree exactly.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0 or np.any(np.diff(alphas) >= 0.0):
        raise ValueError("alphas must be non-empty and sorted descending")
    x0 = traj.states[0]
    mode0 = int(traj.modes[0])

    def evaluate(alpha: float) -> tuple[float, Optional[HybridTrajectory]]:
        try:
            cand = closed_loop_rollout(
                sys, traj, extensions, gains, alpha, x0, mode0, rtol=rtol, atol=atol
            )
            return cost.total(cand), cand
        except SimulationError:
            return float("inf"), None

    batch = list(alphas) + [0.0]  # reference rollout always rides along
    if parallel:
        with ThreadPoolExecutor(max_workers=len(batch)) as pool:
            results = list(pool.map(evaluate, batch))
    else:
        results = [evaluate(a) for a in batch]
    if all(not np.isfinite(c) for c, _ in results):
        raise ForwardPassError("every line-search candidate failed to roll out")

    best: Optional[tuple[float, float, HybridTrajectory]] = None
    for alpha, (cand_cost, cand) in zip(batch, results):
        if alpha <= 0.0 or cand is None or not np.isfinite(cand_cost):
            continue
        predicted = abs(expected_reduction(gains, alpha))
        if baseline_cost - cand_cost < armijo * predicted:
            continue
        if best is None or (cand_cost, -alpha) < (best[0], -best[1]):
            best = (cand_cost, alpha, cand)
    if best is None:
        return ForwardPassResult(trajectory=traj, alpha=0.0, cost=baseline_cost)
    return ForwardPassResult(trajectory=best[2], alpha=best[1], cost=best[0])


InitialGuess = Union[HybridTrajectory, tuple]


def solve(
    sys: HybridSystem,
    cost: CostModel,
    initial: InitialGuess,
    options: Optional[SolveOptions] = None,
) -> tuple[HybridTrajectory, GainSchedule, SolveReport]:
    """Alternate backward passes and line-searched forward passes.

    `initial` is either a rolled-out trajectory or (x0, mode0, inputs, dt).
    Converges when |expected_reduction(1)| drops below the tolerance; hitting
    the iteration cap or the regularization ceiling reports converged=False
    with the best trajectory so far.
    """
    opts = options or SolveOptions()
    if isinstance(initial, HybridTrajectory):
        traj = initial
    else:
        x0, mode0, inputs, dt = initial
        traj = rollout(sys, x0, mode0, inputs, dt, rtol=opts.rtol, atol=opts.atol)
    if traj.n_steps != cost.n_steps:
        raise ValueError("cost model and trajectory horizon disagree")
    alphas = opts.alpha_schedule()
    ext_horizon = (
        opts.extension_horizon
        if opts.extension_horizon is not None
        else max(1, traj.n_steps // 10)
    )
    current_cost = cost.total(traj)
    reg = opts.reg_init
    report = SolveReport(
        converged=False,
        iterations=0,
        final_cost=current_cost,
        cost_history=[current_cost],
    )
    lins = None
    extensions = None
    gains: Optional[GainSchedule] = None
    # the convergence metric is only meaningful at low regularization, so a
    # rejected step defers the check until a step is accepted again
    check_convergence = True
    while report.iterations < opts.max_iterations:
        report.iterations += 1
        if lins is None:
            lins = linearize_trajectory(
                sys, traj, use_saltation=opts.use_saltation,
                rtol=opts.rtol, atol=opts.atol,
            )
            extensions = build_extensions(sys, traj, ext_horizon, rtol=opts.rtol, atol=opts.atol)
        try:
            gains = backward_pass(cost, traj, lins, reg)
        except BackwardPassError:
            report.regularization_history.append(reg)
            reg *= 10.0
            if reg > opts.reg_max:
                raise
            continue
        report.regularization_history.append(reg)
        er1 = expected_reduction(gains, 1.0)
        report.expected_reduction_history.append(er1)
        if check_convergence and abs(er1) < opts.tolerance:
            report.converged = True
            break
        result = forward_pass(
            sys,
            cost,
            traj,
            extensions,
            gains,
            alphas,
            current_cost,
            parallel=opts.parallel,
            armijo=opts.armijo,
            rtol=opts.rtol,
            atol=opts.atol,
        )
        if result.alpha > 0.0:
            traj = result.trajectory
            current_cost = result.cost
            lins = None
            report.accepted_alphas.append(result.alpha)
            report.cost_history.append(current_cost)
            reg = max(reg / 5.0, opts.reg_min)
            check_convergence = True
        else:
            reg *= 10.0
            check_convergence = False
            if reg > opts.reg_max:
                break
    report.final_cost = current_cost
    if gains is None:
        raise BackwardPassError("backward pass never succeeded")
    return traj, gains, report
