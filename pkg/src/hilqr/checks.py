"""Numerical verification battery behind the `check` subcommand.

Every check recomputes its expected answer through an independent route
(closed forms, finite differences, a separate Riccati recursion) and reports
the measured error against a fixed threshold. `inject_fault` deliberately
corrupts one reference value so the failure path stays exercised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import CostModel
from .hybrid import (
    eval_guard,
    eval_vector_field,
    field_jacobians,
    guard_derivatives,
    linearize_flow_step,
    reset_derivatives,
    apply_reset,
    saltation_matrix,
)
from .simulate import integrate_step, rollout
from .solver import backward_pass, linearize_trajectory
from .systems import (
    BouncingBallParams,
    ball_saltation_oracle,
    bouncing_ball,
    classify_ball_mode,
    double_integrator,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(want))))
    return float(np.max(np.abs(got - want))) / scale


def check_saltation_oracle(seed: int, inject_fault: Optional[str]) -> CheckResult:
    """Numeric saltation vs the closed-form ball oracle on random impacts."""
    params = BouncingBallParams()
    if inject_fault == "oracle-restitution":
        oracle_params = BouncingBallParams(restitution=params.restitution + 0.05)
    else:
        oracle_params = params
    sys = bouncing_ball(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        v = -float(rng.uniform(0.1, 10.0))
        u = rng.uniform(-5.0, 5.0, size=1)
        x_minus = np.array([0.0, v])
        got = saltation_matrix(sys, 0, 0.0, x_minus, u).matrix
        want = ball_saltation_oracle(oracle_params, x_minus, u)
        worst = max(worst, _rel_err(got, want))
    return CheckResult(
        name="saltation-vs-oracle",
        passed=worst <= 1e-8,
        measured=worst,
        threshold=1e-8,
        detail="100 random pre-impact states",
    )


def check_saltation_second_order(seed: int) -> CheckResult:
    """Remainder of the saltation linearization shrinks quadratically.

    Flows a fixed window through one impact, predicts perturbed endpoints
    with Phi_post Xi Phi_pre, and fits the log-log slope of the remainder
    over three perturbation magnitudes.
    """
    params = BouncingBallParams()
    sys = bouncing_ball(params)
    x0 = np.array([0.5, -3.0])
    u = np.zeros(1)
    window = 0.25
    base = integrate_step(sys, 0, 0.0, x0, u, window)
    ev = base.event
    phi_pre, _ = linearize_flow_step(sys, 0, 0.0, x0, u, ev.dt1)
    phi_post, _ = linearize_flow_step(sys, 1, ev.event_time, ev.x_post, u, ev.dt2)
    jac = phi_post @ ev.saltation @ phi_pre

    rng = np.random.default_rng(seed)
    mags = np.array([1e-3, 1e-4, 1e-5])
    remainders = []
    for mag in mags:
        worst = 0.0
        for _ in range(8):
            d = rng.standard_normal(2)
            dew = mag * d / np.linalg.norm(d)
            pert = integrate_step(sys, 0, 0.0, x0 + dew, u, window)
            worst = max(worst, float(np.linalg.norm(pert.x_next - base.x_next - jac @ dew)))
        remainders.append(worst)
    slope = float(np.polyfit(np.log(mags), np.log(remainders), 1)[0])
    return CheckResult(
        name="saltation-second-order",
        passed=abs(slope - 2.0) <= 0.2,
        measured=slope,
        threshold=0.2,
        detail="log-log remainder slope, target 2",
    )


def check_derivatives(seed: int) -> CheckResult:
    """Registered analytic derivatives vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    systems = [bouncing_ball(BouncingBallParams()), double_integrator(1.3)]
    for sys in systems:
        for _ in range(25):
            t = float(rng.uniform(0.0, 2.0))
            x = rng.uniform(-3.0, 3.0, size=sys.state_dim)
            u = rng.uniform(-5.0, 5.0, size=sys.input_dim)
            eps = 1e-6

            for mode in range(len(sys.modes)):
                a, b = field_jacobians(sys, mode, t, x, u)
                fd_a = np.column_stack([
                    (eval_vector_field(sys, mode, t, x + eps * ei, u)
                     - eval_vector_field(sys, mode, t, x - eps * ei, u)) / (2 * eps)
                    for ei in np.eye(sys.state_dim)
                ])
                fd_b = np.column_stack([
                    (eval_vector_field(sys, mode, t, x, u + eps * ei)
                     - eval_vector_field(sys, mode, t, x, u - eps * ei)) / (2 * eps)
                    for ei in np.eye(sys.input_dim)
                ])
                worst = max(worst, _rel_err(a, fd_a), _rel_err(b, fd_b))

            for tr_index in range(len(sys.transitions)):
                g_t, g_x = guard_derivatives(sys, tr_index, t, x)
                fd_gx = np.array([
                    (eval_guard(sys, tr_index, t, x + eps * ei)
                     - eval_guard(sys, tr_index, t, x - eps * ei)) / (2 * eps)
                    for ei in np.eye(sys.state_dim)
                ])
                fd_gt = (eval_guard(sys, tr_index, t + eps, x)
                         - eval_guard(sys, tr_index, t - eps, x)) / (2 * eps)
                r_t, r_x = reset_derivatives(sys, tr_index, t, x)
                fd_rx = np.column_stack([
                    (apply_reset(sys, tr_index, t, x + eps * ei)
                     - apply_reset(sys, tr_index, t, x - eps * ei)) / (2 * eps)
                    for ei in np.eye(sys.state_dim)
                ])
                fd_rt = (apply_reset(sys, tr_index, t + eps, x)
                         - apply_reset(sys, tr_index, t - eps, x)) / (2 * eps)
                worst = max(
                    worst,
                    _rel_err(g_x, fd_gx),
                    _rel_err(np.atleast_1d(g_t), np.atleast_1d(fd_gt)),
                    _rel_err(r_x, fd_rx),
                    _rel_err(r_t, fd_rt),
                )
    return CheckResult(
        name="analytic-derivatives-vs-fd",
        passed=worst <= 1e-5,
        measured=worst,
        threshold=1e-5,
        detail="fields, guards, resets on registered systems",
    )


def _riccati_gains(a, b, q, r, q_n, n_steps):
    """Independent discrete-time Riccati recursion (finite horizon)."""
    p = q_n.copy()
    gains = []
    for _ in range(n_steps):
        k = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        p = q + a.T @ p @ (a + b @ k)
        p = 0.5 * (p + p.T)
        gains.append(k)
    gains.reverse()
    return gains


def check_riccati(seed: int) -> CheckResult:
    """Backward pass on an event-free LQ instance vs the Riccati recursion."""
    del seed  # deterministic instance
    mass = 1.0
    sys = double_integrator(mass)
    n_steps, dt = 100, 0.01
    q = np.diag([1.0, 0.1])
    r = np.array([[0.1]])
    q_n = np.diag([10.0, 1.0])
    x0 = np.array([1.0, 0.0])
    traj = rollout(sys, x0, 0, np.zeros((n_steps, 1)), dt)
    cost = CostModel(
        x_ref=np.zeros((n_steps + 1, 2)), u_ref=np.zeros((n_steps, 1)),
        q=q, r=r, q_n=q_n,
    )
    lins = linearize_trajectory(sys, traj)
    gains = backward_pass(cost, traj, lins, regularization=0.0)
    # cost carries no 1/2 factor, so the Riccati matrices are doubled
    oracle = _riccati_gains(lins[0].f_x, lins[0].f_u, 2 * q, 2 * r, 2 * q_n, n_steps)
    worst = max(_rel_err(gains.K[k], oracle[k]) for k in range(n_steps))
    return CheckResult(
        name="riccati-equivalence",
        passed=worst <= 1e-6,
        measured=worst,
        threshold=1e-6,
        detail="double integrator, N=100",
    )


def check_gradient(seed: int) -> tuple[CheckResult, CheckResult]:
    """Feedforward direction from the backward pass is the true cost gradient.

    With feedback frozen out of the value recursion, the linear term of the
    expected reduction must match a central finite difference of rollout cost
    along u_ff on a one-impact trajectory. Swapping the saltation matrix for
    the bare reset Jacobian must break the match.
    """
    params = BouncingBallParams()
    sys = bouncing_ball(params)
    n_steps, dt = 600, 1e-3
    rng = np.random.default_rng(seed)
    inputs = 0.3 * rng.standard_normal((n_steps, 1))
    x0 = np.array([1.0, 0.0])
    traj = rollout(sys, x0, 0, inputs, dt)
    n_impacts = sum(1 for _, ev in traj.events if ev.transition == 0)
    cost = CostModel(
        x_ref=np.tile([1.5, 0.0], (n_steps + 1, 1)),
        u_ref=np.zeros((n_steps, 1)),
        q=np.zeros((2, 2)),
        r=np.array([[1e-2]]),
        q_n=np.diag([1e3, 1e3]),
    )

    def directional(use_saltation: bool) -> tuple[float, float]:
        lins = linearize_trajectory(sys, traj, use_saltation=use_saltation)
        g = backward_pass(cost, traj, lins, 0.0, feedback_in_value=False)
        eps = 1e-6
        up = cost.total(rollout(sys, x0, 0, inputs + eps * g.u_ff, dt))
        dn = cost.total(rollout(sys, x0, 0, inputs - eps * g.u_ff, dt))
        fd = (up - dn) / (2 * eps)
        return g.dj_linear, fd

    anl, fd = directional(True)
    rel = abs(anl - fd) / max(1.0, abs(fd))
    anl_off, fd_off = directional(False)
    rel_off = abs(anl_off - fd_off) / max(1.0, abs(fd_off))
    return (
        CheckResult(
            name="hybrid-gradient-check",
            passed=(rel <= 1e-4) and (n_impacts == 1),
            measured=rel,
            threshold=1e-4,
            detail=f"one-impact trajectory ({n_impacts} impact)",
        ),
        CheckResult(
            name="gradient-ablation-breaks",
            passed=rel_off > 1e-2,
            measured=rel_off,
            threshold=1e-2,
            detail="saltation removed; error must exceed threshold",
        ),
    )


def check_drop_invariants() -> CheckResult:
    """End-to-end event location on the canonical drop.

    Impact speed sqrt(2 g h), restitution ratio, guard residual, and energy
    monotonicity across the impact.
    """
    params = BouncingBallParams()
    sys = bouncing_ball(params)
    h0 = 4.0
    x0 = np.array([h0, 0.0])
    traj = rollout(sys, x0, classify_ball_mode(x0), np.zeros((1200, 1)), 1e-3)
    impacts = [ev for _, ev in traj.events if ev.transition == 0]
    if len(impacts) != 1:
        return CheckResult("drop-invariants", False, float("nan"), 0.0,
                           f"expected 1 impact, saw {len(impacts)}")
    ev = impacts[0]
    speed_err = abs(abs(ev.x_pre[1]) - np.sqrt(2 * params.gravity * h0)) / np.sqrt(
        2 * params.gravity * h0
    )
    rest_err = abs(ev.x_post[1] / ev.x_pre[1] + params.restitution)
    residual = max(abs(ev.x_pre[0]) for ev in impacts)

    def energy(x):
        return params.mass * params.gravity * x[0] + 0.5 * params.mass * x[1] ** 2

    energies = np.array([energy(x) for x in traj.states])
    drift = float(np.max(energies[1:] - energies[:-1]))  # any increase is bad

    passed = (
        speed_err <= 1e-8
        and rest_err <= 1e-9
        and residual <= 1e-10
        and drift <= 1e-8 * energy(x0) * 1e-3  # per-step budget at 1 ms
    )
    return CheckResult(
        name="drop-invariants",
        passed=passed,
        measured=max(speed_err, rest_err, residual),
        threshold=1e-8,
        detail=f"speed {speed_err:.2e}, restitution {rest_err:.2e}, "
               f"residual {residual:.2e}, max energy gain/step {drift:.2e}",
    )


def run_all_checks(seed: int = 0, inject_fault: Optional[str] = None) -> list[CheckResult]:
    grad, grad_ablation = check_gradient(seed)
    return [
        check_saltation_oracle(seed, inject_fault),
        check_saltation_second_order(seed),
        check_derivatives(seed),
        check_riccati(seed),
        grad,
        grad_ablation,
        check_drop_invariants(),
    ]
