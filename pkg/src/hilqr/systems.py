"""Benchmark systems: the actuated bouncing ball and a smooth double integrator.

Ball state is [z, zdot] with thrust input u; both modes share the ballistic
field [zdot, u/m - g]. Mode DESCENT (zdot < 0) exits through the ground guard
z with the elastic reset [z, -e*zdot]; mode ASCENT (zdot >= 0) exits through
the apex guard zdot with an identity reset. All derivatives are registered
analytically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SolverError
from .hybrid import FloatArray, HybridSystem, Mode, Transition

DESCENT = 0  # zdot < 0
ASCENT = 1  # zdot >= 0
IMPACT = (DESCENT, ASCENT)
APEX = (ASCENT, DESCENT)


@dataclass(frozen=True)
class BouncingBallParams:
    mass: float = 1.0
    gravity: float = 9.81
    restitution: float = 0.8

    def __post_init__(self) -> None:
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if self.gravity <= 0.0:
            raise ValueError("gravity must be positive")
        if not (0.0 < self.restitution <= 1.0):
            raise ValueError("restitution must lie in (0, 1]")


def classify_ball_mode(x: FloatArray) -> int:
    """Mode membership at initialization: zdot = 0 counts as ascent."""
    return DESCENT if x[1] < 0.0 else ASCENT


def bouncing_ball(params: BouncingBallParams) -> HybridSystem:
    m = params.mass
    g = params.gravity
    e = params.restitution

    def field(t: float, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.array([x[1], u[0] / m - g])

    def field_x(t: float, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    def field_u(t: float, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.array([[0.0], [1.0 / m]])

    ballistic = dict(field=field, field_x=field_x, field_u=field_u)
    impact = Transition(
        source=DESCENT,
        target=ASCENT,
        guard=lambda t, x: x[0],
        reset=lambda t, x: np.array([x[0], -e * x[1]]),
        guard_t=lambda t, x: 0.0,
        guard_x=lambda t, x: np.array([1.0, 0.0]),
        reset_t=lambda t, x: np.zeros(2),
        reset_x=lambda t, x: np.array([[1.0, 0.0], [0.0, -e]]),
    )
    apex = Transition(
        source=ASCENT,
        target=DESCENT,
        guard=lambda t, x: x[1],
        reset=lambda t, x: np.array(x, dtype=float),
        guard_t=lambda t, x: 0.0,
        guard_x=lambda t, x: np.array([0.0, 1.0]),
        reset_t=lambda t, x: np.zeros(2),
        reset_x=lambda t, x: np.eye(2),
    )
    return HybridSystem(
        state_dim=2,
        input_dim=1,
        modes=(Mode("descent", **ballistic), Mode("ascent", **ballistic)),
        transitions=(impact, apex),
    )


def ball_saltation_oracle(
    params: BouncingBallParams, x_minus: FloatArray, u: FloatArray
) -> FloatArray:
    """Closed-form impact saltation [[-e, 0], [(1+e)(u/m - g)/zdot, -e]]."""
    v = float(np.asarray(x_minus, dtype=float)[1])
    if v == 0.0:
        raise ValueError("pre-impact vertical velocity must be nonzero")
    u0 = float(np.atleast_1d(u)[0])
    e = params.restitution
    c = (1.0 + e) * (u0 / params.mass - params.gravity) / v
    return np.array([[-e, 0.0], [c, -e]])


def double_integrator(m: float = 1.0) -> HybridSystem:
    """Single-mode regression system: zdd = u/m, no transitions."""
    if m <= 0.0:
        raise ValueError("mass must be positive")

    def field(t: float, x: FloatArray, u: FloatArray) -> FloatArray:
        return np.array([x[1], u[0] / m])

    return HybridSystem(
        state_dim=2,
        input_dim=1,
        modes=(
            Mode(
                "smooth",
                field,
                field_x=lambda t, x, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
                field_u=lambda t, x, u: np.array([[0.0], [1.0 / m]]),
            ),
        ),
        transitions=(),
    )


def make_single_bounce_reference(
    params: BouncingBallParams,
    x_start: FloatArray,
    x_goal: FloatArray,
    duration: float,
    dt: float,
    terminal_weight: Optional[FloatArray] = None,
    input_weight: float = 1e-5,
    tolerance: float = 1e-4,
    max_iterations: int = 200,
    extension_horizon: Optional[int] = None,
    line_search_depth: int = 17,
    use_saltation: bool = True,
):
    """Offline single-bounce reference: terminal cost on x_goal, small input cost.

    Starts from the zero-input ballistic rollout and returns the converged
    trajectory with extensions built. Fails loudly when the optimum does not
    contain exactly one impact.

    The line search runs deeper than the online default: impact-time shifts
    quantize to knots, which leaves cost discontinuities along alpha that only
    small steps can walk through.

    Returns (trajectory, extensions, gains, report).
    """
    from .cost import CostModel
    from .simulate import build_extensions, rollout
    from .solver import SolveOptions, solve

    n_steps = round(duration / dt)
    if abs(n_steps * dt - duration) > 1e-9:
        raise ValueError("duration must be an integral number of timesteps")
    sys = bouncing_ball(params)
    x_start = np.asarray(x_start, dtype=float)
    q_n = np.diag([1e3, 1e3]) if terminal_weight is None else np.asarray(terminal_weight)
    cost = CostModel(
        x_ref=np.tile(np.asarray(x_goal, dtype=float), (n_steps + 1, 1)),
        u_ref=np.zeros((n_steps, 1)),
        q=np.zeros((2, 2)),
        r=np.array([[input_weight]]),
        q_n=q_n,
    )
    guess = rollout(sys, x_start, classify_ball_mode(x_start), np.zeros((n_steps, 1)), dt)
    options = SolveOptions(
        max_iterations=max_iterations,
        tolerance=tolerance,
        alphas=0.6 ** np.arange(line_search_depth),
        use_saltation=use_saltation,
    )
    traj, gains, report = solve(sys, cost, guess, options)
    impact_idx = 0  # impact is the first registered transition
    n_impacts = sum(1 for _, ev in traj.events if ev.transition == impact_idx)
    if n_impacts != 1:
        raise SolverError(
            f"single-bounce reference needs exactly 1 impact, optimum has {n_impacts}"
        )
    horizon = extension_horizon if extension_horizon is not None else max(1, n_steps // 10)
    extensions = build_extensions(sys, traj, horizon)
    return traj, extensions, gains, report
