"""Independent closed-form oracles used to pin expected values in tests.

Everything here is derived from first principles (constant-acceleration
kinematics, the discrete Riccati recursion, central finite differences) and
deliberately shares no code with the package under test.
"""

from __future__ import annotations

import math

import numpy as np


# -- ballistic closed forms (constant acceleration a = u/m - g) --------------


def ballistic_state(z0: float, v0: float, a: float, t: float) -> tuple[float, float]:
    """Position/velocity after time t under constant acceleration a."""
    return z0 + v0 * t + 0.5 * a * t * t, v0 + a * t


def drop_impact_time(h: float, g: float) -> float:
    """Time for a rest drop from height h to reach z = 0."""
    return math.sqrt(2.0 * h / g)


def drop_impact_speed(h: float, g: float) -> float:
    """Speed at ground contact for a rest drop from height h."""
    return math.sqrt(2.0 * g * h)


def touchdown_time(z0: float, v0: float, a: float) -> float:
    """Earliest positive root of z0 + v0 t + a t^2 / 2 = 0 (requires a real root)."""
    disc = v0 * v0 - 2.0 * a * z0
    if disc < 0.0:
        raise ValueError("no touchdown under constant acceleration")
    # stable quadratic formula, smallest positive root
    roots = []
    for sign in (-1.0, 1.0):
        if a != 0.0:
            roots.append((-v0 + sign * math.sqrt(disc)) / a)
        elif v0 != 0.0:
            roots.append(-z0 / v0)
    pos = [r for r in roots if r > 0.0]
    if not pos:
        raise ValueError("no positive touchdown time")
    return min(pos)


def ball_impact_saltation(e: float, m: float, g: float, u: float, v_pre: float) -> np.ndarray:
    """Closed-form impact saltation for the bouncing ball.

    Symbolic evaluation of the saltation formula with guard z, reset
    [z, -e*zdot], and identical ballistic fields on both sides gives
    [[-e, 0], [(1+e)(u/m - g)/zdot_pre, -e]].
    """
    if v_pre == 0.0:
        raise ZeroDivisionError("grazing impact")
    c = (1.0 + e) * (u / m - g) / v_pre
    return np.array([[-e, 0.0], [c, -e]])


def double_integrator_step(m: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact discrete map of [z, zdot] under zdot' = u/m over one step."""
    f_x = np.array([[1.0, dt], [0.0, 1.0]])
    f_u = np.array([[0.5 * dt * dt / m], [dt / m]])
    return f_x, f_u


# -- discrete Riccati recursion ----------------------------------------------


def riccati_gains(
    a: np.ndarray,
    b: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    q_n: np.ndarray,
    n_steps: int,
) -> list[np.ndarray]:
    """Feedback gains K_k (u = K_k x) for cost sum x'Qx + u'Ru + terminal x'Q_N x.

    The missing 1/2 factor relative to the textbook convention cancels out of
    the recursion, so this is also the oracle for the no-half tracking cost.
    """
    p = q_n.copy()
    gains: list[np.ndarray] = []
    for _ in range(n_steps):
        btp = b.T @ p
        k = -np.linalg.solve(r + btp @ b, btp @ a)
        p = q + a.T @ p @ (a + b @ k)
        p = 0.5 * (p + p.T)
        gains.append(k)
    gains.reverse()
    return gains


def lqr_optimal_inputs(
    a: np.ndarray,
    b: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
    q_n: np.ndarray,
    x0: np.ndarray,
    n_steps: int,
) -> np.ndarray:
    """Optimal open-loop input sequence by applying the Riccati feedback."""
    gains = riccati_gains(a, b, q, r, q_n, n_steps)
    x = x0.copy()
    us = []
    for k in gains:
        u = k @ x
        us.append(u)
        x = a @ x + b @ u
    return np.array(us)


# -- finite differences --------------------------------------------------------


def central_jacobian(fun, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of fun at x with per-coordinate scaled step."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(fun(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(xm), dtype=float))
        jac[:, i] = (fp - fm) / (2.0 * h)
    return jac


def directional_derivative(fun, x: np.ndarray, direction: np.ndarray, step: float) -> float:
    """Central-difference directional derivative of a scalar function."""
    d = np.asarray(direction, dtype=float)
    return (fun(x + step * d) - fun(x - step * d)) / (2.0 * step)


def loglog_slope(deltas, remainders) -> float:
    """Least-squares slope of log(remainder) against log(delta)."""
    lx = np.log(np.asarray(deltas, dtype=float))
    ly = np.log(np.asarray(remainders, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
