"""Adaptive Dormand-Prince 4(5) integration with dense output.

A deliberately small replacement for a general-purpose IVP library: the
simulator issues millions of short fixed-horizon flows (one control timestep
each), where per-call setup of a general solver dominates the actual work.
Tableau, error, and interpolant coefficients are the published Dormand-Prince
values (identical to the usual RK45 implementations).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import numpy.typing as npt

from .errors import IntegrationError

FloatArray = npt.NDArray[np.float64]

RTOL_DEFAULT = 1e-9
ATOL_DEFAULT = 1e-9

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = (
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-minus-fourth order weights, applied to all seven stages
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# quartic interpolant (Shampine); dense state is x0 + h * (K^T P) @ [th, th^2, th^3, th^4]
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_MAX_STEPS = 10_000


@dataclass(frozen=True)
class DenseSegment:
    """One accepted integrator step together with its interpolant."""

    t0: float
    h: float
    x0: FloatArray
    coeffs: FloatArray  # (n, 4) = K^T @ P

    @property
    def t1(self) -> float:
        return self.t0 + self.h

    def eval(self, t: float) -> FloatArray:
        theta = (t - self.t0) / self.h
        powers = np.array([theta, theta**2, theta**3, theta**4])
        return self.x0 + self.h * (self.coeffs @ powers)


def flow(
    f: Callable[[float, FloatArray], FloatArray],
    t0: float,
    x0: FloatArray,
    dt: float,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
    dense: bool = False,
) -> tuple[FloatArray, list[DenseSegment]]:
    """Integrate x' = f(t, x) from t0 over a (possibly negative) interval dt.

    Returns the terminal state and, when requested, the list of accepted
    dense-output segments covering [t0, t0 + dt] in step order.
    """
    x = np.array(x0, dtype=float)
    if dt == 0.0:
        return x, []
    t_end = t0 + dt
    t = t0
    h = dt  # first trial step spans the whole interval
    direction = 1.0 if dt > 0.0 else -1.0
    segments: list[DenseSegment] = []
    k = np.empty((7, x.size))
    k[6] = f(t, x)  # seeds the FSAL slot consumed at loop top
    for _ in range(_MAX_STEPS):
        remaining = t_end - t
        if remaining * direction <= 0.0:
            return x, segments
        last = abs(h) >= abs(remaining)
        h_step = remaining if last else h
        if abs(h_step) < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t!r}")
        k[0] = k[6]
        for i in range(1, 6):
            k[i] = f(t + _C[i] * h_step, x + h_step * (_A[i] @ k[:i]))
        x_new = x + h_step * (_B @ k[:6])
        k[6] = f(t + h_step, x_new)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = h_step * (_E @ k)
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if err_norm <= 1.0:
            if dense:
                segments.append(DenseSegment(t, h_step, x, k.T @ _P))
            t = t_end if last else t + h_step
            x = x_new
            factor = _MAX_FACTOR if err_norm == 0.0 else min(
                _MAX_FACTOR, _SAFETY * err_norm**-0.2
            )
            h = h_step * factor
        else:
            k[6] = k[0]  # keep FSAL slot valid for the retry
            h = h_step * max(_MIN_FACTOR, _SAFETY * err_norm**-0.2)
    raise IntegrationError(f"no convergence within {_MAX_STEPS} steps from t={t0!r}")


def flow_with_jacobians(
    field: Callable[[float, FloatArray, FloatArray], FloatArray],
    jac_x: Callable[[float, FloatArray, FloatArray], FloatArray],
    jac_u: Callable[[float, FloatArray, FloatArray], FloatArray],
    t0: float,
    x0: FloatArray,
    u: FloatArray,
    dt: float,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Flow one mode for dt under held input and return (x1, Phi, Psi).

    Phi and Psi are the sensitivities of the terminal state to the initial
    state and to the held input, obtained by integrating the variational
    equations Phi' = A Phi, Psi' = A Psi + B alongside the state.
    """
    n = x0.size
    m = u.size
    if dt == 0.0:
        return np.array(x0, dtype=float), np.eye(n), np.zeros((n, m))

    def augmented(t: float, y: FloatArray) -> FloatArray:
        x = y[:n]
        phi = y[n : n + n * n].reshape(n, n)
        psi = y[n + n * n :].reshape(n, m)
        a = jac_x(t, x, u)
        out = np.empty_like(y)
        out[:n] = field(t, x, u)
        out[n : n + n * n] = (a @ phi).ravel()
        out[n + n * n :] = (a @ psi + jac_u(t, x, u)).ravel()
        return out

    y0 = np.concatenate([x0, np.eye(n).ravel(), np.zeros(n * m)])
    y1, _ = flow(augmented, t0, y0, dt, rtol=rtol, atol=atol)
    return y1[:n], y1[n : n + n * n].reshape(n, n), y1[n + n * n :].reshape(n, m)
