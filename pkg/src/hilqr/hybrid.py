"""Hybrid dynamical systems and their first-order sensitivity objects.

A system is a finite set of modes, each with a time-varying vector field
F(t, x, u), plus a transition graph whose edges carry a scalar guard g(t, x)
and a state reset R(t, x). An event fires when a guard crosses from strictly
positive to <= 0 along a flow; the saltation matrix is the first-order map of
state perturbations across such an event.

Analytic derivatives are optional on every map; central finite differences
with step 1e-6 * max(1, |coordinate|) fill the gaps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt

from .errors import TransversalityError
from .integrate import flow_with_jacobians

FloatArray = npt.NDArray[np.float64]
FieldFn = Callable[[float, FloatArray, FloatArray], FloatArray]
FieldJac = Callable[[float, FloatArray, FloatArray], FloatArray]
GuardFn = Callable[[float, FloatArray], float]
GuardJac = Callable[[float, FloatArray], FloatArray]
ResetFn = Callable[[float, FloatArray], FloatArray]

TRANSVERSALITY_TOL = 1e-8
FD_STEP = 1e-6

TransitionKey = "int | tuple[int, int]"


@dataclass(frozen=True)
class Mode:
    """One discrete mode: a vector field with optional analytic Jacobians."""

    name: str
    field: FieldFn
    field_x: Optional[FieldJac] = None
    field_u: Optional[FieldJac] = None


@dataclass(frozen=True)
class Transition:
    """One edge of the transition graph: guard plus reset, with derivatives."""

    source: int
    target: int
    guard: GuardFn
    reset: ResetFn
    guard_t: Optional[Callable[[float, FloatArray], float]] = None
    guard_x: Optional[GuardJac] = None
    reset_t: Optional[Callable[[float, FloatArray], FloatArray]] = None
    reset_x: Optional[Callable[[float, FloatArray], FloatArray]] = None


@dataclass(frozen=True)
class HybridSystem:
    """Immutable hybrid system; safe to share read-only across workers."""

    state_dim: int
    input_dim: int
    modes: tuple[Mode, ...]
    transitions: tuple[Transition, ...]

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state_dim and input_dim must be positive")
        if not self.modes:
            raise ValueError("at least one mode required")
        for tr in self.transitions:
            if not (0 <= tr.source < len(self.modes)):
                raise ValueError(f"transition source {tr.source} out of range")
            if not (0 <= tr.target < len(self.modes)):
                raise ValueError(f"transition target {tr.target} out of range")

    def outgoing(self, mode: int) -> list[tuple[int, Transition]]:
        """Transitions leaving a mode, in declaration order (tie-break order)."""
        return [(i, tr) for i, tr in enumerate(self.transitions) if tr.source == mode]


def _check_mode(sys: HybridSystem, mode: int) -> Mode:
    if not (0 <= mode < len(sys.modes)):
        raise ValueError(f"unknown mode id {mode}")
    return sys.modes[mode]


def transition_index(sys: HybridSystem, tr: "TransitionKey") -> int:
    """Resolve a transition given either its index or a (source, target) pair."""
    if isinstance(tr, tuple):
        for i, cand in enumerate(sys.transitions):
            if (cand.source, cand.target) == tr:
                return i
        raise ValueError(f"unknown transition {tr}")
    if not (0 <= tr < len(sys.transitions)):
        raise ValueError(f"unknown transition index {tr}")
    return tr


def _check_state(sys: HybridSystem, x: FloatArray) -> FloatArray:
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.state_dim,):
        raise ValueError(f"state shape {x.shape} != ({sys.state_dim},)")
    return x


def _check_input(sys: HybridSystem, u: FloatArray) -> FloatArray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (sys.input_dim,):
        raise ValueError(f"input shape {u.shape} != ({sys.input_dim},)")
    return u


# -- finite-difference fallbacks ----------------------------------------------


def _fd_wrt_vector(fun: Callable[[FloatArray], FloatArray], v: FloatArray) -> FloatArray:
    f0 = np.atleast_1d(fun(v))
    jac = np.empty((f0.size, v.size))
    for i in range(v.size):
        h = FD_STEP * max(1.0, abs(v[i]))
        vp = v.copy()
        vm = v.copy()
        vp[i] += h
        vm[i] -= h
        jac[:, i] = (np.atleast_1d(fun(vp)) - np.atleast_1d(fun(vm))) / (2.0 * h)
    return jac


def _fd_wrt_scalar(fun: Callable[[float], FloatArray], s: float) -> FloatArray:
    h = FD_STEP * max(1.0, abs(s))
    return (np.atleast_1d(fun(s + h)) - np.atleast_1d(fun(s - h))) / (2.0 * h)


# -- operations ----------------------------------------------------------------


def eval_vector_field(
    sys: HybridSystem, mode: int, t: float, x: FloatArray, u: FloatArray
) -> FloatArray:
    """F_mode(t, x, u)."""
    md = _check_mode(sys, mode)
    return np.asarray(md.field(t, _check_state(sys, x), _check_input(sys, u)), dtype=float)


def eval_guard(sys: HybridSystem, tr: "TransitionKey", t: float, x: FloatArray) -> float:
    """g_tr(t, x); an event is the crossing from positive to <= 0."""
    idx = transition_index(sys, tr)
    return float(sys.transitions[idx].guard(t, _check_state(sys, x)))


def apply_reset(
    sys: HybridSystem, tr: "TransitionKey", t: float, x_minus: FloatArray
) -> FloatArray:
    """x_plus = R_tr(t, x_minus)."""
    idx = transition_index(sys, tr)
    return np.asarray(
        sys.transitions[idx].reset(t, _check_state(sys, x_minus)), dtype=float
    )


def field_jacobians(
    sys: HybridSystem, mode: int, t: float, x: FloatArray, u: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """(D_x F, D_u F), analytic when registered."""
    md = _check_mode(sys, mode)
    x = _check_state(sys, x)
    u = _check_input(sys, u)
    if md.field_x is not None:
        a = np.asarray(md.field_x(t, x, u), dtype=float)
    else:
        a = _fd_wrt_vector(lambda v: md.field(t, v, u), x)
    if md.field_u is not None:
        b = np.asarray(md.field_u(t, x, u), dtype=float)
    else:
        b = _fd_wrt_vector(lambda v: md.field(t, x, v), u)
    return a, b.reshape(sys.state_dim, sys.input_dim)


def guard_derivatives(
    sys: HybridSystem, tr: "TransitionKey", t: float, x: FloatArray
) -> tuple[float, FloatArray]:
    """(D_t g, D_x g)."""
    idx = transition_index(sys, tr)
    trans = sys.transitions[idx]
    x = _check_state(sys, x)
    if trans.guard_t is not None:
        g_t = float(trans.guard_t(t, x))
    else:
        g_t = float(_fd_wrt_scalar(lambda s: np.array([trans.guard(s, x)]), t)[0])
    if trans.guard_x is not None:
        g_x = np.asarray(trans.guard_x(t, x), dtype=float).reshape(sys.state_dim)
    else:
        g_x = _fd_wrt_vector(lambda v: np.array([trans.guard(t, v)]), x).reshape(
            sys.state_dim
        )
    return g_t, g_x


def reset_derivatives(
    sys: HybridSystem, tr: "TransitionKey", t: float, x: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """(D_t R, D_x R)."""
    idx = transition_index(sys, tr)
    trans = sys.transitions[idx]
    x = _check_state(sys, x)
    if trans.reset_t is not None:
        r_t = np.asarray(trans.reset_t(t, x), dtype=float)
    else:
        r_t = _fd_wrt_scalar(lambda s: trans.reset(s, x), t)
    if trans.reset_x is not None:
        r_x = np.asarray(trans.reset_x(t, x), dtype=float)
    else:
        r_x = _fd_wrt_vector(lambda v: trans.reset(t, v), x)
    return r_t.reshape(sys.state_dim), r_x.reshape(sys.state_dim, sys.state_dim)


@dataclass(frozen=True)
class SaltationResult:
    """Saltation matrix plus the transversality denominator it divided by."""

    matrix: FloatArray
    denominator: float


def saltation_matrix(
    sys: HybridSystem, tr: "TransitionKey", t: float, x_minus: FloatArray, u: FloatArray
) -> SaltationResult:
    """First-order perturbation map across an event at (t, x_minus).

    Xi = D_xR + (F_target(x_plus) - D_xR F_source(x_minus) - D_tR) D_xg
         / (D_tg + D_xg . F_source(x_minus))

    Raises TransversalityError when the denominator magnitude falls below the
    grazing tolerance, since the division is then meaningless.
    """
    idx = transition_index(sys, tr)
    trans = sys.transitions[idx]
    x_minus = _check_state(sys, x_minus)
    u = _check_input(sys, u)
    x_plus = apply_reset(sys, idx, t, x_minus)
    f_pre = eval_vector_field(sys, trans.source, t, x_minus, u)
    f_post = eval_vector_field(sys, trans.target, t, x_plus, u)
    g_t, g_x = guard_derivatives(sys, idx, t, x_minus)
    r_t, r_x = reset_derivatives(sys, idx, t, x_minus)
    denom = g_t + float(g_x @ f_pre)
    if abs(denom) < TRANSVERSALITY_TOL:
        raise TransversalityError(
            f"grazing event on transition {trans.source}->{trans.target}: "
            f"|D_tg + D_xg.F| = {abs(denom):.3e} < {TRANSVERSALITY_TOL:.0e}"
        )
    xi = r_x + np.outer(f_post - r_x @ f_pre - r_t, g_x) / denom
    return SaltationResult(matrix=xi, denominator=denom)


def linearize_flow_step(
    sys: HybridSystem, mode: int, t: float, x: FloatArray, u: FloatArray, dt: float
) -> tuple[FloatArray, FloatArray]:
    """Jacobians (f_x, f_u) of the one-step flow map in a single mode.

    Integrates the variational equations alongside the state; dt = 0 returns
    the exact zero-length limit (identity, zero).
    """
    md = _check_mode(sys, mode)
    x = _check_state(sys, x)
    u = _check_input(sys, u)
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    jx = md.field_x or (lambda s, v, w: _fd_wrt_vector(lambda q: md.field(s, q, w), v))
    ju = md.field_u or (
        lambda s, v, w: _fd_wrt_vector(lambda q: md.field(s, v, q), w).reshape(
            sys.state_dim, sys.input_dim
        )
    )
    _, f_x, f_u = flow_with_jacobians(md.field, jx, ju, t, x, u, dt)
    return f_x, f_u
