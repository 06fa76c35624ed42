"""Event-driven hybrid simulation.

Flows one control timestep at a time with zero-order-held input: adaptive
integration with dense output, guard monitoring on every accepted integrator
step, bracketed root finding for event times, reset application, and saltation
recording. Also builds the single-mode reference extensions used for
mode-mismatch handling and runs open- and closed-loop rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DomainError,
    EventLocationError,
    ExtensionCoverageError,
    ZenoError,
)
from .hybrid import (
    FloatArray,
    HybridSystem,
    eval_guard,
    eval_vector_field,
    apply_reset,
    guard_derivatives,
    saltation_matrix,
)
from .integrate import ATOL_DEFAULT, RTOL_DEFAULT, DenseSegment, flow
from .trajectory import (
    EventRecord,
    HybridTrajectory,
    ReferenceExtension,
    lookup_reference,
)

GUARD_TOL = 1e-10  # |g| at a located event
BOUNDARY_TOL = 1e-9  # how negative a guard may start before it is a domain error
INWARD_RATE_TOL = 1e-8  # g_dot below -this at a boundary start fires immediately
_ROOT_MAX_ITERS = 100


@dataclass(frozen=True)
class StepResult:
    """Outcome of one control timestep."""

    x_next: FloatArray
    mode_next: int
    event: Optional[EventRecord]


def _find_root(guard, t_lo: float, g_lo: float, t_hi: float, segment: DenseSegment) -> float:
    """Earliest guard root in [t_lo, t_hi] along one dense segment.

    Regula falsi with the Illinois damping of the retained endpoint, which
    keeps the bracket valid and avoids the one-sided stall of the plain
    secant when the root sits near one end of a long segment. Terminates on
    |g| <= GUARD_TOL.
    """
    g_hi = guard(t_hi, segment.eval(t_hi))
    if g_lo <= GUARD_TOL:
        return t_lo
    side = 0  # which endpoint survived the previous iteration
    for _ in range(_ROOT_MAX_ITERS):
        if abs(g_hi) <= GUARD_TOL:
            return t_hi
        denom = g_hi - g_lo
        t_mid = t_hi - g_hi * (t_hi - t_lo) / denom if denom != 0.0 else 0.5 * (t_lo + t_hi)
        if not (t_lo < t_mid < t_hi):
            t_mid = 0.5 * (t_lo + t_hi)
        g_mid = guard(t_mid, segment.eval(t_mid))
        if abs(g_mid) <= GUARD_TOL:
            return t_mid
        if g_mid > 0.0:
            t_lo, g_lo = t_mid, g_mid
            if side == -1:
                g_hi *= 0.5
            side = -1
        else:
            t_hi, g_hi = t_mid, g_mid
            if side == 1:
                g_lo *= 0.5
            side = 1
        if t_hi - t_lo < 1e-16 * max(1.0, abs(t_hi)):
            return t_hi
    raise EventLocationError(
        f"guard root finding did not converge in {_ROOT_MAX_ITERS} iterations"
    )


def _immediate_transition(
    sys: HybridSystem, mode: int, t: float, x: FloatArray, u: FloatArray
) -> Optional[int]:
    """Transition index that must fire at the very start of a step, if any.

    A guard sitting on zero (within the event tolerance) with inward flow
    fires at once, which keeps the recorded residual within tolerance. A
    clearly negative guard, or a slightly negative one still flowing inward,
    means the state is outside the mode's domain. A boundary guard flowing
    outward (or tangentially, like a hover along g == 0) is left alone. Ties
    go to the lowest transition index via iteration order.
    """
    f0 = eval_vector_field(sys, mode, t, x, u)
    for idx, tr in sys.outgoing(mode):
        g0 = eval_guard(sys, idx, t, x)
        if g0 < -BOUNDARY_TOL:
            raise DomainError(
                f"guard {tr.source}->{tr.target} = {g0:.3e} < 0 at step start"
            )
        if g0 <= GUARD_TOL:
            g_t, g_x = guard_derivatives(sys, idx, t, x)
            inward = g_t + float(g_x @ f0) < -INWARD_RATE_TOL
            if inward and g0 >= -GUARD_TOL:
                return idx
            if inward:
                raise DomainError(
                    f"guard {tr.source}->{tr.target} = {g0:.3e} below tolerance "
                    "and still flowing inward at step start"
                )
    return None


def _flow_to_event(
    sys: HybridSystem,
    mode: int,
    t: float,
    x: FloatArray,
    u: FloatArray,
    dt: float,
    rtol: float,
    atol: float,
) -> tuple[FloatArray, Optional[tuple[int, float, FloatArray]]]:
    """Flow up to dt in one mode, watching guards.

    Returns (state at t+dt, None) when no guard crossed, otherwise
    (x_pre, (transition index, t_event, x_pre)) for the earliest crossing.
    Guards that start on the boundary (flowing outward) stay disarmed until
    they rise above tolerance, so a hover along g == 0 produces no event.
    """

    def f(s: float, v: FloatArray) -> FloatArray:
        return eval_vector_field(sys, mode, s, v, u)

    outgoing = sys.outgoing(mode)
    x_final, segments = flow(f, t, x, dt, rtol=rtol, atol=atol, dense=bool(outgoing))
    if not outgoing:
        return x_final, None
    armed = {}
    g_prev = {}
    for idx, _tr in outgoing:
        g0 = eval_guard(sys, idx, t, x)
        armed[idx] = g0 > GUARD_TOL
        g_prev[idx] = g0
    for seg in segments:
        t_end = seg.t1
        x_end = seg.eval(t_end)
        hit: Optional[tuple[float, int]] = None
        for idx, _tr in outgoing:
            g_end = eval_guard(sys, idx, t_end, x_end)
            if armed[idx] and g_end <= 0.0:
                guard_fn = lambda s, v, i=idx: eval_guard(sys, i, s, v)
                t_star = _find_root(guard_fn, seg.t0, g_prev[idx], t_end, seg)
                if hit is None or t_star < hit[0]:
                    hit = (t_star, idx)
            elif not armed[idx] and g_end > GUARD_TOL:
                armed[idx] = True
            g_prev[idx] = g_end
        if hit is not None:
            t_star, idx = hit
            x_pre = seg.eval(t_star)
            return x_pre, (idx, t_star, x_pre)
    return x_final, None


def integrate_step(
    sys: HybridSystem,
    mode: int,
    t: float,
    x: FloatArray,
    u: FloatArray,
    dt: float,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> StepResult:
    """One control timestep with zero-order-held input and event handling.

    At most one event is processed; a second crossing inside the same step
    raises ZenoError. The event record keeps |g(t*, x_pre)| <= 1e-10 and
    dt1 + dt2 == dt exactly.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x = np.asarray(x, dtype=float)

    immediate = _immediate_transition(sys, mode, t, x, u)
    if immediate is not None:
        event = (immediate, t, x)
    else:
        x_end, crossing = _flow_to_event(sys, mode, t, x, u, dt, rtol, atol)
        if crossing is None:
            return StepResult(x_next=x_end, mode_next=mode, event=None)
        event = crossing

    tr_idx, t_star, x_pre = event
    residual = eval_guard(sys, tr_idx, t_star, x_pre)
    if abs(residual) > GUARD_TOL:
        raise EventLocationError(
            f"event residual |g| = {abs(residual):.3e} exceeds {GUARD_TOL:.0e}"
        )
    trans = sys.transitions[tr_idx]
    x_post = apply_reset(sys, tr_idx, t_star, x_pre)
    salt = saltation_matrix(sys, tr_idx, t_star, x_pre, u)
    dt1 = t_star - t
    dt2 = dt - dt1
    record = EventRecord(
        transition=tr_idx,
        source=trans.source,
        target=trans.target,
        event_time=t_star,
        x_pre=x_pre,
        x_post=x_post,
        dt1=dt1,
        dt2=dt2,
        saltation=salt.matrix,
    )
    mode_next = trans.target
    if dt2 == 0.0:
        return StepResult(x_next=x_post, mode_next=mode_next, event=record)
    if _immediate_transition(sys, mode_next, t_star, x_post, u) is not None:
        raise ZenoError(f"second event immediately after reset at t={t_star!r}")
    x_next, second = _flow_to_event(sys, mode_next, t_star, x_post, u, dt2, rtol, atol)
    if second is not None:
        raise ZenoError(
            f"two events in one timestep: t={t_star!r} then t={second[1]!r}"
        )
    return StepResult(x_next=x_next, mode_next=mode_next, event=record)


def locate_event(
    sys: HybridSystem,
    tr,
    mode: int,
    t0: float,
    x0: FloatArray,
    u: FloatArray,
    dt_window: float,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> tuple[float, FloatArray]:
    """Earliest root of one specific guard inside a flow window.

    Requires g > 0 at the window start and g <= 0 at its end; |g| at the
    returned time is <= 1e-10.
    """
    from .hybrid import transition_index

    idx = transition_index(sys, tr)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    g0 = eval_guard(sys, idx, t0, x0)
    if g0 <= 0.0:
        raise EventLocationError(f"guard already {g0:.3e} <= 0 at window start")

    def f(s: float, v: FloatArray) -> FloatArray:
        return eval_vector_field(sys, mode, s, v, u)

    x_end, segments = flow(f, t0, np.asarray(x0, dtype=float), dt_window, rtol=rtol, atol=atol, dense=True)
    g_prev = g0
    for seg in segments:
        x_seg_end = seg.eval(seg.t1)
        g_end = eval_guard(sys, idx, seg.t1, x_seg_end)
        if g_end <= 0.0:
            guard_fn = lambda s, v: eval_guard(sys, idx, s, v)
            t_star = _find_root(guard_fn, seg.t0, g_prev, seg.t1, seg)
            return t_star, seg.eval(t_star)
        g_prev = g_end
    raise EventLocationError("no guard sign change inside the window")


def rollout(
    sys: HybridSystem,
    x0: FloatArray,
    mode0: int,
    inputs: FloatArray,
    dt: float,
    t0: float = 0.0,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> HybridTrajectory:
    """Open-loop trajectory of N+1 knots from N held inputs."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, sys.input_dim)
    n_steps = inputs.shape[0]
    states = np.empty((n_steps + 1, sys.state_dim))
    modes = np.empty(n_steps + 1, dtype=int)
    times = t0 + dt * np.arange(n_steps + 1)
    events: list[tuple[int, EventRecord]] = []
    states[0] = np.asarray(x0, dtype=float)
    modes[0] = mode0
    for k in range(n_steps):
        step = integrate_step(sys, int(modes[k]), float(times[k]), states[k], inputs[k], dt, rtol, atol)
        states[k + 1] = step.x_next
        modes[k + 1] = step.mode_next
        if step.event is not None:
            events.append((k, step.event))
    return HybridTrajectory(
        dt=dt, times=times, states=states, inputs=inputs.copy(), modes=modes, events=events
    )


def _sample_flow_at_knots(
    sys: HybridSystem,
    mode: int,
    t_start: float,
    x_start: FloatArray,
    u: FloatArray,
    first_interval: float,
    dt: float,
    count: int,
    rtol: float,
    atol: float,
) -> FloatArray:
    """States at `count` successive knot times reached from (t_start, x_start).

    The first hop spans `first_interval` (signed), later hops span dt with the
    same sign. Guards are ignored: this is the single-mode extension flow.
    """

    def f(s: float, v: FloatArray) -> FloatArray:
        return eval_vector_field(sys, mode, s, v, u)

    out = np.empty((count, x_start.size))
    t = t_start
    x = x_start
    step = dt if first_interval >= 0.0 else -dt
    for j in range(count):
        span = first_interval if j == 0 else step
        x, _ = flow(f, t, x, span, rtol=rtol, atol=atol)
        t += span
        out[j] = x
    return out


def build_extensions(
    sys: HybridSystem,
    traj: HybridTrajectory,
    horizon_knots: int,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> list[ReferenceExtension]:
    """One extension per recorded event; empty list when there are none."""
    if horizon_knots < 0:
        raise ValueError("horizon_knots must be >= 0")
    out: list[ReferenceExtension] = []
    n_inputs = traj.n_steps
    for k, ev in traj.events:
        u_pre = traj.inputs[min(k, n_inputs - 1)]
        u_post = traj.inputs[min(k + 1, n_inputs - 1)]
        pre = np.empty((horizon_knots + 1, traj.state_dim))
        post = np.empty((horizon_knots + 1, traj.state_dim))
        pre[0] = ev.x_pre
        post[0] = ev.x_post
        if horizon_knots > 0:
            # forward in the pre mode: first hop dt2 lands on knot k+1
            pre[1:] = _sample_flow_at_knots(
                sys, ev.source, ev.event_time, ev.x_pre, u_pre, ev.dt2, traj.dt,
                horizon_knots, rtol, atol,
            )
            # backward in the post mode: first hop -dt1 lands on knot k
            post[1:] = _sample_flow_at_knots(
                sys, ev.target, ev.event_time, ev.x_post, u_post, -ev.dt1, traj.dt,
                horizon_knots, rtol, atol,
            )
        out.append(
            ReferenceExtension(
                event_knot=k,
                transition=ev.transition,
                source=ev.source,
                target=ev.target,
                pre_states=pre,
                post_states=post,
                pre_input=np.array(u_pre, dtype=float),
                post_input=np.array(u_post, dtype=float),
            )
        )
    return out


def closed_loop_rollout(
    sys: HybridSystem,
    reference: HybridTrajectory,
    extensions: Sequence[ReferenceExtension],
    gains,
    alpha: float,
    x0: FloatArray,
    mode0: int,
    rtol: float = RTOL_DEFAULT,
    atol: float = ATOL_DEFAULT,
) -> HybridTrajectory:
    """Roll out u = u_hat + alpha*u_ff + K (x - x_hat) against a reference.

    Knots whose mode differs from the reference take (x_hat, u_hat) from the
    covering extension and hold the event-adjacent gains.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    n_steps = reference.n_steps
    states = np.empty((n_steps + 1, sys.state_dim))
    inputs = np.empty((n_steps, sys.input_dim))
    modes = np.empty(n_steps + 1, dtype=int)
    events: list[tuple[int, EventRecord]] = []
    states[0] = np.asarray(x0, dtype=float)
    modes[0] = mode0
    for k in range(n_steps):
        x_hat, u_hat, gk = lookup_reference(
            reference.states, reference.inputs, reference.modes, extensions, k, int(modes[k])
        )
        u = u_hat + alpha * gains.u_ff[gk] + gains.K[gk] @ (states[k] - x_hat)
        inputs[k] = u
        step = integrate_step(
            sys, int(modes[k]), float(reference.times[k]), states[k], u, reference.dt, rtol, atol
        )
        states[k + 1] = step.x_next
        modes[k + 1] = step.mode_next
        if step.event is not None:
            events.append((k, step.event))
    return HybridTrajectory(
        dt=reference.dt,
        times=reference.times.copy(),
        states=states,
        inputs=inputs,
        modes=modes,
        events=events,
    )
