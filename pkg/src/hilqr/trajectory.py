"""Trajectory containers, reference extensions, and file round-tripping.

Conventions used throughout the package:
  - A trajectory over N steps has N+1 knots, N inputs, and uniform spacing dt.
  - modes[k] is the mode in which step k starts; an event recorded at knot k
    happened inside the interval (t_k, t_{k+1}], so modes[k] is the event's
    source and modes[k+1] its target. A degenerate dt1=0 event sits at t_k.
  - Extension sampling: pre_states[0] is x_pre at the event time and
    pre_states[j] the pre-mode flow at knot e+j; post_states[0] is x_post and
    post_states[j] the post-mode backward flow at knot e+1-j. Held inputs are
    frozen at build time so slicing a reference cannot lose them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt

from .errors import ExtensionCoverageError

FloatArray = npt.NDArray[np.float64]

# 17 significant digits round-trips IEEE doubles exactly
FLOAT_FMT = ".17g"


@dataclass(frozen=True)
class EventRecord:
    """Metadata for one hybrid event inside a single control timestep."""

    transition: int  # index into sys.transitions
    source: int
    target: int
    event_time: float
    x_pre: FloatArray
    x_post: FloatArray
    dt1: float  # sub-timestep before the transition
    dt2: float  # sub-timestep after; dt1 + dt2 == dt
    saltation: FloatArray


@dataclass
class HybridTrajectory:
    """Uniformly spaced hybrid trajectory with recorded events."""

    dt: float
    times: FloatArray  # (N+1,)
    states: FloatArray  # (N+1, n)
    inputs: FloatArray  # (N, m)
    modes: np.ndarray  # (N+1,) int
    events: list[tuple[int, EventRecord]] = field(default_factory=list)

    def __post_init__(self) -> None:
        n_knots = self.states.shape[0]
        if self.times.shape != (n_knots,) or self.modes.shape != (n_knots,):
            raise ValueError("times/states/modes knot counts disagree")
        if self.inputs.shape[0] != n_knots - 1:
            raise ValueError("inputs must have one row per step")
        event_knots = [k for k, _ in self.events]
        if len(set(event_knots)) != len(event_knots):
            raise ValueError("at most one event per knot interval")
        switched = set(np.nonzero(self.modes[1:] != self.modes[:-1])[0].tolist())
        if not switched.issubset(set(event_knots)):
            raise ValueError("mode change without a recorded event")
        for k, ev in self.events:
            if self.modes[k] != ev.source or self.modes[k + 1] != ev.target:
                raise ValueError(f"event at knot {k} disagrees with mode sequence")
        self.events.sort(key=lambda item: item[0])

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def event_at(self, k: int) -> Optional[EventRecord]:
        for knot, ev in self.events:
            if knot == k:
                return ev
        return None

    def slice(self, start: int, stop: int) -> "HybridTrajectory":
        """Sub-trajectory over knots [start, stop]; events re-indexed locally."""
        if not (0 <= start <= stop <= self.n_steps):
            raise ValueError(f"bad window [{start}, {stop}]")
        return HybridTrajectory(
            dt=self.dt,
            times=self.times[start : stop + 1].copy(),
            states=self.states[start : stop + 1].copy(),
            inputs=self.inputs[start:stop].copy(),
            modes=self.modes[start : stop + 1].copy(),
            events=[(k - start, ev) for k, ev in self.events if start <= k < stop],
        )


@dataclass(frozen=True)
class ReferenceExtension:
    """Single-mode continuations of a reference around one event.

    The pre side flows the source mode forward past the guard; the post side
    flows the target mode backward before the event. Both hold the
    event-adjacent input, stored here so the extension stays valid after the
    owning reference is sliced to a window.
    """

    event_knot: int
    transition: int
    source: int
    target: int
    pre_states: FloatArray  # (H+1, n)
    post_states: FloatArray  # (H+1, n)
    pre_input: FloatArray  # (m,)
    post_input: FloatArray  # (m,)

    @property
    def horizon(self) -> int:
        return self.pre_states.shape[0] - 1

    def shifted(self, offset: int) -> "ReferenceExtension":
        return replace(self, event_knot=self.event_knot + offset)


def shift_extensions(
    extensions: Sequence[ReferenceExtension], start: int
) -> list[ReferenceExtension]:
    """Re-index extensions for a window beginning at absolute knot `start`."""
    return [ext.shifted(-start) for ext in extensions]


def lookup_reference(
    states: FloatArray,
    inputs: FloatArray,
    modes: np.ndarray,
    extensions: Sequence[ReferenceExtension],
    k: int,
    mode: int,
) -> tuple[FloatArray, FloatArray, int]:
    """Reference (x_hat, u_hat, gain knot) at knot k for a rollout in `mode`.

    Matching modes read the reference directly. On a mismatch the nearest
    event whose extension covers knot k in the rollout's mode supplies the
    reference, with inputs and gains held at the event-adjacent knot
    (clamped into the gain schedule's range).
    """
    n_inputs = inputs.shape[0]
    if modes[k] == mode:
        u_idx = min(k, n_inputs - 1)
        return states[k], inputs[u_idx], k
    best: Optional[tuple[int, FloatArray, FloatArray, int]] = None
    for ext in extensions:
        e = ext.event_knot
        if mode == ext.source and e < k <= e + ext.horizon:
            # rollout still in the pre-transition mode after the reference switched
            cand = (k - e, ext.pre_states[k - e], ext.pre_input, max(min(e, n_inputs - 1), 0))
        elif mode == ext.target and e + 1 - ext.horizon <= k <= e:
            # rollout already in the post-transition mode before the reference
            cand = (
                e + 1 - k,
                ext.post_states[e + 1 - k],
                ext.post_input,
                max(min(e + 1, n_inputs - 1), 0),
            )
        else:
            continue
        if best is None or cand[0] < best[0]:
            best = cand
    if best is None:
        raise ExtensionCoverageError(
            f"mode {mode} at knot {k} not covered by any reference extension"
        )
    return best[1], best[2], best[3]


# -- serialization -------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), FLOAT_FMT)


def write_trajectory_csv(path: str, traj: HybridTrajectory) -> None:
    """Columns t, mode, x[0..n), u[0..m); the final knot's inputs print as 0."""
    n = traj.state_dim
    m = traj.input_dim
    header = ["t", "mode"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(traj.n_steps + 1):
            u = traj.inputs[k] if k < traj.n_steps else np.zeros(m)
            writer.writerow(
                [_fmt(traj.times[k]), int(traj.modes[k])]
                + [_fmt(v) for v in traj.states[k]]
                + [_fmt(v) for v in u]
            )


def write_events_json(path: str, traj: HybridTrajectory) -> None:
    records = [
        {
            "knot": int(k),
            "source": int(ev.source),
            "target": int(ev.target),
            "event_time": float(ev.event_time),
            "x_pre": [float(v) for v in ev.x_pre],
            "x_post": [float(v) for v in ev.x_post],
            "dt1": float(ev.dt1),
            "dt2": float(ev.dt2),
        }
        for k, ev in traj.events
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")


def read_trajectory(csv_path: str, events_path: str, sys=None) -> HybridTrajectory:
    """Rebuild a trajectory from its CSV/JSON pair.

    Saltation matrices are recomputed from `sys` when given (the sidecar does
    not carry them); otherwise event records hold an empty matrix.
    """
    from .hybrid import saltation_matrix  # local import avoids a cycle

    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    n = sum(1 for name in header if name.startswith("x"))
    m = sum(1 for name in header if name.startswith("u"))
    times = np.array([float(r[0]) for r in rows])
    modes = np.array([int(r[1]) for r in rows], dtype=int)
    states = np.array([[float(v) for v in r[2 : 2 + n]] for r in rows])
    inputs = np.array([[float(v) for v in r[2 + n : 2 + n + m]] for r in rows[:-1]])
    inputs = inputs.reshape(len(rows) - 1, m)
    with open(events_path) as fh:
        raw_events = json.load(fh)
    events: list[tuple[int, EventRecord]] = []
    for rec in raw_events:
        knot = int(rec["knot"])
        x_pre = np.array(rec["x_pre"], dtype=float)
        source = int(rec["source"])
        target = int(rec["target"])
        if sys is not None:
            tr_idx = next(
                i
                for i, tr in enumerate(sys.transitions)
                if (tr.source, tr.target) == (source, target)
            )
            xi = saltation_matrix(
                sys, tr_idx, float(rec["event_time"]), x_pre, inputs[min(knot, len(inputs) - 1)]
            ).matrix
        else:
            tr_idx = -1
            xi = np.zeros((n, n))
        events.append(
            (
                knot,
                EventRecord(
                    transition=tr_idx,
                    source=source,
                    target=target,
                    event_time=float(rec["event_time"]),
                    x_pre=x_pre,
                    x_post=np.array(rec["x_post"], dtype=float),
                    dt1=float(rec["dt1"]),
                    dt2=float(rec["dt2"]),
                    saltation=xi,
                ),
            )
        )
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return HybridTrajectory(
        dt=dt, times=times, states=states, inputs=inputs, modes=modes, events=events
    )
