"""Quadratic tracking cost with event-driven mode-mismatch handling.

Stage cost (no 1/2 factor):
    J(x_k, u_k) = (x - x_hat)' Q (x - x_hat) + (u - u_hat)' R (u - u_hat)
with a matching terminal term under Q_N. When the evaluated trajectory's mode
at a knot differs from the reference's and `use_extensions` is on, the
reference pair (x_hat, u_hat) is read from the extension in the matching mode
instead of the nominal knot; switching this off reproduces the naive tracking
cost that penalizes mismatched event timing through flipped velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ExtensionCoverageError
from .trajectory import (
    EventRecord,
    FloatArray,
    HybridTrajectory,
    ReferenceExtension,
    lookup_reference,
)


@dataclass(frozen=True)
class StageTerms:
    """Value and derivatives of one stage cost."""

    value: float
    j_x: FloatArray
    j_u: FloatArray
    j_xx: FloatArray
    j_uu: FloatArray
    j_ux: FloatArray


def _check_symmetric_psd(mat: FloatArray, name: str, definite: bool) -> None:
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    floor = 1e-12 * max(1.0, float(np.max(np.abs(eigs), initial=0.0)))
    if definite and np.min(eigs) <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    if not definite and np.min(eigs) < -floor:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass
class CostModel:
    """Reference knots plus penalty schedule; immutable in practice.

    q and r accept either a constant matrix or a per-knot stack. modes_ref
    enables mismatch handling; without it the reference is mode-blind.
    transition_cost optionally maps an EventRecord to (J_x, J_xx) evaluated at
    the pre-event state (zero by default).
    """

    x_ref: FloatArray  # (N+1, n)
    u_ref: FloatArray  # (N, m)
    q: FloatArray  # (n, n) or (N, n, n)
    r: FloatArray  # (m, m) or (N, m, m)
    q_n: FloatArray  # (n, n)
    modes_ref: Optional[np.ndarray] = None
    extensions: Sequence[ReferenceExtension] = field(default_factory=tuple)
    use_extensions: bool = True
    transition_cost: Optional[Callable[[EventRecord], tuple[FloatArray, FloatArray]]] = None

    def __post_init__(self) -> None:
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.q_n = np.asarray(self.q_n, dtype=float)
        if self.u_ref.shape[0] != self.x_ref.shape[0] - 1:
            raise ValueError("u_ref must have one row per step")
        n = self.x_ref.shape[1]
        m = self.u_ref.shape[1]
        for mat, name, definite, dim in (
            (self.q, "Q", False, n),
            (self.r, "R", True, m),
        ):
            stack = mat if mat.ndim == 3 else mat[None]
            for entry in stack:
                if entry.shape != (dim, dim):
                    raise ValueError(f"{name} has shape {entry.shape}, wanted ({dim},{dim})")
                _check_symmetric_psd(entry, name, definite)
        _check_symmetric_psd(self.q_n, "Q_N", definite=False)
        if self.modes_ref is not None:
            self.modes_ref = np.asarray(self.modes_ref, dtype=int)
            if self.modes_ref.shape != (self.x_ref.shape[0],):
                raise ValueError("modes_ref must have one entry per knot")

    @property
    def n_steps(self) -> int:
        return self.u_ref.shape[0]

    def q_at(self, k: int) -> FloatArray:
        return self.q[k] if self.q.ndim == 3 else self.q

    def r_at(self, k: int) -> FloatArray:
        return self.r[k] if self.r.ndim == 3 else self.r

    def reference_at(self, k: int, mode: int) -> tuple[FloatArray, FloatArray]:
        """(x_hat, u_hat) at knot k for a trajectory currently in `mode`.

        A mismatch beyond the reach of every extension falls back to the
        nominal knot: the extension is a local comparison device around an
        event, and far away from all of them the naive penalty is the only
        reference there is.
        """
        if (
            self.modes_ref is None
            or not self.use_extensions
            or self.modes_ref[k] == mode
        ):
            return self.x_ref[k], self.u_ref[min(k, self.n_steps - 1)]
        try:
            x_hat, u_hat, _ = lookup_reference(
                self.x_ref, self.u_ref, self.modes_ref, self.extensions, k, mode
            )
        except ExtensionCoverageError:
            return self.x_ref[k], self.u_ref[min(k, self.n_steps - 1)]
        return x_hat, u_hat

    def stage_terms(self, k: int, x: FloatArray, u: FloatArray, mode: int) -> StageTerms:
        x_hat, u_hat = self.reference_at(k, mode)
        q = self.q_at(k)
        r = self.r_at(k)
        dx = x - x_hat
        du = u - u_hat
        qdx = q @ dx
        rdu = r @ du
        return StageTerms(
            value=float(dx @ qdx + du @ rdu),
            j_x=2.0 * qdx,
            j_u=2.0 * rdu,
            j_xx=2.0 * q,
            j_uu=2.0 * r,
            j_ux=np.zeros((u.size, x.size)),
        )

    def terminal_terms(self, x: FloatArray, mode: int) -> tuple[float, FloatArray, FloatArray]:
        x_hat, _ = self.reference_at(self.n_steps, mode)
        dx = x - x_hat
        qdx = self.q_n @ dx
        return float(dx @ qdx), 2.0 * qdx, 2.0 * self.q_n

    def total(self, traj: HybridTrajectory) -> float:
        """Total cost of a trajectory under this model (mode-aware)."""
        acc = 0.0
        for k in range(traj.n_steps):
            x_hat, u_hat = self.reference_at(k, int(traj.modes[k]))
            dx = traj.states[k] - x_hat
            du = traj.inputs[k] - u_hat
            acc += float(dx @ self.q_at(k) @ dx + du @ self.r_at(k) @ du)
        value, _, _ = self.terminal_terms(traj.states[-1], int(traj.modes[-1]))
        return acc + value
