"""Backward Euler (drift-implicit) and explicit Euler-Maruyama time stepping.

Both schemes evaluate the diffusion and the jump at the left endpoint:

    BEM: Y_n = Y_{n-1} + h mu(Y_n)     + b Y_{n-1}^theta dW + phi(Y_{n-1}) dN
    EM:  Y_n = Y_{n-1} + h mu(Y_{n-1}) + b Y_{n-1}^theta dW + phi(Y_{n-1}) dN

The path simulators are vectorised over a batch of paths (rows). EM paths
are absorbed, i.e. frozen, at the first non-positive value because the
non-integer powers in the coefficients are undefined there.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import noise as _noise
from .model import JumpSpec, ModelParams, diffusion, drift, jump_phi
from .rootfind import solve_many

__all__ = [
    "DIVERGENCE_BOUND",
    "BatchResult",
    "PathResult",
    "SchemeKind",
    "bem_step",
    "em_step",
    "simulate_batch",
    "simulate_path",
]

DIVERGENCE_BOUND = 1e10


class SchemeKind(enum.Enum):
    BEM = "bem"
    EM = "em"


@dataclass(frozen=True)
class PathResult:
    terminal: float
    positive: bool
    first_negative_step: int | None = None
    absorbed: bool = False
    diverged: bool = False
    trajectory: np.ndarray | None = None


@dataclass(frozen=True)
class BatchResult:
    """Per-path outcome arrays for a batch; ``first_negative_step`` is -1 when absent."""

    terminal: np.ndarray
    positive: np.ndarray
    first_negative_step: np.ndarray
    diverged: np.ndarray
    trajectory: np.ndarray | None = None

    def path(self, i: int) -> PathResult:
        step = int(self.first_negative_step[i])
        return PathResult(
            terminal=float(self.terminal[i]),
            positive=bool(self.positive[i]),
            first_negative_step=None if step < 0 else step,
            absorbed=not bool(self.positive[i]) or bool(self.diverged[i]),
            diverged=bool(self.diverged[i]),
            trajectory=None if self.trajectory is None else self.trajectory[i].copy(),
        )


def _explicit_part(p: ModelParams, j: JumpSpec, y, dW, dN):
    return y + diffusion(p, y) * dW + jump_phi(j, y) * dN


def bem_step(p: ModelParams, j: JumpSpec, h: float, y_prev, dW, dN):
    """One backward-Euler step; works elementwise on arrays of paths."""
    scalar = np.ndim(y_prev) == 0
    rhs = _explicit_part(p, j, y_prev, dW, dN)
    y = solve_many(h, p, rhs)
    return float(y[0]) if scalar else y


def em_step(p: ModelParams, j: JumpSpec, h: float, y_prev: float, dW: float, dN: int) -> float:
    """One explicit Euler step. Non-positive states are absorbing and returned unchanged."""
    if not np.isfinite(y_prev):
        raise ValueError("state is not finite")
    if y_prev <= 0:
        return y_prev
    return y_prev + h * drift(p, y_prev) + diffusion(p, y_prev) * dW + jump_phi(j, y_prev) * dN


def simulate_batch(
    p: ModelParams,
    j: JumpSpec,
    kind: SchemeKind,
    dW: np.ndarray,
    dN: np.ndarray,
    h: float,
    keep_trajectory: bool = False,
) -> BatchResult:
    """Run ``kind`` over (paths, steps) increment arrays with stepsize ``h``."""
    dW = np.atleast_2d(dW)
    dN = np.atleast_2d(dN)
    n_paths, n_steps = dW.shape
    y = np.full(n_paths, p.x0)
    first_neg = np.full(n_paths, -1, dtype=np.int64)
    diverged = np.zeros(n_paths, dtype=bool)
    traj = None
    if keep_trajectory:
        traj = np.empty((n_paths, n_steps + 1))
        traj[:, 0] = y

    if kind is SchemeKind.BEM:
        ymin = y.copy()
        for n in range(n_steps):
            y = bem_step(p, j, h, y, dW[:, n], dN[:, n])
            np.minimum(ymin, y, out=ymin)
            if traj is not None:
                traj[:, n + 1] = y
        # The solver only returns positive roots; verify rather than assume.
        positive = ymin > 0
        if not positive.all():
            raise ArithmeticError("backward Euler produced a non-positive state")
        return BatchResult(y, positive, first_neg, diverged, traj)

    alive = np.ones(n_paths, dtype=bool)
    for n in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size:
            yi = y[idx]
            y_new = yi + h * drift(p, yi) + diffusion(p, yi) * dW[idx, n] + jump_phi(j, yi) * dN[idx, n]
            with np.errstate(invalid="ignore"):
                neg = ~(y_new > 0) & ~np.isnan(y_new)
                big = ~np.isfinite(y_new) | (np.abs(y_new) > DIVERGENCE_BOUND)
            first_neg[idx[neg]] = n + 1
            diverged[idx[big & ~neg]] = True
            y[idx] = y_new
            alive[idx[neg | big]] = False
        if traj is not None:
            traj[:, n + 1] = y
    positive = (first_neg < 0) & ~diverged
    return BatchResult(y, positive, first_neg, diverged, traj)


def simulate_path(
    p: ModelParams,
    j: JumpSpec,
    kind: SchemeKind,
    g: _noise.NoiseGrid,
    level: int,
    keep_trajectory: bool = False,
) -> PathResult:
    dW, dN = _noise.coarsen(g, level)
    h = g.T / 2**level
    return simulate_batch(p, j, kind, dW[None, :], dN[None, :], h, keep_trajectory).path(0)
