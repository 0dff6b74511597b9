"""Safeguarded Newton solver for the implicit backward-Euler step.

Each step has to find y > 0 with

    F(y) = y - h (a_neg1 / y - a0 + a1 y - a2 y**gamma) - rhs = 0.

For h * a1 < 1, F is strictly increasing on (0, inf) with F(0+) = -inf and
F(inf) = +inf, so there is exactly one positive root for any real rhs. The
solver works on arrays of right-hand sides at once; every element follows
its own iteration, so results do not depend on how problems are batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams

__all__ = ["ImplicitStepProblem", "SolverError", "residual", "solve", "solve_many"]

REL_TOL = 1e-12
ABS_TOL = 1e-14
MAX_ITER = 200


class SolverError(RuntimeError):
    """Raised when the iteration limit is hit; carries the last brackets."""

    def __init__(self, message: str, lo: np.ndarray, hi: np.ndarray):
        super().__init__(message)
        self.lo = lo
        self.hi = hi


@dataclass(frozen=True)
class ImplicitStepProblem:
    h: float
    params: ModelParams
    rhs: float

    def __post_init__(self) -> None:
        _check_step(self.h, self.params)
        if not np.isfinite(self.rhs):
            raise ValueError("rhs must be finite")


def _check_step(h: float, p: ModelParams) -> None:
    if not h > 0:
        raise ValueError(f"stepsize must be positive, got {h!r}")
    if not h * p.a1 < 1:
        raise ValueError(f"h * a1 = {h * p.a1!r} must be < 1 for a unique positive root")


def _terms(y: np.ndarray, h: float, p: ModelParams, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(over="ignore", invalid="ignore"):
        ypow = np.exp(p.gamma * np.log(y))
        f = y - h * (p.a_neg1 / y - p.a0 + p.a1 * y - p.a2 * ypow) - rhs
        df = 1.0 + h * (p.a_neg1 / (y * y) - p.a1 + p.a2 * p.gamma * ypow / y)
    return f, df


def residual(y, h: float, p: ModelParams, rhs):
    y = np.asarray(y, dtype=float)
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), y.shape)
    return _terms(y, h, p, rhs)[0]


def _bracket(h: float, p: ModelParams, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    lo = 0.5 * np.minimum(1.0, np.maximum(rhs, 0.0) + 1.0)
    hi = np.maximum(1.0, rhs + 1.0)
    f_lo, _ = _terms(lo, h, p, rhs)
    f_hi, _ = _terms(hi, h, p, rhs)
    # F(0+) = -inf and F(inf) = +inf, so both loops terminate.
    while True:
        bad = ~(f_lo < 0)
        if not bad.any():
            break
        lo[bad] *= 0.5
        f_lo[bad] = _terms(lo[bad], h, p, rhs[bad])[0]
    while True:
        bad = ~(f_hi > 0)
        if not bad.any():
            break
        hi[bad] *= 2.0
        f_hi[bad] = _terms(hi[bad], h, p, rhs[bad])[0]
    assert np.all(f_lo < 0) and np.all(f_hi > 0)
    return lo, hi, f_lo, f_hi


def solve_many(h: float, p: ModelParams, rhs, rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> np.ndarray:
    """Unique positive roots of F for an array of right-hand sides."""
    _check_step(h, p)
    if not (rel_tol > 0 and abs_tol > 0):
        raise ValueError("tolerances must be positive")
    rhs = np.array(rhs, dtype=float, ndmin=1)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs must be finite")
    lo, hi, _, _ = _bracket(h, p, rhs)
    y = 0.5 * (lo + hi)
    todo = np.arange(rhs.size)
    for _ in range(MAX_ITER):
        yt, rt, lt, ht = y[todo], rhs[todo], lo[todo], hi[todo]
        f, df = _terms(yt, h, p, rt)
        done = np.abs(f) <= abs_tol + rel_tol * (np.abs(yt) + np.abs(rt))
        # Bracket has collapsed to neighbouring doubles: nothing left to refine.
        done |= (ht - lt) <= 4.0 * np.spacing(ht)
        neg = f < 0
        lt = np.where(neg, yt, lt)
        ht = np.where(neg, ht, yt)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            newton = yt - f / df
        ok = np.isfinite(newton) & (newton > lt) & (newton < ht)
        y_next = np.where(ok, newton, 0.5 * (lt + ht))
        keep = ~done
        lo[todo], hi[todo] = lt, ht
        y[todo] = np.where(done, yt, y_next)
        todo = todo[keep]
        if todo.size == 0:
            return y
    raise SolverError(f"no convergence after {MAX_ITER} iterations for {todo.size} problem(s)", lo[todo], hi[todo])


def solve(prob: ImplicitStepProblem, rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> float:
    return float(solve_many(prob.h, prob.params, prob.rhs, rel_tol, abs_tol)[0])

