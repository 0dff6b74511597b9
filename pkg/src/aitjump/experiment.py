"""Monte Carlo harness: strong errors, convergence slopes, negativity census, moment probes.

All path work is done in fixed-size batches of consecutive path indices. Per-path
results are collected into arrays in path-index order before any reduction, so a
run is bit-reproducible regardless of batch size or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import noise
from .model import (
    DEFAULT_Q,
    JumpSpec,
    ModelParams,
    RegimeCase,
    classify_regime,
    critical_step_bound,
    strict_step_bound,
)
from .scheme import SchemeKind, simulate_batch

__all__ = [
    "ExperimentSpec",
    "PositivityCensus",
    "RateReport",
    "census_table",
    "fit_rate",
    "moment_probe",
    "moment_range",
    "negative_census",
    "strong_error",
]

NUM_STDERR_BATCHES = 10


@dataclass(frozen=True)
class ExperimentSpec:
    params: ModelParams
    jump: JumpSpec
    grid: noise.GridConfig
    num_paths: int
    base_seed: int
    scheme: SchemeKind
    levels_under_test: tuple[int, ...]
    reference_level: int
    batch_size: int = 500
    q: float = DEFAULT_Q

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels_under_test", tuple(int(k) for k in self.levels_under_test))
        if self.num_paths < 1:
            raise ValueError("num_paths must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.levels_under_test:
            raise ValueError("levels_under_test is empty")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be an unsigned 64-bit integer")
        if self.reference_level < max(self.levels_under_test):
            raise ValueError("reference_level must be >= every level under test")
        if min(self.levels_under_test) < 0 or self.reference_level > self.grid.fine_level:
            raise ValueError(f"levels must lie in [0, fine_level={self.grid.fine_level}]")

    def stepsize(self, level: int) -> float:
        return self.grid.stepsize(level)

    def batches(self) -> list[tuple[int, int]]:
        return [(s, min(s + self.batch_size, self.num_paths)) for s in range(0, self.num_paths, self.batch_size)]


@dataclass(frozen=True)
class RateReport:
    stepsizes: np.ndarray
    rms_errors: np.ndarray
    batch_stderr: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    num_paths: int


@dataclass(frozen=True)
class PositivityCensus:
    total: int
    negative: int
    diverged: int
    fraction_negative: float = field(init=False)

    def __post_init__(self) -> None:
        if self.negative + self.diverged > self.total:
            raise ValueError("negative + diverged exceeds total")
        object.__setattr__(self, "fraction_negative", self.negative / self.total)


def fit_rate(stepsizes, errors) -> tuple[float, float, float]:
    """Least-squares line through (log h, log err); returns (slope, intercept, r^2)."""
    h = np.asarray(stepsizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape or h.ndim != 1 or h.size < 2:
        raise ValueError("need two equal-length 1-d arrays with at least 2 entries")
    if not (np.all(h > 0) and np.all(e > 0)):
        raise ValueError("stepsizes and errors must be strictly positive")
    x, y = np.log(h), np.log(e)
    xc, yc = x - x.mean(), y - y.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("stepsizes must not all be equal")
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    ss_tot = float(yc @ yc)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def _check_bem_steps(spec: ExperimentSpec, levels) -> None:
    p = spec.params
    regime = classify_regime(p)
    if regime.case is RegimeCase.STRICT:
        bound = strict_step_bound(p, spec.q)
    elif regime.case is RegimeCase.CRITICAL and regime.critical_ok:
        bound = critical_step_bound(p)
    else:
        raise ValueError(f"no convergence theory for regime {regime}")
    for level in levels:
        h = spec.stepsize(level)
        if not h < bound:
            raise ValueError(f"stepsize {h!r} at level {level} violates the bound h < {bound!r}")


def _map_batches(fn: Callable, spec: ExperimentSpec, workers: int | None) -> list:
    args = [(spec, start, stop) for start, stop in spec.batches()]
    if workers and workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _noise_batch(spec: ExperimentSpec, start: int, stop: int):
    return noise.generate_batch(spec.grid, spec.params.lam, spec.base_seed, start, stop)


def _strong_error_batch(spec: ExperimentSpec, start: int, stop: int, sup: bool = False) -> np.ndarray:
    g = _noise_batch(spec, start, stop)
    p, j = spec.params, spec.jump
    ref_level = spec.reference_level
    ref = simulate_batch(p, j, SchemeKind.BEM, *noise.coarsen(g, ref_level), spec.stepsize(ref_level), keep_trajectory=sup)
    out = np.empty((stop - start, len(spec.levels_under_test)))
    for k, level in enumerate(spec.levels_under_test):
        res = simulate_batch(p, j, SchemeKind.BEM, *noise.coarsen(g, level), spec.stepsize(level), keep_trajectory=sup)
        if sup:
            stride = 2 ** (ref_level - level)
            diff = res.trajectory - ref.trajectory[:, ::stride]
            out[:, k] = np.max(diff**2, axis=1)
        else:
            out[:, k] = (res.terminal - ref.terminal) ** 2
    return out


def _sup_batch(spec: ExperimentSpec, start: int, stop: int) -> np.ndarray:
    return _strong_error_batch(spec, start, stop, sup=True)


def strong_error(spec: ExperimentSpec, mode: str = "terminal", workers: int | None = None) -> RateReport:
    """Root-mean-square BEM error of each level against the reference level.

    ``mode="terminal"`` compares Y_N at time T; ``mode="sup"`` uses the largest
    squared deviation over the coarse grid points.
    """
    if spec.scheme is not SchemeKind.BEM:
        raise ValueError("strong error is measured for the backward Euler scheme")
    if mode not in ("terminal", "sup"):
        raise ValueError(f"unknown error mode {mode!r}")
    _check_bem_steps(spec, spec.levels_under_test + (spec.reference_level,))
    fn = _strong_error_batch if mode == "terminal" else _sup_batch
    sq = np.concatenate(_map_batches(fn, spec, workers), axis=0)
    rms = np.sqrt(np.mean(sq, axis=0))
    groups = np.array_split(sq, min(NUM_STDERR_BATCHES, spec.num_paths), axis=0)
    if len(groups) > 1:
        group_rms = np.sqrt(np.array([g.mean(axis=0) for g in groups]))
        stderr = group_rms.std(axis=0, ddof=1) / math.sqrt(len(groups))
    else:
        stderr = np.full(rms.shape, np.nan)
    h = np.array([spec.stepsize(level) for level in spec.levels_under_test])
    if len(h) >= 2 and np.all(rms > 0):
        slope, intercept, r2 = fit_rate(h, rms)
    else:
        slope = intercept = r2 = math.nan
    return RateReport(h, rms, stderr, slope, intercept, r2, spec.num_paths)


def _census_batch(spec: ExperimentSpec, start: int, stop: int) -> np.ndarray:
    g = _noise_batch(spec, start, stop)
    out = np.zeros((len(spec.levels_under_test), 2), dtype=np.int64)
    for k, level in enumerate(spec.levels_under_test):
        res = simulate_batch(spec.params, spec.jump, spec.scheme, *noise.coarsen(g, level), spec.stepsize(level))
        out[k, 0] = np.count_nonzero(res.first_negative_step >= 0)
        out[k, 1] = np.count_nonzero(res.diverged)
    return out


def census_table(spec: ExperimentSpec, workers: int | None = None) -> list[tuple[int, PositivityCensus]]:
    """Negative-path census for every level under test, sharing one set of noise paths."""
    counts = np.sum(_map_batches(_census_batch, spec, workers), axis=0)
    return [
        (level, PositivityCensus(spec.num_paths, int(neg), int(div)))
        for level, (neg, div) in zip(spec.levels_under_test, counts)
    ]


def negative_census(spec: ExperimentSpec, level: int | None = None, workers: int | None = None) -> PositivityCensus:
    """Census at ``level`` (default: the first level under test)."""
    level = spec.levels_under_test[0] if level is None else level
    table = dict(census_table(_replace_levels(spec, (level,)), workers))
    return table[level]


def _replace_levels(spec: ExperimentSpec, levels: tuple[int, ...]) -> ExperimentSpec:
    return replace(spec, levels_under_test=levels, reference_level=max(spec.reference_level, *levels))


def moment_range(p: ModelParams, inverse: bool = False) -> tuple[float, float]:
    """Admissible exponents [lo, hi) for which the exact solution's moments stay bounded."""
    regime = classify_regime(p)
    if regime.case is RegimeCase.UNSUPPORTED:
        raise ValueError("moment bounds need gamma + 1 >= 2 theta")
    if inverse:
        return max(1.0, p.gamma - 1.0), math.inf
    if regime.case is RegimeCase.STRICT:
        return 2.0, math.inf
    return 2.0, (2.0 * p.a2 + p.b**2) / p.b**2


def _moment_batch(spec: ExperimentSpec, start: int, stop: int) -> np.ndarray:
    level = spec.levels_under_test[0]
    g = _noise_batch(spec, start, stop)
    res = simulate_batch(
        spec.params, spec.jump, spec.scheme, *noise.coarsen(g, level), spec.stepsize(level), keep_trajectory=True
    )
    return res.trajectory


def moment_probe(
    spec: ExperimentSpec,
    p_exponent: float,
    inverse: bool = False,
    level: int | None = None,
    workers: int | None = None,
) -> np.ndarray:
    """Monte Carlo estimate of E|Y_n|^p (or E|Y_n|^-p) at every grid point t_0..t_N."""
    lo, hi = moment_range(spec.params, inverse)
    if not lo <= p_exponent < hi:
        raise ValueError(f"exponent {p_exponent!r} outside the admissible range [{lo!r}, {hi!r})")
    if spec.scheme is not SchemeKind.BEM:
        raise ValueError("moment probes use the backward Euler scheme")
    level = spec.levels_under_test[0] if level is None else level
    spec = _replace_levels(spec, (level,))
    traj = np.concatenate(_map_batches(_moment_batch, spec, workers), axis=0)
    e = -p_exponent if inverse else p_exponent
    return np.mean(np.abs(traj) ** e, axis=0)
