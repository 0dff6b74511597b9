"""Reproducible Brownian / Poisson increments on a dyadic grid.

Noise is always drawn on the finest grid and summed down, so every
stepsize used in an experiment is driven by the same sample path.
Each (seed, path_index, process) triple owns an independent PCG64 stream
derived through :class:`numpy.random.SeedSequence`, which makes a path's
noise independent of generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["GridConfig", "NoiseGrid", "coarsen", "generate", "generate_batch", "poisson_inversion"]

_BROWNIAN = 0
_POISSON = 1


@dataclass(frozen=True)
class GridConfig:
    T: float
    fine_level: int
    coarse_levels: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T!r}")
        if self.fine_level < 0:
            raise ValueError("fine_level must be >= 0")
        object.__setattr__(self, "coarse_levels", tuple(int(k) for k in self.coarse_levels))
        for level in self.coarse_levels:
            if not 0 <= level <= self.fine_level:
                raise ValueError(f"coarse level {level} is outside [0, {self.fine_level}]")

    @property
    def steps(self) -> int:
        return 2**self.fine_level

    def stepsize(self, level: int | None = None) -> float:
        level = self.fine_level if level is None else level
        return self.T / 2**level


@dataclass(frozen=True)
class NoiseGrid:
    dW: np.ndarray
    dN: np.ndarray
    seed: int
    path_index: int
    T: float = 1.0
    fine_level: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.dW.shape != self.dN.shape or self.dW.ndim != 1:
            raise ValueError("dW and dN must be 1-d arrays of equal length")
        n = self.dW.size
        level = n.bit_length() - 1
        if n == 0 or 2**level != n:
            raise ValueError("increment arrays must have a power-of-two length")
        if self.fine_level == -1:
            object.__setattr__(self, "fine_level", level)
        elif self.fine_level != level:
            raise ValueError("fine_level does not match the increment count")
        if np.any(self.dN < 0):
            raise ValueError("Poisson counts must be non-negative")
        self.dW.setflags(write=False)
        self.dN.setflags(write=False)


def _stream(seed: int, path_index: int, process: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path_index), process))
    return np.random.Generator(np.random.PCG64(ss))


def poisson_inversion(u: np.ndarray, mean: float) -> np.ndarray:
    """Poisson(mean) variates by sequential search on the CDF.

    Fine for the small means used here (mean <= 10); the loop length is the
    largest count drawn.
    """
    if mean < 0:
        raise ValueError("Poisson mean must be non-negative")
    u = np.asarray(u, dtype=float)
    counts = np.zeros(u.shape, dtype=np.int64)
    if mean == 0:
        return counts
    prob = math.exp(-mean)
    cdf = prob
    active = u > cdf
    k = 0
    while active.any():
        k += 1
        prob *= mean / k
        cdf_next = cdf + prob
        if cdf_next == cdf:
            # Tail below double resolution; remaining u are within rounding of 1.
            counts[active] = k
            break
        cdf = cdf_next
        counts[active] = k
        active &= u > cdf
    return counts


def generate(cfg: GridConfig, lam: float, seed: int, path_index: int) -> NoiseGrid:
    n = cfg.steps
    h = cfg.stepsize()
    dW = _stream(seed, path_index, _BROWNIAN).standard_normal(n) * math.sqrt(h)
    dN = poisson_inversion(_stream(seed, path_index, _POISSON).random(n), lam * h)
    return NoiseGrid(dW=dW, dN=dN, seed=int(seed), path_index=int(path_index), T=cfg.T)


def generate_batch(cfg: GridConfig, lam: float, seed: int, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack the increments of paths ``start .. stop-1`` into (paths, steps) arrays.

    Row ``i`` is bit-identical to ``generate(cfg, lam, seed, start + i)``.
    """
    n = cfg.steps
    h = cfg.stepsize()
    count = stop - start
    dW = np.empty((count, n))
    u = np.empty((count, n))
    for row, index in enumerate(range(start, stop)):
        dW[row] = _stream(seed, index, _BROWNIAN).standard_normal(n)
        u[row] = _stream(seed, index, _POISSON).random(n)
    dW *= math.sqrt(h)
    return dW, poisson_inversion(u, lam * h)


def _coarsen_array(a: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return a
    blocks = a.reshape(a.shape[:-1] + (a.shape[-1] // factor, factor))
    # Explicit left-to-right accumulation; np.sum may reorder (pairwise/SIMD).
    out = blocks[..., 0].copy()
    for k in range(1, factor):
        out += blocks[..., k]
    return out


def coarsen(g: NoiseGrid | tuple[np.ndarray, np.ndarray], level: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum fine increments down to ``level`` (last axis is time).

    Accepts a :class:`NoiseGrid` or a ``(dW, dN)`` pair of batched arrays.
    """
    dW, dN = (g.dW, g.dN) if isinstance(g, NoiseGrid) else g
    n = dW.shape[-1]
    fine_level = n.bit_length() - 1
    if not 0 <= level <= fine_level:
        raise ValueError(f"level {level} is outside [0, {fine_level}]")
    factor = 2 ** (fine_level - level)
    return _coarsen_array(dW, factor), _coarsen_array(dN, factor)
