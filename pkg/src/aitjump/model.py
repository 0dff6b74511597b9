"""Generalized Ait-Sahalia short-rate model with Poisson jumps.

    dX = (a_neg1 / X - a0 + a1 X - a2 X**gamma) dt + b X**theta dW + phi(X-) dN

on the positive half-line. This module holds the parameter containers, the
coefficient functions, the jump choices and the regime / step-size helpers
used by the convergence analysis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CASE_1",
    "CASE_2",
    "JumpKind",
    "JumpSpec",
    "ModelParams",
    "Regime",
    "RegimeCase",
    "classify_regime",
    "critical_step_bound",
    "diffusion",
    "drift",
    "jump_phi",
    "monotonicity_constant",
    "strict_step_bound",
]

REGIME_TOL = 1e-12
DEFAULT_Q = 3.0


@dataclass(frozen=True)
class ModelParams:
    a_neg1: float
    a0: float
    a1: float
    a2: float
    b: float
    gamma: float
    theta: float
    lam: float
    x0: float

    def __post_init__(self) -> None:
        for name in ("a_neg1", "a0", "a1", "a2", "b", "lam", "x0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        for name in ("gamma", "theta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 1):
                raise ValueError(f"{name} must be > 1, got {value!r}")

    def replace(self, **changes: float) -> "ModelParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return ModelParams(**values)


CASE_1 = ModelParams(a_neg1=2.0, a0=1.0, a1=1.5, a2=5.0, b=1.0, gamma=3.5, theta=2.0, lam=1.0, x0=1.0)
CASE_2 = ModelParams(a_neg1=2.0, a0=1.0, a1=1.5, a2=5.0, b=1.0, gamma=3.0, theta=2.0, lam=1.0, x0=1.0)


class JumpKind(enum.Enum):
    LINEAR = "linear"
    IDENTITY = "identity"
    SINE = "sine"


@dataclass(frozen=True)
class JumpSpec:
    """Jump coefficient phi together with its admissibility constants.

    ``lipschitz_m`` bounds |phi(x) - phi(y)| / |x - y| and ``lower_eps0``
    satisfies x + phi(x) > lower_eps0 * min(1, x) for every x > 0. Use the
    constructors :meth:`linear`, :meth:`identity` and :meth:`sine`.
    """

    kind: JumpKind
    c: float = 0.0
    lipschitz_m: float = field(default=1.0)
    lower_eps0: float = field(default=1.0)

    def __post_init__(self) -> None:
        if self.kind is JumpKind.LINEAR and not self.c > -1.0:
            raise ValueError(f"linear jump scale must exceed -1 so that x + phi(x) > 0, got {self.c!r}")
        if not self.lipschitz_m > 0 or not self.lower_eps0 > 0:
            raise ValueError("lipschitz_m and lower_eps0 must be positive")

    @classmethod
    def linear(cls, c: float) -> "JumpSpec":
        # (1 + c) x >= (1 + c) min(1, x) with equality on (0, 1]; shrink for strictness.
        return cls(JumpKind.LINEAR, c=float(c), lipschitz_m=max(abs(c), 1e-300), lower_eps0=0.99 * (1.0 + c))

    @classmethod
    def identity(cls) -> "JumpSpec":
        return cls(JumpKind.IDENTITY, lipschitz_m=1.0, lower_eps0=1.9)

    @classmethod
    def sine(cls) -> "JumpSpec":
        return cls(JumpKind.SINE, lipschitz_m=1.0, lower_eps0=0.99)

    @property
    def label(self) -> str:
        if self.kind is JumpKind.LINEAR:
            return f"{self.c:g}x"
        return "x" if self.kind is JumpKind.IDENTITY else "sin(x)"

    @property
    def descriptor(self) -> str:
        """Config-file form: ``linear:<c>``, ``identity`` or ``sine``."""
        if self.kind is JumpKind.LINEAR:
            return f"linear:{self.c!r}"
        return self.kind.value

    @classmethod
    def from_descriptor(cls, text: str) -> "JumpSpec":
        text = text.strip()
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if name == "linear":
            if not arg.strip():
                raise ValueError("linear jump needs a scale, e.g. 'linear:-0.2'")
            return cls.linear(float(arg))
        if arg:
            raise ValueError(f"jump kind {name!r} takes no argument")
        if name == "identity":
            return cls.identity()
        if name == "sine":
            return cls.sine()
        raise ValueError(f"unknown jump kind {text!r} (expected linear:<c>, identity or sine)")


class RegimeCase(enum.Enum):
    STRICT = "strict"
    CRITICAL = "critical"
    UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class Regime:
    case: RegimeCase
    critical_ok: bool = False


def _check_positive(x) -> np.ndarray | float:
    if np.ndim(x) == 0:
        if not x > 0:
            raise ValueError(f"state must be positive, got {x!r}")
        return float(x)
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        raise ValueError("state must be positive")
    return arr


def _pow(x, e: float):
    # Positive domain only.
    if np.ndim(x) == 0:
        return math.exp(e * math.log(x))
    return np.exp(e * np.log(x))


def drift(p: ModelParams, x):
    """a_neg1/x - a0 + a1 x - a2 x**gamma, for scalar or array x > 0."""
    x = _check_positive(x)
    return p.a_neg1 / x - p.a0 + p.a1 * x - p.a2 * _pow(x, p.gamma)


def diffusion(p: ModelParams, x):
    x = _check_positive(x)
    return p.b * _pow(x, p.theta)


def jump_phi(j: JumpSpec, x):
    x = _check_positive(x)
    if j.kind is JumpKind.LINEAR:
        return j.c * x
    if j.kind is JumpKind.IDENTITY:
        return x * 1.0
    return math.sin(x) if np.ndim(x) == 0 else np.sin(x)


def classify_regime(p: ModelParams, tol: float = REGIME_TOL) -> Regime:
    gap = p.gamma + 1.0 - 2.0 * p.theta
    if gap > tol:
        return Regime(RegimeCase.STRICT)
    if gap < -tol:
        return Regime(RegimeCase.UNSUPPORTED)
    return Regime(RegimeCase.CRITICAL, critical_ok=p.a2 / p.b**2 > 2.0 * p.gamma - 1.5)


def monotonicity_constant(p: ModelParams, q: float = DEFAULT_Q) -> float:
    """Closed-form one-sided constant L for the strict regime.

    L = a1 + sup_{x>0} ((q-1)/2 b^2 theta^2 x^(2 theta - 2) - a2 gamma x^(gamma - 1)),
    whose maximiser is available explicitly when gamma + 1 > 2 theta.
    """
    if classify_regime(p).case is not RegimeCase.STRICT:
        raise ValueError("monotonicity constant is defined for gamma + 1 > 2 theta only")
    if not q > 2:
        raise ValueError(f"q must exceed 2, got {q!r}")
    gap = p.gamma + 1.0 - 2.0 * p.theta
    k = (q - 1.0) * p.b**2 * p.theta**2
    base = k * (p.theta - 1.0) / (p.a2 * p.gamma * (p.gamma - 1.0))
    return p.a1 + k * gap / (2.0 * (p.gamma - 1.0)) * base ** ((2.0 * p.theta - 2.0) / gap)


def strict_step_bound(p: ModelParams, q: float = DEFAULT_Q) -> float:
    """Upper bound 1/(2L) on the stepsize for the strict-regime rate."""
    return 1.0 / (2.0 * monotonicity_constant(p, q))


def critical_step_bound(p: ModelParams) -> float:
    regime = classify_regime(p)
    if regime.case is not RegimeCase.CRITICAL or not regime.critical_ok:
        raise ValueError("critical step bound requires gamma + 1 = 2 theta and a2/b^2 > 2 gamma - 3/2")
    return 1.0 / (2.0 * p.a1)
