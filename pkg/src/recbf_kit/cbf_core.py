"""Exponential and robust-exponential control barrier function machinery.

The barrier ``h`` of relative degree ``r`` is lifted to the chain
``eta = [h, h', ..., h^(r-1)]`` with integrator dynamics
``eta' = F eta + G mu`` and output ``h = C eta``.  Choosing a row gain
``k`` whose closed loop ``F - G k`` has real negative poles gives the
exponential lower envelope ``h(t) >= C exp((F - G k) t) eta(0)`` whenever
``mu >= -k eta``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import (
    AssumptionViolation,
    InfeasibleConstraint,
    InvalidBoxError,
    InvalidOrderError,
)

__all__ = [
    "EtaSystem",
    "GainRow",
    "UncertaintyBox",
    "HChain",
    "MembershipReport",
    "companion_system",
    "place_poles",
    "comparison_lower_bound",
    "check_initial_membership",
    "grid_minimize",
    "clamp_to_robust_bound",
]


@dataclass(frozen=True)
class EtaSystem:
    order: int
    F: np.ndarray
    G: np.ndarray
    C: np.ndarray


def companion_system(r: int) -> EtaSystem:
    """Integrator chain of length ``r`` (ones on the superdiagonal)."""
    if int(r) != r or r < 1:
        raise InvalidOrderError(f"relative degree must be a positive integer, got {r!r}")
    r = int(r)
    F = np.eye(r, k=1)
    G = np.zeros((r, 1))
    G[-1, 0] = 1.0
    C = np.zeros((1, r))
    C[0, 0] = 1.0
    return EtaSystem(r, F, G, C)


@dataclass(frozen=True)
class GainRow:
    poles: tuple
    k: np.ndarray

    @property
    def order(self) -> int:
        return len(self.poles)

    def closed_loop(self) -> np.ndarray:
        eta = companion_system(self.order)
        return eta.F - eta.G @ self.k[None, :]


def place_poles(poles: Sequence[float]) -> GainRow:
    """Gain placing the companion closed loop at ``poles``.

    For the companion form ``k[i]`` is the coefficient of ``s**i`` in
    ``prod(s - p)``, e.g. poles (-1, -2) -> s^2 + 3 s + 2 -> k = [2, 3].
    """
    poles = tuple(float(p) for p in poles)
    if len(poles) == 0:
        raise InvalidOrderError("at least one pole is required")
    for p in poles:
        if not np.isfinite(p) or p >= 0.0:
            raise AssumptionViolation(f"pole {p!r} is not real, finite and strictly negative")
    coeffs = np.poly(poles)  # highest power first, leading 1
    k = np.asarray(coeffs[::-1][:-1], dtype=float)
    return GainRow(poles, k)


def comparison_lower_bound(gain: GainRow, eta0, t: float) -> float:
    """``C exp((F - G k) t) eta0``: the guaranteed envelope for ``h(t)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    eta0 = np.asarray(eta0, dtype=float).reshape(-1)
    if eta0.shape[0] != gain.order:
        raise ValueError(f"eta0 has length {eta0.shape[0]}, gain has order {gain.order}")
    # expm is scaling-and-squaring Pade
    return float((expm(gain.closed_loop() * t) @ eta0)[0])


@dataclass(frozen=True)
class UncertaintyBox:
    """Named axis-aligned intervals, gridded uniformly for worst-case search."""

    entries: tuple
    grid_points_per_axis: int = 10

    def __post_init__(self):
        entries = tuple((str(n), float(lo), float(hi)) for n, lo, hi in self.entries)
        object.__setattr__(self, "entries", entries)
        names = [e[0] for e in entries]
        if len(set(names)) != len(names):
            raise InvalidBoxError(f"duplicate names in box: {names}")
        for name, lo, hi in entries:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise InvalidBoxError(f"{name}: bounds must be finite")
            if lo > hi:
                raise InvalidBoxError(f"{name}: lo={lo} > hi={hi}")
        if int(self.grid_points_per_axis) < 1:
            raise InvalidBoxError("grid_points_per_axis must be positive")

    @classmethod
    def from_dict(cls, bounds: Mapping[str, Sequence[float]], grid_points_per_axis: int = 10):
        return cls(tuple((n, b[0], b[1]) for n, b in bounds.items()), grid_points_per_axis)

    @property
    def names(self) -> tuple:
        return tuple(e[0] for e in self.entries)

    @property
    def lo(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    @property
    def hi(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries])

    def __contains__(self, name):
        return name in self.names

    def interval(self, name: str) -> tuple:
        for n, lo, hi in self.entries:
            if n == name:
                return lo, hi
        raise KeyError(name)

    def with_interval(self, name: str, lo: float, hi: float) -> "UncertaintyBox":
        if name not in self.names:
            raise KeyError(name)
        entries = tuple((n, lo, hi) if n == name else (n, a, b) for n, a, b in self.entries)
        return UncertaintyBox(entries, self.grid_points_per_axis)

    def contains_point(self, point: Mapping[str, float], atol: float = 0.0) -> bool:
        return all(lo - atol <= point[n] <= hi + atol for n, lo, hi in self.entries)

    def axes(self) -> list:
        n = int(self.grid_points_per_axis)
        return [np.linspace(lo, hi, n) for _, lo, hi in self.entries]

    def grid(self) -> np.ndarray:
        """All grid points, shape (n**k, k), in lexicographic index order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*[(lo, hi) for _, lo, hi in self.entries])))


@dataclass(frozen=True)
class HChain:
    """Barrier ``h`` and its time derivatives along the plant.

    ``lower[j](x, d)`` evaluates ``h^(j)`` for ``j < r``; ``top(x, u, d)``
    evaluates ``h^(r)``, the first derivative in which the input appears.
    ``d`` is a mapping from parameter name to value.
    """

    order: int
    lower: tuple
    top: Callable

    def __post_init__(self):
        if len(self.lower) != self.order:
            raise InvalidOrderError(f"expected {self.order} lower evaluators, got {len(self.lower)}")

    def eta(self, x, d) -> np.ndarray:
        return np.array([float(f(x, d)) for f in self.lower])


@dataclass
class MembershipReport:
    ok: bool
    violations: list = field(default_factory=list)  # (i, d-dict, nu_i)
    min_nu: np.ndarray | None = None


def _nu_values(chain: HChain, gain: GainRow, x0, d, u0) -> np.ndarray:
    derivs = [float(f(x0, d)) for f in chain.lower]
    derivs.append(float(chain.top(x0, u0, d)))
    nu = np.empty(chain.order + 1)
    for i in range(chain.order + 1):
        # nu_i = prod_{j<=i} (D - p_j) h, coefficients lowest power first
        c = np.poly(gain.poles[:i])[::-1] if i else np.array([1.0])
        nu[i] = float(np.dot(c, derivs[: i + 1]))
    return nu


def check_initial_membership(chain: HChain, x0, gain: GainRow, box: UncertaintyBox,
                             u0: float = 0.0, atol: float = 0.0) -> MembershipReport:
    """Verify ``nu_i(x0, d) >= 0`` for i = 0..r on every grid point of ``box``.

    ``nu_r`` contains ``h^(r)`` and hence the input; it is evaluated at ``u0``.
    """
    if chain.order != gain.order:
        raise InvalidOrderError(f"chain order {chain.order} != gain order {gain.order}")
    names = box.names
    min_nu = np.full(chain.order + 1, np.inf)
    violations = []
    points = box.grid() if names else np.zeros((1, 0))
    for point in points:
        d = dict(zip(names, point))
        nu = _nu_values(chain, gain, x0, d, u0)
        min_nu = np.minimum(min_nu, nu)
        for i, v in enumerate(nu):
            if v < -atol:
                violations.append((i, d, float(v)))
    return MembershipReport(not violations, violations, min_nu)


def grid_minimize(f: Callable, box: UncertaintyBox, vectorized: bool = False):
    """Minimize ``f`` over the uniform grid on ``box``.

    Returns ``(d_min, value)``.  Ties go to the lexicographically smallest
    grid index.  When ``vectorized`` is set, ``f`` receives the whole
    (n**k, k) grid at once and must return n**k values.
    """
    for name, lo, hi in box.entries:
        if lo > hi:
            raise InvalidBoxError(f"{name}: lo={lo} > hi={hi}")
    points = box.grid()
    if vectorized:
        values = np.asarray(f(points), dtype=float).reshape(-1)
        if values.shape[0] != points.shape[0]:
            raise ValueError("vectorized objective returned the wrong number of values")
    else:
        values = np.array([float(f(p)) for p in points])
    i = int(np.argmin(values))  # first occurrence
    return points[i].copy(), float(values[i])


def clamp_to_robust_bound(u_nominal: float, u_max: float, u_floor: float | None = None) -> float:
    """Min-norm correction of a scalar input under one upper-bound constraint."""
    if not np.isfinite(u_max):
        raise ValueError("u_max must be finite")
    if u_floor is not None and u_floor > u_max:
        raise InfeasibleConstraint(u_floor, u_max)
    u = min(u_nominal, u_max)
    if u_floor is not None:
        u = max(u, u_floor)
    return float(u)
