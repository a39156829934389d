"""Two-vehicle platoon: longitudinal plant, safe distance and robust force bound.

State ``x = [v1, v2, d]`` (lead speed, trailing speed, gap).  The trailing
vehicle applies a force ``u`` (N); the lead acceleration ``a1`` and the
road grade ``alpha`` are disturbances.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cbf_core import UncertaintyBox
from .errors import UndefinedStopError

RHO = 1.225
G = 9.81

LEARNABLE = ("m", "AfCd0", "ct")
DISTURBANCES = ("a1", "alpha")


@dataclass(frozen=True)
class AccActual:
    m: float = 5000.0
    AfCd0: float = 4.2
    c1: float = 10.0
    c2: float = 32.0
    ct: float = 0.007
    rho: float = RHO
    g: float = G

    def __post_init__(self):
        if not self.c2 > 0:
            raise ValueError("c2 must be positive")
        if not self.c2 > self.c1:
            raise ValueError("c2 must exceed c1 so the drag factor stays positive for d >= 0")


@dataclass(frozen=True)
class AccNominal:
    m: float = 6500.0
    AfCd0: float = 4.9
    ct: float = 0.006


@dataclass(frozen=True)
class AccUncertainty:
    """Parameter boxes and disturbance ranges.

    Only ``m``, ``AfCd0`` and ``ct`` may be tightened by learning; the
    disturbance ranges describe rare events that recorded data cannot bound.
    """

    m_box: tuple = (4500.0, 8500.0)
    AfCd0_box: tuple = (3.4, 5.6)
    ct_box: tuple = (0.005, 0.007)
    a1_range: tuple = (-9.0, 2.0)
    alpha_range: tuple = (-0.06, 0.06)

    def __post_init__(self):
        for name in ("m_box", "AfCd0_box", "ct_box", "a1_range", "alpha_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo > hi")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def with_learned(self, name: str, lo: float, hi: float) -> "AccUncertainty":
        if name in DISTURBANCES:
            raise PermissionError(f"disturbance range {name!r} is never learned")
        if name not in LEARNABLE:
            raise KeyError(name)
        return replace(self, **{f"{name}_box": (lo, hi)})

    def to_box(self, grid_points_per_axis: int = 21) -> UncertaintyBox:
        return UncertaintyBox((
            ("m", *self.m_box), ("AfCd0", *self.AfCd0_box), ("ct", *self.ct_box),
            ("a1", *self.a1_range), ("alpha", *self.alpha_range),
        ), grid_points_per_axis)

    def contains(self, actual: AccActual) -> bool:
        return (self.m_box[0] <= actual.m <= self.m_box[1]
                and self.AfCd0_box[0] <= actual.AfCd0 <= self.AfCd0_box[1]
                and self.ct_box[0] <= actual.ct <= self.ct_box[1])


@dataclass(frozen=True)
class AccState:
    v1: float
    v2: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v1, self.v2, self.d])


@dataclass(frozen=True)
class BrakeModel:
    mu_lead: float = 0.9
    lead_drag_decel: float = 0.17
    lead_decel: float = 9.0   # mu_lead * g + lead_drag_decel, rounded as in the stopping model
    mu_trail: float = 0.7
    payload_mass: float = 8500.0
    payload_decel: float = 4.0
    v_max: float = 32.0
    p_max: float = 250e3
    v_nom: float = 30.0
    g: float = G

    @property
    def Fb_max(self) -> float:
        return self.payload_mass * self.payload_decel


def drag_factor(d, actual: AccActual):
    """Multiplier on ``Cd0`` at gap ``d``: ``1 - c1 / (c2 + d)``."""
    return 1.0 - actual.c1 / (actual.c2 + np.asarray(d, dtype=float))


def cd_of_d(d, actual: AccActual):
    """Effective ``Af * Cd(d)`` in m^2."""
    out = actual.AfCd0 * drag_factor(d, actual)
    return float(out) if np.ndim(out) == 0 else out


def trailing_derivative(x, u: float, actual: AccActual, a1: float, alpha: float) -> np.ndarray:
    """Platoon dynamics.  Stopped vehicles do not roll backwards."""
    v1, v2, d = x
    dv1 = a1
    drag = actual.rho * v2 * v2 * actual.AfCd0 * (1.0 - actual.c1 / (actual.c2 + d))
    dv2 = -drag / (2.0 * actual.m) - actual.g * actual.ct + u / actual.m - actual.g * alpha
    if v1 <= 0.0 and dv1 < 0.0:
        dv1 = 0.0
    if v2 <= 0.0 and dv2 < 0.0:
        dv2 = 0.0
    return np.array([dv1, dv2, v1 - v2])


def max_decelerations(m, alpha, brakes: BrakeModel):
    """Signed maximum decelerations ``(abar1(alpha), abar2(m, alpha))``."""
    g = brakes.g
    alpha = np.asarray(alpha, dtype=float)
    m = np.asarray(m, dtype=float)
    abar1 = -g * alpha - brakes.lead_decel
    abar2 = -g * alpha - np.minimum(brakes.Fb_max / m, brakes.mu_trail * g)
    return abar1, abar2


def safe_distance(v1, v2, m, alpha, brakes: BrakeModel):
    """Gap at which simultaneous full-braking stops end with zero separation.

    May be negative when the lead stops in a shorter distance than the follower.
    """
    abar1, abar2 = max_decelerations(m, alpha, brakes)
    if np.any(abar1 >= 0) or np.any(abar2 >= 0):
        raise UndefinedStopError("grade too steep: maximum deceleration is not negative")
    out = -np.square(v2) / (2.0 * abar2) + np.square(v1) / (2.0 * abar1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AccGains:
    k1: float
    k2: float
    k3: float = 0.5
    kp: float = 400.0


def s1(x, m, AfCd0, ct, a1, alpha, k1, k2, brakes: BrakeModel, rho: float = RHO):
    """Force bound from the gap barrier ``h1 = d - dmin``.  Broadcasts over parameters."""
    v1, v2, d = x
    g = brakes.g
    dmin = safe_distance(v1, v2, m, alpha, brakes)
    return m * (k1 * (d - dmin) + k2 * (v1 - v2) + rho * v2 * v2 * AfCd0 / (2.0 * m)
                + g * (ct + alpha) + a1)


def s2(x, m, AfCd0, ct, alpha, k3, brakes: BrakeModel, rho: float = RHO):
    """Force bound from the speed barrier ``h2 = v_max - v2``."""
    if not k3 > 0:
        raise ValueError("k3 must be positive")
    v2 = x[1]
    g = brakes.g
    return m * (k3 * (brakes.v_max - v2) + rho * v2 * v2 * AfCd0 / (2.0 * m) + g * (ct + alpha))


M_SWEEP = 129


def robust_force_bound(x, unc: AccUncertainty, gains: AccGains, brakes: BrakeModel,
                       rho: float = RHO, details: bool = False):
    """``min(min_D s1, min_D s2)`` by structured search.

    ``AfCd0``, ``ct`` and ``a1`` enter affinely with non-negative weight, so
    their lower bounds are worst.  Mass is swept on a dense grid because of the
    kink in the braking limit.  The grade enters affinely and through
    ``dmin``; both ends of its range are evaluated.
    """
    m = np.linspace(*unc.m_box, M_SWEEP)[:, None]
    alpha = np.array(unc.alpha_range)[None, :]
    A, c, a1 = unc.AfCd0_box[0], unc.ct_box[0], unc.a1_range[0]
    v1 = s1(x, m, A, c, a1, alpha, gains.k1, gains.k2, brakes, rho)
    v2 = s2(x, m, A, c, alpha, gains.k3, brakes, rho)
    i1 = np.unravel_index(np.argmin(v1), v1.shape)
    i2 = np.unravel_index(np.argmin(v2), v2.shape)
    b1, b2 = float(v1[i1]), float(v2[i2])
    bound = min(b1, b2)
    if not details:
        return bound
    return bound, {
        "s1": b1, "s2": b2,
        "m_worst": float(m[i1[0], 0]), "alpha_worst": float(alpha[0, i1[1]]),
    }


def nominal_force(x, kp: float, AfCd0_nom: float, brakes: BrakeModel, m_nom: float = 6500.0,
                  rho: float = RHO, literal_sign: bool = False) -> float:
    """Feedforward drag cancellation plus proportional gap feedback.

    The feedback regulates toward the nominal-parameter safe distance on a
    flat road.  The result is clamped to the brake floor and the power limit.
    """
    if not kp > 0:
        raise ValueError("kp must be positive")
    v1, v2, d = x
    uff = 0.5 * rho * brakes.v_nom ** 2 * AfCd0_nom
    if literal_sign:
        uff = -uff
    dmin_nom = safe_distance(v1, v2, m_nom, 0.0, brakes)
    u = uff + kp * (d - dmin_nom)
    return float(min(max(u, -brakes.Fb_max), tractive_limit(v2, brakes)))


def tractive_limit(v2: float, brakes: BrakeModel) -> float:
    return brakes.p_max / max(v2, 1.0)


def dmin_worst(v1, v2, unc: AccUncertainty, brakes: BrakeModel) -> float:
    """Largest safe distance over the mass box and grade range."""
    m = np.linspace(*unc.m_box, M_SWEEP)[:, None]
    alpha = np.array(unc.alpha_range)[None, :]
    return float(np.max(safe_distance(v1, v2, m, alpha, brakes)))


def h1_actual(x, actual: AccActual, alpha: float, brakes: BrakeModel) -> float:
    v1, v2, d = x
    return d - safe_distance(v1, v2, actual.m, alpha, brakes)


def gains_from_poles(poles=(-0.5, -1.5), k3: float = 0.5, kp: float = 400.0) -> AccGains:
    p1, p2 = poles
    return AccGains(k1=p1 * p2, k2=-(p1 + p2), k3=k3, kp=kp)

