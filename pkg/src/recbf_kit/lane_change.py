"""Lateral bicycle model, its barrier chain and the robust steering bound.

State ``x = [ydot, psidot, psi, Y, phi]`` (m/s, rad/s, rad, m, rad); input
``phi_r`` (rad) drives a first-order steering lag.  Uncertain multipliers
``dm, dI, delta1, delta2, delta3`` scale mass, yaw inertia, front-axle
position, cornering stiffness and steering bandwidth.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.linalg import solve_continuous_are

from .cbf_core import GainRow, HChain, UncertaintyBox, grid_minimize
from .errors import DegenerateParameterError, NumericError

STATE_NAMES = ("ydot", "psidot", "psi", "Y", "phi")
STATE_UNITS = ("mps", "radps", "rad", "m", "rad")
DELTA_NAMES = ("dm", "dI", "delta1", "delta2", "delta3")


@dataclass(frozen=True)
class LaneNominal:
    mn: float = 6500.0      # kg
    dn: float = 4.8         # m^2, I_z = dn * m * dI
    l: float = 4.5          # m, wheelbase
    an: float = 0.55        # front-axle fraction of wheelbase
    cn: float = 8.0         # 1/rad, cornering stiffness per unit axle weight
    lambdan: float = 8.0    # 1/s, steering lag
    v0: float = 30.0        # m/s
    Ymax: float = 3.85      # m
    Yref: float = 3.7       # m
    g: float = 9.81

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be strictly positive")
        if not self.Yref < self.Ymax:
            raise ValueError("Yref must be below Ymax")


@dataclass(frozen=True)
class DeltaVector:
    dm: float = 1.0
    dI: float = 1.0
    delta1: float = 1.0
    delta2: float = 1.0
    delta3: float = 1.0

    @classmethod
    def from_mapping(cls, d) -> "DeltaVector":
        return cls(**{k: float(d[k]) for k in DELTA_NAMES if k in d})

    def as_dict(self) -> dict:
        return asdict(self)

    def inside(self, box: UncertaintyBox, atol: float = 1e-12) -> bool:
        values = self.as_dict()
        return all(lo - atol <= values[n] <= hi + atol for n, lo, hi in box.entries if n in values)


# test vehicles with perturbed parameters
NOMINAL_VEHICLE = DeltaVector()
VEHICLE_1 = DeltaVector(dm=0.80, dI=1.15, delta1=0.70, delta2=0.60, delta3=1.35)
VEHICLE_2 = DeltaVector(dm=1.20, dI=1.05, delta1=1.35, delta2=1.35, delta3=1.35)
VEHICLES = {"nominal": NOMINAL_VEHICLE, "vehicle1": VEHICLE_1, "vehicle2": VEHICLE_2}


def initial_lane_box(grid_points_per_axis: int = 10) -> UncertaintyBox:
    return UncertaintyBox(
        (("dm", 0.7, 1.3), ("dI", 0.7, 1.3),
         ("delta1", 0.6, 1.4), ("delta2", 0.6, 1.4), ("delta3", 0.6, 1.4)),
        grid_points_per_axis,
    )


@dataclass(frozen=True)
class LaneMatrices:
    """Non-zero entries of A and B.  Fields may be arrays (broadcast over d)."""

    a11: float
    a12: float
    a15: float
    a21: float
    a22: float
    a25: float
    a55: float
    b51: float

    def A(self, v0: float) -> np.ndarray:
        return np.array([
            [self.a11, self.a12, 0.0, 0.0, self.a15],
            [self.a21, self.a22, 0.0, 0.0, self.a25],
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, v0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, self.a55],
        ])

    def B(self) -> np.ndarray:
        return np.array([0.0, 0.0, 0.0, 0.0, self.b51])


def _coefficients(nom: LaneNominal, dI, delta1, delta2, delta3):
    v0, g, l = nom.v0, nom.g, nom.l
    c_alpha = nom.cn * delta2
    front = nom.an * delta1            # l_f / l
    rear = 1.0 - front                 # l_r / l
    a11 = -c_alpha * g / v0
    a15 = c_alpha * g * rear
    # C_f l_f^2 + C_r l_r^2 = C_alpha m g l_f l_r, and I_z = dn m dI
    a22 = -c_alpha * g * l * l * front * rear / (nom.dn * dI * v0)
    a25 = c_alpha * g * l * front * rear / (nom.dn * dI)
    a55 = -nom.lambdan * delta3
    return a11, a15, a22, a25, a55


def lane_matrices(nom: LaneNominal, d: DeltaVector) -> LaneMatrices:
    if not nom.v0 > 0:
        raise ValueError("v0 must be positive")
    a11, a15, a22, a25, a55 = _coefficients(nom, d.dI, d.delta1, d.delta2, d.delta3)
    zero = 0.0 * a11
    return LaneMatrices(a11=a11, a12=-nom.v0 + zero, a15=a15, a21=zero, a22=a22,
                        a25=a25, a55=a55, b51=-a55)


def lane_derivative(x, phi_r: float, M: LaneMatrices, v0: float) -> np.ndarray:
    ydot, psidot, psi, _Y, phi = x
    return np.array([
        M.a11 * ydot + M.a12 * psidot + M.a15 * phi,
        M.a21 * ydot + M.a22 * psidot + M.a25 * phi,
        psidot,
        ydot + v0 * psi,
        M.a55 * phi + M.b51 * phi_r,
    ])


def h_chain_lane(nom: LaneNominal, M: LaneMatrices | None = None) -> HChain:
    """Third-order chain of ``h = Ymax - Y``.

    With ``M`` given the chain is evaluated at those matrices and ``d`` is
    ignored; otherwise ``d`` (a mapping of delta names) selects the matrices.
    """
    v0, Ymax = nom.v0, nom.Ymax

    def mats(d):
        if M is not None:
            return M
        return lane_matrices(nom, DeltaVector.from_mapping(d or {}))

    def h0(x, d):
        return Ymax - x[3]

    def h1(x, d):
        return -x[0] - v0 * x[2]

    def h2(x, d):
        m = mats(d)
        return -m.a11 * x[0] - m.a15 * x[4]

    def h3(x, u, d):
        m = mats(d)
        return (-m.a11 ** 2 * x[0] + m.a11 * v0 * x[1]
                - m.a15 * (m.a11 + m.a55) * x[4] - m.a15 * m.b51 * u)

    return HChain(3, (h0, h1, h2), h3)


def _s_lane_arrays(x, delta1, delta2, delta3, k, nom: LaneNominal):
    ydot, psidot, psi, Y, phi = x
    k1, k2, k3 = k
    v0 = nom.v0
    a11, a15, _, _, a55 = _coefficients(nom, 1.0, delta1, delta2, delta3)
    b51 = -a55
    den = a15 * b51
    num = (k1 * nom.Ymax - (k2 + a11 * k3 + a11 ** 2) * ydot + a11 * v0 * psidot
           - k2 * v0 * psi - k1 * Y - a15 * (k3 + a11 + a55) * phi)
    return num, den


def s_lane(x, d: DeltaVector, gain: GainRow, nom: LaneNominal) -> float:
    """Largest ``phi_r`` satisfying the exponential barrier condition at ``d``."""
    if gain.order != 3:
        raise ValueError("lane-change barrier has relative degree 3")
    num, den = _s_lane_arrays(x, d.delta1, d.delta2, d.delta3, gain.k, nom)
    if den == 0:
        raise DegenerateParameterError("a15 * b51 vanishes for this parameter vector")
    return float(num / den)


ROBUST_AXES = ("delta1", "delta2", "delta3")


def steer_box(box: UncertaintyBox) -> UncertaintyBox:
    """Restriction of ``box`` to the deltas that enter the steering bound."""
    return UncertaintyBox(tuple(e for e in box.entries if e[0] in ROBUST_AXES),
                          box.grid_points_per_axis)


def robust_steer_bound(x, box: UncertaintyBox, gain: GainRow, nom: LaneNominal):
    """Grid minimum of ``s_lane`` over the (delta1, delta2, delta3) box.

    Returns ``(bound, d_worst)`` with ``d_worst`` ordered as ``ROBUST_AXES``.
    """
    sub = steer_box(box)
    if sub.names != ROBUST_AXES:
        raise ValueError(f"box must contain {ROBUST_AXES}")

    def f(points):
        num, den = _s_lane_arrays(x, points[:, 0], points[:, 1], points[:, 2], gain.k, nom)
        if np.any(den <= 0):
            raise DegenerateParameterError("a15 * b51 is not positive on the box")
        return num / den

    return grid_minimize(f, sub, vectorized=True)


def lqr_nominal_gain(nom: LaneNominal, Q, R: float) -> np.ndarray:
    """Continuous-time infinite-horizon LQR gain at the nominal parameters."""
    M = lane_matrices(nom, NOMINAL_VEHICLE)
    A = M.A(nom.v0)
    B = M.B()[:, None]
    Q = np.diag(Q) if np.ndim(Q) == 1 else np.asarray(Q, dtype=float)
    R = float(R)
    if not R > 0:
        raise ValueError("R must be positive")
    try:
        P = solve_continuous_are(A, B, Q, np.array([[R]]))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"Riccati solve failed: {exc}") from exc
    residual = A.T @ P + P @ A - P @ B @ B.T @ P / R + Q
    if not np.all(np.isfinite(P)) or np.abs(residual).max() > 1e-6 * max(1.0, np.abs(P).max()):
        raise NumericError("Riccati solution did not converge")
    return (B.T @ P / R).reshape(-1)


def nominal_steer(x, K, xref, sat: float = 0.08) -> float:
    if not sat > 0:
        raise ValueError("sat must be positive")
    u = float(np.dot(K, np.asarray(xref, dtype=float) - np.asarray(x, dtype=float)))
    return float(np.clip(u, -sat, sat))
