"""Maximum-likelihood identification of uncertain parameters.

Measurements ``z[n] = y(inputs[n], theta) + w[n]`` with independent
Gaussian noise of known diagonal covariance.  The negative log-likelihood
reduces (up to a constant) to the weighted least-squares cost

    J(theta) = 1/2 sum_n (z[n] - y[n])^T Sigma_w^-1 (z[n] - y[n])

which is minimized by descent along the gradient; the inverse Fisher
information at the optimum gives the parameter covariance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from .cbf_core import UncertaintyBox
from .errors import ConfigError, UnidentifiableError
from .lane_change import LaneNominal, _coefficients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObservationSet:
    inputs: np.ndarray      # (N, p)
    z: np.ndarray           # (N, ny)
    sigma_w: np.ndarray     # (ny,) noise variances

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        sigma_w = np.atleast_1d(np.asarray(self.sigma_w, dtype=float))
        if inputs.shape[0] != z.shape[0]:
            raise ValueError("inputs and z must have the same number of samples")
        if sigma_w.shape != (z.shape[1],):
            raise ValueError(f"sigma_w must have {z.shape[1]} diagonal entries")
        if np.any(sigma_w <= 0):
            raise ValueError("noise variances must be positive")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "sigma_w", sigma_w)

    def __len__(self):
        return self.z.shape[0]

    def concat(self, other: "ObservationSet") -> "ObservationSet":
        if not np.array_equal(self.sigma_w, other.sigma_w):
            raise ValueError("noise covariances differ")
        return ObservationSet(np.vstack([self.inputs, other.inputs]),
                              np.vstack([self.z, other.z]), self.sigma_w)


@dataclass(frozen=True)
class ModelMap:
    """Output map ``y(inputs, theta) -> (N, ny)`` and optional Jacobian ``(N, ny, k)``."""

    output: Callable
    names: tuple
    jacobian: Callable | None = None

    @property
    def dim(self) -> int:
        return len(self.names)

    def predict(self, inputs, theta) -> np.ndarray:
        y = np.asarray(self.output(inputs, np.asarray(theta, dtype=float)), dtype=float)
        return y[:, None] if y.ndim == 1 else y

    def jac(self, inputs, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.jacobian is not None:
            J = np.asarray(self.jacobian(inputs, theta), dtype=float)
            return J[:, None, :] if J.ndim == 2 else J
        return finite_difference_jacobian(self, inputs, theta)


def finite_difference_jacobian(model: ModelMap, inputs, theta, rel_step: float = 1e-6) -> np.ndarray:
    cols = []
    for i in range(theta.size):
        h = rel_step * max(abs(theta[i]), 1.0)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        cols.append((model.predict(inputs, tp) - model.predict(inputs, tm)) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass
class FitResult:
    names: tuple
    theta_hat: np.ndarray
    P: np.ndarray
    iterations: int
    converged: bool
    cost: float = float("nan")
    message: str = ""

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.P), 0.0, None))

    def get(self, name: str) -> tuple:
        i = self.names.index(name)
        return float(self.theta_hat[i]), float(self.sigma[i])


def residual_cost(theta, obs: ObservationSet, model: ModelMap) -> float:
    r = obs.z - model.predict(obs.inputs, theta)
    return 0.5 * float(np.sum(r * r / obs.sigma_w))


def cost_gradient(theta, obs: ObservationSet, model: ModelMap) -> np.ndarray:
    r = obs.z - model.predict(obs.inputs, theta)
    J = model.jac(obs.inputs, theta)
    return -np.einsum("ny,nyk->k", r / obs.sigma_w, J)


def information_matrix(theta, obs: ObservationSet, model: ModelMap) -> np.ndarray:
    J = model.jac(obs.inputs, theta)
    return np.einsum("nyk,ny,nyl->kl", J, 1.0 / np.broadcast_to(obs.sigma_w, J.shape[:2]), J)


def fisher_covariance(theta_hat, obs: ObservationSet, model: ModelMap) -> np.ndarray:
    """Inverse of the accumulated Fisher information."""
    info = information_matrix(theta_hat, obs, model)
    info = 0.5 * (info + info.T)
    w, V = np.linalg.eigh(info)
    if w[-1] <= 0 or w[0] <= w[-1] * 1e3 * np.finfo(float).eps:
        direction = V[:, 0]
        named = ", ".join(f"{n}:{c:+.3f}" for n, c in zip(model.names, direction))
        raise UnidentifiableError(f"information matrix is singular along ({named})", direction)
    P = (V / w) @ V.T
    return 0.5 * (P + P.T)


def fit(obs: ObservationSet, model: ModelMap, theta0, max_iter: int = 10000,
        gtol: float = 1e-8, precondition: bool = True) -> FitResult:
    """Minimize the weighted least-squares cost by gradient descent.

    Each step moves along the negative gradient, scaled by the inverse
    information matrix when ``precondition`` is set (this keeps parameters
    of very different magnitude, e.g. kg and rolling coefficients, on the
    same footing), with Armijo backtracking.  Convergence is declared when
    the gradient infinity-norm drops below ``gtol`` or when the predicted
    decrease of a full step is below round-off.
    """
    theta = np.array(theta0, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    cost = residual_cost(theta, obs, model)
    converged = False
    message = "iteration limit"
    it = 0
    for it in range(1, max_iter + 1):
        g = cost_gradient(theta, obs, model)
        if np.max(np.abs(g)) < gtol:
            converged, message = True, "gradient tolerance"
            break
        if precondition:
            info = information_matrix(theta, obs, model)
            try:
                step = -np.linalg.solve(info + 1e-12 * np.trace(info) * np.eye(len(g)) / len(g), g)
            except np.linalg.LinAlgError:
                step = -g
        else:
            step = -g
        decrease = -float(g @ step)
        if decrease <= 64 * np.finfo(float).eps * max(1.0, cost):
            converged, message = True, "decrement below round-off"
            break
        t = 1.0
        while True:
            trial = theta + t * step
            c_trial = residual_cost(trial, obs, model)
            if np.isfinite(c_trial) and c_trial <= cost - 1e-4 * t * decrease:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            message = "line search failed: cost does not decrease"
            log.warning("fit stopped at iteration %d: %s", it, message)
            break
        theta, cost = trial, c_trial
    try:
        P = fisher_covariance(theta, obs, model)
    except UnidentifiableError:
        P = np.full((len(theta), len(theta)), np.inf)
        converged = False
        message = "information matrix singular"
    return FitResult(tuple(model.names), theta, P, it, converged, cost, message)


@dataclass
class BoxUpdate:
    name: str
    old: tuple
    new: tuple
    mu: float
    sigma: float
    accepted: bool
    reason: str = ""


def update_box(box: UncertaintyBox, name: str, fit_result: FitResult, k: float = 3.0,
               initial: UncertaintyBox | None = None, max_sigma: float | None = None,
               max_rel_sigma: float | None = None):
    """Tighten one interval of ``box`` to ``mu +/- k sigma``.

    The new interval is intersected with ``initial`` (never widened beyond
    the conservative prior).  Returns ``(new_box, BoxUpdate)``; rejected
    updates return ``box`` unchanged.
    """
    old = box.interval(name)
    mu, sigma = fit_result.get(name)

    def reject(reason):
        log.info("box update for %s rejected: %s", name, reason)
        return box, BoxUpdate(name, old, old, mu, sigma, False, reason)

    if not fit_result.converged:
        return reject("fit did not converge")
    if not np.isfinite(sigma):
        return reject("sigma not finite")
    if max_sigma is not None and sigma > max_sigma:
        return reject(f"sigma {sigma:.4g} above gate {max_sigma:.4g}")
    if max_rel_sigma is not None and sigma > max_rel_sigma * abs(mu):
        return reject(f"relative sigma {sigma / abs(mu):.4g} above gate {max_rel_sigma:.4g}")
    lo, hi = mu - k * sigma, mu + k * sigma
    if initial is not None and name in initial:
        ilo, ihi = initial.interval(name)
        if not ilo <= mu <= ihi:
            return reject("model mismatch: estimate outside the initial box")
        lo, hi = max(lo, ilo), min(hi, ihi)
    return box.with_interval(name, lo, hi), BoxUpdate(name, old, (lo, hi), mu, sigma, True)


# -- scenario measurement models ---------------------------------------------

LANE_PARAMS = ("dI", "delta1", "delta2", "delta3")
LANE_SIGMA_W = np.full(5, 0.1 ** 2)


def lane_change_model(nom: LaneNominal) -> ModelMap:
    """Full state derivative of the bicycle model.

    Input rows are ``[ydot, psidot, psi, Y, phi, phi_r]``.
    """
    v0, g, l, an, cn, dn, lam = nom.v0, nom.g, nom.l, nom.an, nom.cn, nom.dn, nom.lambdan

    def output(inp, theta):
        dI, d1, d2, d3 = theta
        a11, a15, a22, a25, a55 = _coefficients(nom, dI, d1, d2, d3)
        ydot, psidot, psi, _Y, phi, phir = inp.T
        return np.stack([
            a11 * ydot - v0 * psidot + a15 * phi,
            a22 * psidot + a25 * phi,
            psidot,
            ydot + v0 * psi,
            a55 * phi - a55 * phir,
        ], axis=1)

    def jacobian(inp, theta):
        dI, d1, d2, d3 = theta
        ydot, psidot, psi, _Y, phi, phir = inp.T
        front = an * d1
        q = front * (1.0 - front)          # l_f l_r / l^2
        dq = an * (1.0 - 2.0 * front)      # dq/d delta1
        # partial derivatives of the composites
        a11_d2 = -cn * g / v0
        a15_d1 = -cn * d2 * g * an
        a15_d2 = cn * g * (1.0 - front)
        c22 = -cn * g * l * l / (dn * v0)
        a22_dI = -c22 * d2 * q / dI ** 2
        a22_d1 = c22 * d2 * dq / dI
        a22_d2 = c22 * q / dI
        c25 = cn * g * l / dn
        a25_dI = -c25 * d2 * q / dI ** 2
        a25_d1 = c25 * d2 * dq / dI
        a25_d2 = c25 * q / dI
        a55_d3 = -lam
        N = inp.shape[0]
        J = np.zeros((N, 5, 4))
        J[:, 0, 1] = a15_d1 * phi
        J[:, 0, 2] = a11_d2 * ydot + a15_d2 * phi
        J[:, 1, 0] = a22_dI * psidot + a25_dI * phi
        J[:, 1, 1] = a22_d1 * psidot + a25_d1 * phi
        J[:, 1, 2] = a22_d2 * psidot + a25_d2 * phi
        J[:, 4, 3] = a55_d3 * (phi - phir)
        return J

    return ModelMap(output, LANE_PARAMS, jacobian)


ACC_PARAMS = ("m", "AfCd0", "ct")
ACC_SIGMA_W = np.array([0.05 ** 2])


def acc_model(rho: float = 1.225, g: float = 9.81) -> ModelMap:
    """Trailing-vehicle acceleration net of grade.  Input rows are ``[v2, u]``."""

    def output(inp, theta):
        m, A, ct = theta
        v2, u = inp[:, 0], inp[:, 1]
        return (-rho * v2 * v2 * A / (2.0 * m) - g * ct + u / m)[:, None]

    def jacobian(inp, theta):
        m, A, ct = theta
        v2, u = inp[:, 0], inp[:, 1]
        J = np.empty((inp.shape[0], 1, 3))
        J[:, 0, 0] = (rho * v2 * v2 * A / 2.0 - u) / m ** 2
        J[:, 0, 1] = -rho * v2 * v2 / (2.0 * m)
        J[:, 0, 2] = -g
        return J

    return ModelMap(output, ACC_PARAMS, jacobian)


def fit_report_rows(fit_result: FitResult, updates: Sequence[BoxUpdate] = (), actual=None) -> list:
    by_name = {u.name: u for u in updates}
    rows = []
    for i, name in enumerate(fit_result.names):
        upd = by_name.get(name)
        rows.append({
            "name": name,
            "actual": None if actual is None else actual.get(name),
            "mu": float(fit_result.theta_hat[i]),
            "sigma": float(fit_result.sigma[i]),
            "accepted": None if upd is None else upd.accepted,
            "lo": None if upd is None else upd.new[0],
            "hi": None if upd is None else upd.new[1],
        })
    return rows


def write_report(rows, path) -> None:
    Path(path).write_text(yaml.safe_dump(list(rows), sort_keys=False))


# -- dataset files -------------------------------------------------------------

LANE_INPUT_COLUMNS = ("ydot_mps", "psidot_radps", "psi_rad", "Y_m", "phi_rad", "phi_r_rad")
LANE_OUTPUT_COLUMNS = ("z_ydot_mps2", "z_psidot_radps2", "z_psi_radps", "z_Y_mps", "z_phi_radps")
ACC_INPUT_COLUMNS = ("v2_mps", "u_N")
ACC_OUTPUT_COLUMNS = ("z_mps2",)


def save_dataset(obs: ObservationSet, path, input_columns, output_columns) -> None:
    """One row per sample, preceded by a ``# sigma_w=`` comment line with the noise variances."""
    if obs.inputs.shape[1] != len(input_columns) or obs.z.shape[1] != len(output_columns):
        raise ValueError("column names do not match the observation shape")
    head = "# sigma_w=" + ";".join(repr(float(v)) for v in obs.sigma_w)
    lines = [head, ",".join((*input_columns, *output_columns))]
    for row in np.hstack([obs.inputs, obs.z]):
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, input_columns, output_columns) -> ObservationSet:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# sigma_w="):
        raise ConfigError(f"{path}: missing '# sigma_w=' header")
    sigma_w = np.array([float(v) for v in lines[0].split("=", 1)[1].split(";")])
    header = tuple(lines[1].split(","))
    if header != (*input_columns, *output_columns):
        raise ConfigError(f"{path}: expected columns {(*input_columns, *output_columns)}, got {header}")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]]).reshape(-1, len(header))
    p = len(input_columns)
    return ObservationSet(data[:, :p], data[:, p:], sigma_w)
