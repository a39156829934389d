"""Seeded closed-loop simulation of the two vehicle scenarios.

Plants are integrated with classical RK4 at ``dt_sim``; controllers and
safety filters run every ``control_period`` and their outputs are held in
between.  Disturbances (lead acceleration, road grade) are sampled at the
controller ticks and held as well.  Every random draw comes from a
Philox counter-based generator keyed by ``(seed, stream)``.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acc as accm
from . import lane_change as lc
from .cbf_core import (
    UncertaintyBox,
    check_initial_membership,
    clamp_to_robust_bound,
    place_poles,
)
from .errors import ConfigError, InfeasibleConstraint, SimulationAbort
from .sysid import (
    LANE_PARAMS,
    BoxUpdate,
    FitResult,
    ObservationSet,
    acc_model,
    fit,
    lane_change_model,
    update_box,
)

log = logging.getLogger(__name__)

# Philox key word 1; word 0 is the user seed.
STREAMS = {"lane-noise": 1, "acc-noise": 2, "road": 3}


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for one named noise channel."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, STREAMS[stream]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def rk4_step(f, x, u, dt: float, t: float | None = None):
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(k4))):
        raise SimulationAbort("non-finite state derivative", t)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def inject_noise(y, sigma_w, rng: np.random.Generator):
    """``y + w`` with ``w ~ N(0, diag(sigma_w))``; ``sigma_w`` holds variances."""
    y = np.asarray(y, dtype=float)
    var = np.asarray(sigma_w, dtype=float)
    if var.ndim == 2:
        var = np.diag(var)
    std = np.sqrt(np.broadcast_to(var, y.shape))
    return y + std * rng.standard_normal(y.shape)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    mu: float
    sigma: float

    def pdf(self, x):
        if self.sigma == 0:
            return np.where(np.asarray(x) == self.mu, np.inf, 0.0)
        return np.exp(-0.5 * ((x - self.mu) / self.sigma) ** 2) / (self.sigma * np.sqrt(2 * np.pi))


def histogram(series, bins: int = 25) -> Histogram:
    """Equal-width histogram over the data range with a moment-matched normal."""
    data = np.asarray(series, dtype=float).reshape(-1)
    if data.size == 0:
        raise ValueError("empty series")
    counts, edges = np.histogram(data, bins=bins)
    return Histogram(edges, counts, float(data.mean()), float(data.std()))


# -- traces -------------------------------------------------------------------

@dataclass
class Trace:
    columns: tuple
    data: np.ndarray

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        lines = [",".join(self.columns)]
        lines += [",".join(repr(float(v)) for v in row) for row in self.data]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        text = Path(path).read_text().splitlines()
        columns = tuple(text[0].split(","))
        data = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line])
        return cls(columns, data.reshape(-1, len(columns)))


class _TraceBuilder:
    def __init__(self, columns):
        self.columns = tuple(columns)
        self.rows = []

    def add(self, *values):
        self.rows.append(values)

    def build(self) -> Trace:
        return Trace(self.columns, np.array(self.rows, dtype=float).reshape(-1, len(self.columns)))


# -- road and lead vehicle ------------------------------------------------------

MAX_GRADE = 0.06


@dataclass
class RoadProfile:
    t: np.ndarray
    grade: np.ndarray
    provenance: str = "synthetic"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.grade = np.asarray(self.grade, dtype=float)
        if self.t.ndim != 1 or self.t.shape != self.grade.shape or self.t.size < 2:
            raise ValueError("road profile needs matching 1-D t and grade arrays")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("road profile times must be strictly increasing")
        if np.any(np.abs(self.grade) > MAX_GRADE + 1e-12):
            raise ValueError(f"grade outside [-{MAX_GRADE}, {MAX_GRADE}]")

    def __call__(self, t):
        return np.interp(t, self.t, self.grade)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def to_csv(self, path) -> None:
        lines = ["t_s,grade_rad"] + [f"{a!r},{b!r}" for a, b in zip(self.t.tolist(), self.grade.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RoadProfile":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != "t_s,grade_rad":
            raise ConfigError(f"{path}: expected header 't_s,grade_rad'")
        rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()])
        return cls(rows[:, 0], rows[:, 1], provenance=f"csv:{path}")

    @classmethod
    def constant(cls, grade: float, horizon: float) -> "RoadProfile":
        return cls(np.array([0.0, horizon]), np.array([grade, grade]), provenance=f"constant:{grade}")


ROAD_AMPLITUDES = (0.02, 0.02, 0.02)
ROAD_PERIODS = (45.0, 20.0, 8.0)


def synthesize_road(seed: int, horizon: float, dt: float = 0.5) -> RoadProfile:
    """Three cosines aligned to reach the -6 % trough at a seeded time.

    ``grade(t) = -sum a_i cos(2 pi (t - t_low) / T_i)`` with amplitudes summing
    to 0.06, so ``|grade| <= 0.06`` and ``grade(t_low) = -0.06``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = make_rng(seed, "road")
    n = int(np.ceil(horizon / dt))
    t = np.arange(n + 1) * dt
    t_low = t[int(rng.integers(int(0.1 * n), max(int(0.9 * n), int(0.1 * n) + 1)))]
    grade = np.zeros_like(t)
    for a, period in zip(ROAD_AMPLITUDES, ROAD_PERIODS):
        grade -= a * np.cos(2.0 * np.pi * (t - t_low) / period)
    grade = np.clip(grade, -MAX_GRADE, MAX_GRADE)
    return RoadProfile(t, grade, provenance=f"synthetic:{seed}")


@dataclass(frozen=True)
class LeadConfig:
    target: float = 30.0
    v0: float = 30.0
    mass: float = 5000.0
    AfCd0: float = 4.2
    ct: float = 0.007
    kp: float = 2000.0
    ki: float = 50.0
    kd: float = 0.0
    a_min: float = -9.0
    a_max: float = 2.0
    emergency_time: float = -1.0   # negative disables the scripted full-brake event


@dataclass
class LeadProfile:
    t: np.ndarray
    v1: np.ndarray
    a1: np.ndarray


def leading_vehicle_profile(road: RoadProfile, lead: LeadConfig, horizon: float,
                            control_period: float = 0.01) -> LeadProfile:
    """Lead speed from a PID cruise controller on the given road.

    The acceleration is clamped to ``[a_min, a_max]``; the integrator freezes
    while the command saturates.  Acceleration is held between ticks, so the
    speed is exactly piecewise linear.
    """
    if horizon > road.horizon + 1e-9:
        raise ValueError("road profile shorter than the horizon")
    n = int(round(horizon / control_period))
    t = np.arange(n + 1) * control_period
    v1 = np.empty(n + 1)
    a1 = np.empty(n + 1)
    v, integ, e_prev = lead.v0, 0.0, lead.target - lead.v0
    g, rho = accm.G, accm.RHO
    for k in range(n + 1):
        alpha = float(road(t[k]))
        v1[k] = v
        if 0 <= lead.emergency_time <= t[k]:
            a = max(lead.a_min, -v / control_period) if v > 0 else 0.0
        else:
            e = lead.target - v
            force = lead.kp * e + lead.ki * integ + lead.kd * (e - e_prev) / control_period
            e_prev = e
            resist = (0.5 * rho * v * v * lead.AfCd0 + lead.mass * g * lead.ct) / lead.mass
            a_cmd = force / lead.mass - resist - g * alpha
            a = min(max(a_cmd, lead.a_min), lead.a_max)
            if a == a_cmd or (a_cmd > a) != (e > 0):
                integ += e * control_period
        a1[k] = a
        v = max(v + a * control_period, 0.0)
    return LeadProfile(t, v1, a1)


# -- events -------------------------------------------------------------------

ACTIONS = ("update-bounds", "reset-bounds", "switch-reference")


def parse_events(specs, horizon: float) -> list:
    events = []
    for spec in specs:
        try:
            time_s, action = str(spec).split(":", 1)
            time = float(time_s)
        except ValueError as exc:
            raise ConfigError(f"event {spec!r} is not 'time:action'") from exc
        action = action.strip()
        if action not in ACTIONS:
            raise ConfigError(f"event action {action!r} not in {ACTIONS}")
        if not 0 <= time <= horizon:
            raise ConfigError(f"event time {time} outside [0, {horizon}]")
        events.append((time, action))
    return sorted(events, key=lambda e: e[0])


def _check_rates(dt_sim, control_period, duration):
    ratio = control_period / dt_sim
    if not dt_sim > 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError("control_period must be a positive integer multiple of dt_sim")
    if not duration > 0:
        raise ConfigError("duration must be positive")
    return int(round(ratio)), int(round(duration / control_period))


# -- lane change ---------------------------------------------------------------

LANE_MODES = ("ecbf", "recbf", "lrecbf", "lrecbf-stale")


def _default_lane_box():
    return {n: (lo, hi) for n, lo, hi in lc.initial_lane_box().entries}


@dataclass(frozen=True)
class LaneConfig:
    label: str = "vehicle1"
    mode: str = "recbf"
    delta: lc.DeltaVector = lc.VEHICLE_1
    id_delta: lc.DeltaVector = lc.VEHICLE_2   # data source for lrecbf-stale
    v0: float = 30.0
    Ymax: float = 3.85
    Yref: float = 3.7
    poles: tuple = (-3.0, -3.5, -4.0)
    Q: tuple = (1.0, 1.0, 1.0, 20.0, 1.0)
    R: float = 100.0
    sat: float = 0.08
    box: dict = field(default_factory=_default_lane_box)
    grid_points: int = 10
    noise_std: float = 0.1
    id_rate_hz: float = 10.0
    k_sigma: float = 3.0
    seed: int = 0
    duration: float = 10.0
    dt_sim: float = 1e-3
    control_period: float = 0.01
    events: tuple = ("0:switch-reference",)

    def nominal(self) -> lc.LaneNominal:
        return lc.LaneNominal(v0=self.v0, Ymax=self.Ymax, Yref=self.Yref)

    def initial_box(self) -> UncertaintyBox:
        return UncertaintyBox(tuple((n, lo, hi) for n, (lo, hi) in self.box.items()), self.grid_points)

    @classmethod
    def for_vehicle(cls, name: str, mode: str = "recbf", **kw) -> "LaneConfig":
        return cls(label=name, mode=mode, delta=lc.VEHICLES[name], **kw)


LANE_COLUMNS = (
    "t_s", "ydot_mps", "psidot_radps", "psi_rad", "Y_m", "phi_rad",
    "phi_nom_rad", "phi_r_rad", "bound_rad", "h0_m", "h1_mps", "h2_mps2",
    "delta1_worst", "delta2_worst", "delta3_worst",
    "delta1_lo", "delta1_hi", "delta2_lo", "delta2_hi", "delta3_lo", "delta3_hi",
    "xdot0_mps2", "xdot1_radps2", "xdot2_radps", "xdot3_mps", "xdot4_radps",
    "infeasible",
)


@dataclass
class LaneIdentification:
    obs: ObservationSet
    fit: FitResult
    updates: list
    box: UncertaintyBox
    source: lc.DeltaVector


@dataclass
class LaneRun:
    config: LaneConfig
    trace: Trace
    max_Y: float
    final_box: UncertaintyBox
    identification: LaneIdentification | None = None
    infeasible_steps: int = 0

    @property
    def safe(self) -> bool:
        return self.max_Y <= self.config.Ymax + 1e-6

    def settle_time(self, tol: float = 0.05) -> float:
        """First time after which ``|Y - Yref|`` stays below ``tol``."""
        err = np.abs(self.trace["Y_m"] - self.config.Yref)
        outside = np.nonzero(err >= tol)[0]
        if outside.size == 0:
            return 0.0
        if outside[-1] == len(err) - 1:
            return float("inf")
        return float(self.trace["t_s"][outside[-1] + 1])


def lane_observations(trace: Trace, seed: int, noise_std: float = 0.1,
                      rate_hz: float | None = 10.0) -> ObservationSet:
    """Noisy state-derivative measurements from a logged run, decimated to ``rate_hz``."""
    if rate_hz is not None:
        period = trace["t_s"][1] - trace["t_s"][0]
        stride = int(round(1.0 / (rate_hz * period)))
        if stride < 1 or abs(stride * rate_hz * period - 1.0) > 1e-6:
            raise ConfigError(f"id rate {rate_hz} Hz does not divide the trace rate")
        trace = Trace(trace.columns, trace.data[::stride])
    inputs = np.column_stack([trace[c] for c in LANE_COLUMNS[1:6]] + [trace["phi_r_rad"]])
    y = np.column_stack([trace[c] for c in LANE_COLUMNS[21:26]])
    var = np.full(5, noise_std ** 2)
    z = inject_noise(y, var, make_rng(seed, "lane-noise"))
    return ObservationSet(inputs, z, var)


def identify_lane(cfg: LaneConfig, obs: ObservationSet, source: lc.DeltaVector | None = None) -> LaneIdentification:
    """Fit (dI, delta1..3) and tighten the matching box entries to mu +/- k sigma."""
    model = lane_change_model(cfg.nominal())
    result = fit(obs, model, np.ones(len(LANE_PARAMS)))
    initial = cfg.initial_box()
    box, updates = initial, []
    for name in LANE_PARAMS:
        box, upd = update_box(box, name, result, k=cfg.k_sigma, initial=initial)
        updates.append(upd)
    return LaneIdentification(obs, result, updates, box, source)


def collect_lane_data(cfg: LaneConfig, delta: lc.DeltaVector) -> Trace:
    """Noise-free RECBF lane change used as identification data."""
    src = dataclasses.replace(cfg, mode="recbf", delta=delta, events=("0:switch-reference",))
    return run_lane_scenario(src).trace


def run_lane_scenario(cfg: LaneConfig, learned: UncertaintyBox | None = None) -> LaneRun:
    if cfg.mode not in LANE_MODES:
        raise ConfigError(f"mode {cfg.mode!r} not in {LANE_MODES}")
    nom = cfg.nominal()
    substeps, n_ticks = _check_rates(cfg.dt_sim, cfg.control_period, cfg.duration)
    events = parse_events(cfg.events, cfg.duration)
    gain = place_poles(cfg.poles)
    K = lc.lqr_nominal_gain(nom, cfg.Q, cfg.R)
    initial = cfg.initial_box()
    M = lc.lane_matrices(nom, cfg.delta)

    identification = None
    if cfg.mode in ("lrecbf", "lrecbf-stale") and learned is None:
        source = cfg.delta if cfg.mode == "lrecbf" else cfg.id_delta
        obs = lane_observations(collect_lane_data(cfg, source), cfg.seed, cfg.noise_std,
                                cfg.id_rate_hz)
        identification = identify_lane(cfg, obs, source)
        learned = identification.box
    if cfg.mode in ("lrecbf", "lrecbf-stale") and not any(a == "update-bounds" for _, a in events):
        events = sorted(events + [(0.0, "update-bounds")], key=lambda e: e[0])

    report = check_initial_membership(lc.h_chain_lane(nom), np.zeros(5), gain,
                                      lc.steer_box(initial))
    if not report.ok:
        log.warning("initial state violates nu_i >= 0 on %d grid points", len(report.violations))

    box = initial
    x = np.zeros(5)
    xref = np.zeros(5)
    A, B = M.A(nom.v0), M.B()

    def f(x, u):
        return A @ x + B * u

    tb = _TraceBuilder(LANE_COLUMNS)
    max_Y = float(x[3])
    ev = 0
    infeasible = 0
    for k in range(n_ticks + 1):
        t = k * cfg.control_period
        if not np.all(np.isfinite(x)):
            raise SimulationAbort("state diverged", t)
        while ev < len(events) and events[ev][0] <= t + 1e-9:
            action = events[ev][1]
            if action == "switch-reference":
                xref = np.array([0.0, 0.0, 0.0, nom.Yref, 0.0])
            elif action == "reset-bounds":
                box = initial
            elif action == "update-bounds":
                if learned is None:
                    raise ConfigError("update-bounds event needs learned bounds")
                box = learned
            ev += 1
        u_nom = lc.nominal_steer(x, K, xref, cfg.sat)
        if cfg.mode == "ecbf":
            worst = np.ones(3)
            bound = lc.s_lane(x, lc.NOMINAL_VEHICLE, gain, nom)
        else:
            worst, bound = lc.robust_steer_bound(x, box, gain, nom)
        if not np.isfinite(bound):
            raise SimulationAbort("non-finite steering bound", t)
        flag = 0.0
        try:
            u = clamp_to_robust_bound(u_nom, bound)
        except InfeasibleConstraint as exc:  # only reachable with a floor
            log.warning("t=%.2f: %s", t, exc)
            u, flag = exc.u_floor, 1.0
            infeasible += 1
        xdot = f(x, u)
        sb = lc.steer_box(box)
        tb.add(t, *x, u_nom, u, bound, nom.Ymax - x[3], -x[0] - nom.v0 * x[2],
               -M.a11 * x[0] - M.a15 * x[4], *worst,
               *[v for _, lo, hi in sb.entries for v in (lo, hi)], *xdot, flag)
        if k == n_ticks:
            break
        for i in range(substeps):
            x = rk4_step(f, x, u, cfg.dt_sim, t + i * cfg.dt_sim)
            max_Y = max(max_Y, float(x[3]))
    return LaneRun(cfg, tb.build(), max_Y, box, identification, infeasible)


# -- adaptive cruise control ---------------------------------------------------

@dataclass(frozen=True)
class RoadConfig:
    kind: str = "synthetic"     # synthetic | csv | constant
    seed: int = 7
    path: str = ""
    grade: float = 0.0          # used by kind=constant
    horizon: float = 300.0      # synthetic profile length, so shorter runs see the same road


@dataclass(frozen=True)
class AccConfig:
    label: str = "acc"
    actual: accm.AccActual = accm.AccActual()
    nominal: accm.AccNominal = accm.AccNominal()
    uncertainty: accm.AccUncertainty = accm.AccUncertainty()
    brakes: accm.BrakeModel = accm.BrakeModel()
    lead: LeadConfig = LeadConfig()
    road: RoadConfig = RoadConfig()
    poles: tuple = (-0.5, -1.5)
    k3: float = 0.5
    kp: float = 400.0
    literal_ff_sign: bool = False
    v2_0: float = 29.5
    d_0: float = 100.0
    noise_std: float = 0.05
    id_window: float = 25.0
    k_sigma: float = 3.0
    max_rel_sigma: float = 0.05
    seed: int = 0
    duration: float = 300.0
    dt_sim: float = 1e-3
    control_period: float = 0.01
    events: tuple = ("100:update-bounds",)

    def gains(self) -> accm.AccGains:
        return accm.gains_from_poles(self.poles, self.k3, self.kp)


ACC_COLUMNS = (
    "t_s", "v1_mps", "v2_mps", "d_m", "a1_mps2", "alpha_rad",
    "u_nom_N", "u_N", "bound_N", "s1_N", "s2_N",
    "dmin_worst_m", "dmin_actual_m", "h1_actual_m", "h2_mps",
    "m_lo_kg", "m_hi_kg", "v2dot_mps2", "z_mps2", "infeasible",
)


@dataclass
class AccIdentification:
    time: float
    obs: ObservationSet
    fit: FitResult
    updates: list


@dataclass
class AccRun:
    config: AccConfig
    trace: Trace
    identifications: list
    road: RoadProfile
    lead: LeadProfile
    infeasible_steps: int = 0
    min_h1: float = float("inf")
    max_v2: float = 0.0

    def mean_gap(self, t0: float, t1: float) -> float:
        t = self.trace["t_s"]
        sel = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
        return float(self.trace["d_m"][sel].mean())


def build_road(cfg: AccConfig) -> RoadProfile:
    r = cfg.road
    if r.kind == "synthetic":
        return synthesize_road(r.seed, max(r.horizon, cfg.duration))
    if r.kind == "csv":
        if not r.path:
            raise ConfigError("road.path is required for kind=csv")
        return RoadProfile.from_csv(r.path)
    if r.kind == "constant":
        return RoadProfile.constant(r.grade, cfg.duration)
    raise ConfigError(f"road.kind {r.kind!r} not in synthetic/csv/constant")


def acc_observations(trace: Trace, t0: float, t1: float, noise_std: float) -> ObservationSet:
    t = trace["t_s"]
    sel = (t >= t0 - 1e-9) & (t < t1 - 1e-9)
    inputs = np.column_stack([trace["v2_mps"][sel], trace["u_N"][sel]])
    return ObservationSet(inputs, trace["z_mps2"][sel], np.array([noise_std ** 2]))


def identify_acc(cfg: AccConfig, obs: ObservationSet, unc: accm.AccUncertainty):
    """Fit (m, AfCd, ct) and apply the gated mu +/- k sigma update."""
    nom = cfg.nominal
    result = fit(obs, acc_model(cfg.actual.rho, cfg.actual.g), np.array([nom.m, nom.AfCd0, nom.ct]))
    initial = cfg.uncertainty.to_box()
    box = unc.to_box()
    updates = []
    for name in accm.LEARNABLE:
        box, upd = update_box(box, name, result, k=cfg.k_sigma, initial=initial,
                              max_rel_sigma=cfg.max_rel_sigma)
        updates.append(upd)
        if upd.accepted:
            unc = unc.with_learned(name, *upd.new)
    return unc, result, updates


def run_acc_scenario(cfg: AccConfig) -> AccRun:
    substeps, n_ticks = _check_rates(cfg.dt_sim, cfg.control_period, cfg.duration)
    events = parse_events(cfg.events, cfg.duration)
    road = build_road(cfg)
    lead = leading_vehicle_profile(road, cfg.lead, cfg.duration, cfg.control_period)
    gains = cfg.gains()
    brakes, actual = cfg.brakes, cfg.actual
    initial = cfg.uncertainty
    unc = initial
    noise_rng = make_rng(cfg.seed, "acc-noise")
    x = np.array([lead.v1[0], cfg.v2_0, cfg.d_0])
    g = actual.g
    identifications = []
    tb = _TraceBuilder(ACC_COLUMNS)
    ev = 0
    infeasible = 0
    min_h1, max_v2 = np.inf, -np.inf
    for k in range(n_ticks + 1):
        t = k * cfg.control_period
        if not np.all(np.isfinite(x)):
            raise SimulationAbort("state diverged", t)
        while ev < len(events) and events[ev][0] <= t + 1e-9:
            action = events[ev][1]
            if action == "update-bounds":
                obs = acc_observations(tb.build(), t - cfg.id_window, t, cfg.noise_std)
                unc, result, updates = identify_acc(cfg, obs, unc)
                identifications.append(AccIdentification(t, obs, result, updates))
            elif action == "reset-bounds":
                unc = initial
            ev += 1
        a1 = float(lead.a1[k])
        alpha = float(road(t))
        u_nom = accm.nominal_force(x, gains.kp, cfg.nominal.AfCd0, brakes, cfg.nominal.m,
                                   actual.rho, cfg.literal_ff_sign)
        bound, det = accm.robust_force_bound(x, unc, gains, brakes, actual.rho, details=True)
        if not np.isfinite(bound):
            raise SimulationAbort("non-finite force bound", t)
        flag = 0.0
        try:
            u = clamp_to_robust_bound(u_nom, bound, -brakes.Fb_max)
        except InfeasibleConstraint as exc:
            log.debug("t=%.2f: %s; applying full brake", t, exc)
            u, flag = exc.u_floor, 1.0
            infeasible += 1
        xdot = accm.trailing_derivative(x, u, actual, a1, alpha)
        z = float(inject_noise(np.array([xdot[1] + g * alpha]), [cfg.noise_std ** 2], noise_rng)[0])
        dmin_act = accm.safe_distance(x[0], x[1], actual.m, alpha, brakes)
        h1 = x[2] - dmin_act
        min_h1 = min(min_h1, h1)
        max_v2 = max(max_v2, x[1])
        tb.add(t, *x, a1, alpha, u_nom, u, bound, det["s1"], det["s2"],
               accm.dmin_worst(x[0], x[1], unc, brakes), dmin_act, h1, brakes.v_max - x[1],
               *unc.m_box, xdot[1], z, flag)
        if k == n_ticks:
            break

        def f(x, u, a1=a1, alpha=alpha):
            return accm.trailing_derivative(x, u, actual, a1, alpha)

        # grade is held over the tick, so the actual braking limits are too
        ab1, ab2 = (float(a) for a in accm.max_decelerations(actual.m, alpha, brakes))
        for i in range(substeps):
            x = rk4_step(f, x, u, cfg.dt_sim, t + i * cfg.dt_sim)
            # lead speed is prescribed; pin it so stage clamping near a stop cannot drift it
            x[0] = lead.v1[k] + a1 * (i + 1) * cfg.dt_sim
            x[:2] = np.maximum(x[:2], 0.0)   # no rolling back after a stop
            v1, v2, d = x
            max_v2 = max(max_v2, v2)
            min_h1 = min(min_h1, d + v2 * v2 / (2.0 * ab2) - v1 * v1 / (2.0 * ab1))
    return AccRun(cfg, tb.build(), identifications, road, lead, infeasible, float(min_h1), float(max_v2))
