"""Planar pursuit of a constant-thrust evader by an SFRJ-powered missile.

Guidance (proportional navigation) feeds a three-loop pitch autopilot that
drives a point-mass plus short-period airframe; the engine thrust is held at
its command by the RCAC controller while altitude and speed drift.

Engine scale: quasi-1D inviscid steady flow is invariant under a uniform
geometric scale s, so thrust at scale s is exactly s**2 times the unit-scale
thrust at the same heat flux. A unit-scale (altitude, velocity, flux) table
therefore serves any scaled engine.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.optimize import brentq
from scipy.signal import place_poles

from .atmosphere import G0, isa, speed_of_sound
from .engine import BoundaryCondition, SolverLimits, build_geometry, build_grid
from .envelope import EnvelopeTable
from .harness import DEFAULT_LAG, EnginePlant, LagModel
from .rcac import MapConfig, RcacConfig, RcacController

DEG = math.pi / 180.0


class EngagementError(RuntimeError):
    pass


class TableRangeError(EngagementError):
    pass


# ------------------------------------------------------------------ models

@dataclass(frozen=True)
class AeroParams:
    """Pursuer aerodynamics, nondimensional on S_ref = pi d^2 / 4 and d.

    ``cd0=None`` means "solve for trim" (thrust = drag in level flight at
    the initial speed and altitude). d=None takes the scaled engine's
    combustor diameter as the body diameter.
    """

    cl_alpha: float = 10.0
    cl_delta: float = -1.0
    cd0: float | None = None
    k_induced: float = 0.1
    cm_alpha: float = -4.0
    cm_q: float = -200.0
    cm_delta: float = 8.0
    d: float | None = None
    length_over_d: float = 8.0

    @property
    def S(self) -> float:
        return math.pi * self.d ** 2 / 4.0

    def inertia(self, mass: float) -> float:
        L = self.length_over_d * self.d
        return mass * L * L / 12.0


NO_AERO = AeroParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, d=0.3)


@dataclass
class VehicleState:
    x: float
    h: float
    V: float
    gamma: float
    alpha: float = 0.0
    q: float = 0.0
    mass: float = 1.0

    def __post_init__(self):
        if not self.V > 0:
            raise EngagementError(f"non-physical speed {self.V}")
        if not self.mass > 0:
            raise EngagementError("mass must be positive")

    def vec(self) -> np.ndarray:
        return np.array([self.x, self.h, self.V, self.gamma, self.alpha, self.q])

    @classmethod
    def from_vec(cls, v, mass) -> "VehicleState":
        return cls(*(float(a) for a in v), mass=mass)

    @property
    def velocity(self) -> np.ndarray:
        return self.V * np.array([math.cos(self.gamma), math.sin(self.gamma)])


@dataclass(frozen=True)
class EvaderParams:
    mass: float = 10000.0
    thrust: float = 76310.0
    mach: float = 0.75
    altitude: float = 8000.0
    x0: float = 2000.0
    gamma: float = 0.0
    S: float = 30.0
    cd0: float = 0.02
    k_induced: float = 0.05


@dataclass(frozen=True)
class PursuerParams:
    mass: float = 204.0
    mach: float = 2.5
    gamma: float = 10.0 * DEG
    alpha: float = 1.0 * DEG
    altitude: float = 7000.0
    x0: float = 0.0


def _forces(s: VehicleState, aero: AeroParams, delta: float, thrust: float):
    atm = isa(s.h)
    qbar = 0.5 * atm.rho * s.V ** 2
    cl = aero.cl_alpha * s.alpha + aero.cl_delta * delta
    cd = (aero.cd0 or 0.0) + aero.k_induced * cl * cl
    cm = (aero.cm_alpha * s.alpha + aero.cm_delta * delta
          + aero.cm_q * s.q * aero.d / (2.0 * s.V))
    S = aero.S
    return qbar * S * cl, qbar * S * cd, qbar * S * aero.d * cm


def derivatives(v: np.ndarray, mass: float, aero: AeroParams, delta: float,
                thrust: float) -> np.ndarray:
    x, h, V, gam, alpha, q = v
    s = VehicleState(x, h, V, gam, alpha, q, mass)
    L, D, M = _forces(s, aero, delta, thrust)
    Vd = (thrust * math.cos(alpha) - D) / mass - G0 * math.sin(gam)
    gd = (L + thrust * math.sin(alpha) - mass * G0 * math.cos(gam)) / (mass * V)
    I = aero.inertia(mass) if aero.d else 1.0
    qd = M / I if I > 0 else 0.0
    return np.array([V * math.cos(gam), V * math.sin(gam), Vd, gd, q - gd, qd])


def normal_accel(s: VehicleState, aero: AeroParams, delta: float, thrust: float) -> float:
    """Flight-path normal acceleration V * dgamma/dt."""
    return s.V * derivatives(s.vec(), s.mass, aero, delta, thrust)[3]


def step_dynamics(state: VehicleState, delta: float, thrust: float, dt: float,
                  aero: AeroParams) -> VehicleState:
    """One fixed RK4 step of the planar airframe."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    m = state.mass
    y = state.vec()
    k1 = derivatives(y, m, aero, delta, thrust)
    k2 = derivatives(y + 0.5 * dt * k1, m, aero, delta, thrust)
    k3 = derivatives(y + 0.5 * dt * k2, m, aero, delta, thrust)
    k4 = derivatives(y + dt * k3, m, aero, delta, thrust)
    return VehicleState.from_vec(y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), m)


def step_evader(state: VehicleState, ev: EvaderParams, dt: float) -> VehicleState:
    """Constant-thrust point mass holding its flight-path angle (RK4)."""

    def f(y):
        x, h, V = y
        atm = isa(h)
        qbar = 0.5 * atm.rho * V * V
        cl = ev.mass * G0 * math.cos(ev.gamma) / (qbar * ev.S)
        D = qbar * ev.S * (ev.cd0 + ev.k_induced * cl * cl)
        return np.array([V * math.cos(ev.gamma), V * math.sin(ev.gamma),
                         (ev.thrust - D) / ev.mass - G0 * math.sin(ev.gamma)])

    y = np.array([state.x, state.h, state.V])
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return VehicleState(y[0], y[1], y[2], ev.gamma, mass=ev.mass)


# --------------------------------------------------------------- guidance

def los(p: VehicleState, e: VehicleState):
    """Range, line-of-sight angle, range rate and LOS rate."""
    dx, dh = e.x - p.x, e.h - p.h
    dv = e.velocity - p.velocity
    R = math.hypot(dx, dh)
    beta = math.atan2(dh, dx)
    Rdot = (dx * dv[0] + dh * dv[1]) / R
    bdot = (dx * dv[1] - dh * dv[0]) / (R * R)
    return R, beta, Rdot, bdot


def guidance(R: float, beta: float, Rdot: float, beta_dot: float, nav_gain: float = 4.0,
             g_limit: float = 30.0) -> float:
    """Proportional navigation a = N' Vc beta_dot, clipped to +-g_limit g."""
    if not R > 0:
        raise EngagementError("range must be positive")
    a = nav_gain * (-Rdot) * beta_dot
    lim = g_limit * G0
    return min(max(a, -lim), lim)


# -------------------------------------------------------------- autopilot

@dataclass(frozen=True)
class AutopilotGains:
    """delta = K_R (omega_c - omega), omega_c = K_I * xi - K_A * a_z,
    xi = integral of (a_c - a_z)."""

    K_R: float
    K_A: float
    K_I: float
    delta_max: float = 30.0 * DEG


@dataclass
class Autopilot:
    gains: AutopilotGains
    xi: float = 0.0

    def command(self, a_c: float, a_z: float, omega: float) -> tuple:
        g = self.gains
        w_c = g.K_I * self.xi - g.K_A * a_z
        raw = g.K_R * (w_c - omega)
        d = min(max(raw, -g.delta_max), g.delta_max)
        return d, raw

    def __call__(self, a_c: float, a_z: float, omega: float, dt: float = 0.0) -> float:
        """Fin command; integrates the accel error over ``dt`` afterwards.

        Integration is frozen while the fin is saturated and the error would
        push it further into the stop.
        """
        d, raw = self.command(a_c, a_z, omega)
        err = a_c - a_z
        if d == raw or np.sign(err * self.gains.K_I * self.gains.K_R) != np.sign(raw):
            self.xi += err * dt
        return d

    def trim(self, a_z: float, omega: float, delta: float):
        """Set the integrator so the current measurements return ``delta``."""
        g = self.gains
        self.xi = (delta / g.K_R + omega + g.K_A * a_z) / g.K_I


def short_period_model(state: VehicleState, aero: AeroParams, thrust: float):
    """Linear (A, B, C, D) in states [alpha, q], input delta, output a_z."""
    atm = isa(state.h)
    V = state.V
    m = state.mass
    qS = 0.5 * atm.rho * V * V * aero.S
    I = aero.inertia(m)
    za = (qS * aero.cl_alpha + thrust) / m
    zd = qS * aero.cl_delta / m
    A = np.array([[-za / V, 1.0],
                  [qS * aero.d * aero.cm_alpha / I, qS * aero.d ** 2 * aero.cm_q / (2 * V * I)]])
    B = np.array([[-zd / V], [qS * aero.d * aero.cm_delta / I]])
    C = np.array([[za, 0.0]])
    D = np.array([[zd]])
    return A, B, C, D


def design_autopilot(state: VehicleState, aero: AeroParams, thrust: float,
                     poles=None, delta_max: float = 30.0 * DEG) -> AutopilotGains:
    """Pole placement on [alpha, q, xi] with xi' = a_c - a_z.

    The full-state law delta = -k x is rewritten in measured quantities
    (a_z replaces alpha) which gives the three-loop gains exactly.
    """
    A, B, C, D = short_period_model(state, aero, thrust)
    Aa = np.zeros((3, 3))
    Aa[:2, :2] = A
    Aa[2, :2] = -C[0]
    Ba = np.vstack([B, -D])
    if poles is None:
        wn, zeta, p3 = 20.0, 0.7, 5.0
        wd = wn * math.sqrt(1 - zeta ** 2)
        poles = [complex(-zeta * wn, wd), complex(-zeta * wn, -wd), -p3]
    k = place_poles(Aa, Ba, poles).gain_matrix[0]
    ka, kq, kx = k
    za, zd = C[0, 0], D[0, 0]
    # alpha = (a_z - zd delta) / za  =>  delta (1 - ka zd / za) = -ka a_z / za - kq q - kx xi
    den = 1.0 - ka * zd / za
    c_a, c_q, c_x = -ka / za / den, -kq / den, -kx / den
    K_R = -c_q
    return AutopilotGains(K_R=float(K_R), K_A=float(-c_a / K_R), K_I=float(c_x / K_R),
                          delta_max=delta_max)


def linear_step_response(state: VehicleState, aero: AeroParams, thrust: float,
                         gains: AutopilotGains, a_c: float, t_end: float = 2.0,
                         dt: float = 1e-3) -> tuple:
    """a_z(t) of the closed linear loop for a step command (no saturation)."""
    A, B, C, D = short_period_model(state, aero, thrust)
    ap = Autopilot(replace(gains, delta_max=math.inf))
    x = np.zeros(2)
    delta = 0.0
    ts, az = [], []
    for i in range(int(round(t_end / dt))):
        a = float(C[0] @ x + D[0, 0] * delta)
        ts.append(i * dt)
        az.append(a)
        delta = ap(a_c, a, x[1], dt)
        # RK4 on the airframe with delta held
        f = lambda s: A @ s + B[:, 0] * delta
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.array(ts), np.array(az)


def trim_level(h: float, V: float, mass: float, aero: AeroParams, thrust: float):
    """Level-flight trim: returns (alpha, delta, cd0) with pitch moment,
    normal force and axial force all balanced."""
    atm = isa(h)
    qS = 0.5 * atm.rho * V * V * aero.S
    ratio = -aero.cm_alpha / aero.cm_delta   # delta = ratio * alpha for zero moment
    cla = aero.cl_alpha + aero.cl_delta * ratio

    def lift_err(a):
        return qS * cla * a + thrust * math.sin(a) - mass * G0

    alpha = brentq(lift_err, -0.5, 0.5, xtol=1e-14)
    delta = ratio * alpha
    cl = cla * alpha
    cd0 = thrust * math.cos(alpha) / qS - aero.k_induced * cl * cl
    return alpha, delta, cd0


# ------------------------------------------------------------------ engine

@lru_cache(maxsize=1)
def default_table() -> EnvelopeTable:
    """Unit-scale thrust table shipped with the package."""
    ref = resources.files("sfrjlab").joinpath("data/engagement_table.json")
    with ref.open() as fh:
        return EnvelopeTable.from_dict(json.load(fh))


def _span_at(table: EnvelopeTable, h: float, V: float, w_max: float):
    fl = np.asarray(table.fluxes, float)
    th = np.array([table.thrust_at(h, V, q) for q in fl])
    keep = fl <= w_max
    return max(0.0, float(th[keep].min())), float(th[keep].max())


def engine_scale(table: EnvelopeTable, h: float, V: float, thrust: float,
                 fraction: float = 0.5, w_max: float = 16e6) -> float:
    """Geometry scale putting ``thrust`` at ``fraction`` of the positive span."""
    lo, hi = _span_at(table, h, V, w_max)
    return math.sqrt(thrust / (lo + fraction * (hi - lo)))


def interpolation_error_bound(table: EnvelopeTable, h: float, V: float, w: float,
                              scale: float = 1.0) -> float:
    """Multilinear interpolation error bound at (h, V, w).

    Uses |e| <= 1/8 * sum_i dx_i^2 max|f_ii|, with each second derivative
    estimated by the largest second difference of the table around the
    enclosing cell.
    """
    axes = (np.asarray(table.altitudes), np.asarray(table.velocities), np.asarray(table.fluxes))
    pt = (h, V, w)
    idx = [int(np.clip(np.searchsorted(a, x, side="right") - 1, 0, len(a) - 2))
           for a, x in zip(axes, pt)]
    th = table.thrust
    total = 0.0
    for ax in range(3):
        a = axes[ax]
        if len(a) < 3:
            continue
        i = idx[ax]
        dx = a[i + 1] - a[i]
        worst = 0.0
        sl = [slice(max(idx[k], 0), idx[k] + 2) for k in range(3)]
        for c in (i - 1, i, i + 1):
            if c < 1 or c > len(a) - 2:
                continue
            lo, mid, hi = list(sl), list(sl), list(sl)
            lo[ax], mid[ax], hi[ax] = c - 1, c, c + 1
            h1, h2 = a[c] - a[c - 1], a[c + 1] - a[c]
            f0, f1, f2 = th[tuple(lo)], th[tuple(mid)], th[tuple(hi)]
            d2 = 2.0 * ((f2 - f1) / h2 - (f1 - f0) / h1) / (h1 + h2)
            d2 = d2[np.isfinite(d2)]
            if d2.size:
                worst = max(worst, float(np.max(np.abs(d2))))
        total += dx * dx * worst / 8.0
    return scale * scale * total


class TableEngine:
    """Surrogate engine: s^2 * table(h, V, w) passed through the unit lag."""

    kind = "surrogate"

    def __init__(self, table: EnvelopeTable, scale: float, lag: LagModel = DEFAULT_LAG):
        self.table = table
        self.s2 = scale * scale
        self.lag = lag
        self._y = None
        self._x = None

    def static(self, h, V, w) -> float:
        tb = self.table
        if not (tb.altitudes[0] <= h <= tb.altitudes[-1]
                and tb.velocities[0] <= V <= tb.velocities[-1]):
            raise TableRangeError(f"engine query outside table: h={h:.1f}, V={V:.1f}")
        w = min(max(w, float(tb.fluxes[0])), float(tb.fluxes[-1]))
        return self.s2 * tb.thrust_at(h, V, w)

    def start(self, h, V, w) -> float:
        y0 = self.static(h, V, w)
        self._y = [y0, y0]
        self._x = [y0, y0]
        return y0

    def step(self, h, V, w) -> float:
        lg = self.lag
        self._x = [self.static(h, V, w), self._x[0]]
        y = lg.a1 * self._y[0] + lg.a2 * self._y[1] + lg.c0 * self._x[0] + lg.c1 * self._x[1]
        self._y = [y, self._y[0]]
        return y


class SolverEngine:
    """Full quasi-1D engine at the scaled geometry, re-fed (h, V) every step."""

    kind = "engine"

    def __init__(self, scale: float, n_cells: int = 500, inner_iterations: int = 500):
        self.grid = build_grid(build_geometry({"scale": scale}), n_cells)
        self.inner = inner_iterations
        self.plant = None

    def start(self, h, V, w) -> float:
        bc = BoundaryCondition.from_altitude(h, V)
        self.plant = EnginePlant(bc, self.grid, self.inner, w, SolverLimits())
        return self.plant.solver.thrust()

    def step(self, h, V, w) -> float:
        self.plant.set_inflow(BoundaryCondition.from_altitude(h, V))
        return self.plant.step(w).thrust


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class EngagementConfig:
    evader: EvaderParams = field(default_factory=EvaderParams)
    pursuer: PursuerParams = field(default_factory=PursuerParams)
    aero: AeroParams = field(default_factory=AeroParams)
    thrust_command: float = 12e3
    nav_gain: float = 4.0
    g_limit: float = 30.0
    dt: float = 0.01
    engine_dt: float = 0.05
    capture_radius: float = 5.0
    t_max: float = 30.0
    backend: str = "surrogate"
    map: MapConfig = field(default_factory=MapConfig)
    rcac: RcacConfig = field(default_factory=lambda: RcacConfig(N1=-1.0))
    error_scale: float | None = None     # None: 1 / one-step thrust response
    scale: float | None = None           # None: 12 kN at 50 % of the span
    autopilot_poles: tuple | None = None
    n_cells: int = 500
    inner_iterations: int = 500

    def __post_init__(self):
        if not (self.evader.mass > 0 and self.pursuer.mass > 0):
            raise ValueError("masses must be positive")
        if not (self.evader.mach > 0 and self.pursuer.mach > 0):
            raise ValueError("speeds must be positive")
        if not self.capture_radius > 0:
            raise ValueError("capture radius must be positive")
        if not (self.dt > 0 and self.engine_dt >= self.dt):
            raise ValueError("need 0 < dt <= engine_dt")
        if self.backend not in ("surrogate", "engine"):
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def engine_every(self) -> int:
        return max(1, int(round(self.engine_dt / self.dt)))

    def to_dict(self):
        d = asdict(self)
        d["rcac"]["theta0"] = list(self.rcac.theta0)
        return d


@dataclass(frozen=True)
class ResolvedSetup:
    """Everything derived from the config before the clock starts."""

    scale: float
    error_scale: float
    w_bar: float
    aero: AeroParams
    gains: AutopilotGains
    trim_alpha: float
    trim_delta: float
    pursuer0: VehicleState
    evader0: VehicleState

    def to_dict(self):
        d = asdict(self)
        for k in ("pursuer0", "evader0"):
            d[k] = asdict(getattr(self, k))
        return d


def resolve(cfg: EngagementConfig, table: EnvelopeTable | None = None) -> ResolvedSetup:
    table = table or default_table()
    pp, ev = cfg.pursuer, cfg.evader
    V0 = pp.mach * speed_of_sound(pp.altitude)
    Ve = ev.mach * speed_of_sound(ev.altitude)
    s = cfg.scale or engine_scale(table, pp.altitude, V0, cfg.thrust_command,
                                  w_max=cfg.map.w_max)
    aero = cfg.aero
    if aero.d is None:
        aero = replace(aero, d=build_geometry({"scale": s}).params["combustor_diameter"] * s)
    a_t, d_t, cd0 = trim_level(pp.altitude, V0, pp.mass, aero, cfg.thrust_command)
    if aero.cd0 is None:
        aero = replace(aero, cd0=cd0)
    p0 = VehicleState(pp.x0, pp.altitude, V0, pp.gamma, pp.alpha, 0.0, pp.mass)
    gains = design_autopilot(p0, aero, cfg.thrust_command, cfg.autopilot_poles)
    # operating point: the flux giving the command at launch (mid-span by construction)
    fl = np.asarray(table.fluxes, float)
    hi = float(min(fl[-1], cfg.map.w_max))
    f = lambda w: s * s * table.thrust_at(pp.altitude, V0, w) - cfg.thrust_command
    w0 = brentq(f, float(fl[0]), hi, xtol=1.0) if f(fl[0]) < 0 < f(hi) else cfg.map.w_bar
    if cfg.error_scale is None:
        dtau = s * s * (table.thrust_at(pp.altitude, V0, w0 + cfg.map.K_w)
                        - table.thrust_at(pp.altitude, V0, w0))
        es = 1.0 / abs(DEFAULT_LAG.c0 * dtau)
    else:
        es = cfg.error_scale
    e0 = VehicleState(ev.x0, ev.altitude, Ve, ev.gamma, mass=ev.mass)
    return ResolvedSetup(s, es, float(w0), aero, gains, a_t, d_t, p0, e0)


# -------------------------------------------------------------------- run

LOG_COLUMNS = ("t", "x_p", "h_p", "V_p", "gamma_p", "alpha_p", "q_p", "x_e", "h_e", "V_e",
               "R", "beta", "a_zc", "a_z", "omega", "delta", "tau_c", "tau", "u", "w",
               "K_P", "K_I")


@dataclass
class EngagementLog:
    rows: list
    status: str
    miss_distance: float
    intercept_time: float | None
    meta: dict

    def column(self, name) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def thrust_band_after(self, t0: float, tol: float = 0.05) -> float:
        """Max |tau - tau_c| / tau_c over t >= t0."""
        t, tau, tc = self.column("t"), self.column("tau"), self.column("tau_c")
        m = t >= t0
        return float(np.max(np.abs(tau[m] - tc[m]) / tc[m])) if m.any() else math.nan

    def summary(self) -> dict:
        return dict(status=self.status, miss_distance=self.miss_distance,
                    intercept_time=self.intercept_time, steps=len(self.rows))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(LOG_COLUMNS)
        for r in self.rows:
            wr.writerow([repr(float(v)) for v in r])
        return buf.getvalue()

    def write(self, stem):
        with open(f"{stem}.csv", "w", newline="") as fh:
            fh.write(self.to_csv_text())
        with open(f"{stem}.json", "w") as fh:
            json.dump(dict(self.meta, summary=self.summary()), fh, indent=2, sort_keys=True)
        return f"{stem}.csv", f"{stem}.json"


def _closest_in_step(p0, p1, e0, e1):
    """Minimum separation over a step with straight-line relative motion."""
    r0 = np.array([e0.x - p0.x, e0.h - p0.h])
    r1 = np.array([e1.x - p1.x, e1.h - p1.h])
    d = r1 - r0
    dd = float(d @ d)
    s = 0.0 if dd == 0 else min(max(-float(r0 @ d) / dd, 0.0), 1.0)
    return float(np.linalg.norm(r0 + s * d)), s


def run_engagement(cfg: EngagementConfig = EngagementConfig(),
                   table: EnvelopeTable | None = None) -> EngagementLog:
    table = table or default_table()
    rs = resolve(cfg, table)
    aero = rs.aero
    p, e = rs.pursuer0, rs.evader0
    if cfg.backend == "surrogate":
        engine = TableEngine(table, rs.scale)
    else:
        engine = SolverEngine(rs.scale, cfg.n_cells, cfg.inner_iterations)
    mp = replace(cfg.map, w_bar=rs.w_bar)
    ctl = RcacController(replace(cfg.rcac, error_scale=rs.error_scale), mp)
    w = mp.w_bar
    u = 0.0
    tau = engine.start(p.h, p.V, w)
    ap = Autopilot(rs.gains)
    delta = float(np.clip(rs.trim_delta, -rs.gains.delta_max, rs.gains.delta_max))
    ap.trim(normal_accel(p, aero, delta, tau), p.q, delta)

    meta = dict(config=cfg.to_dict(), resolved=rs.to_dict(),
                scaled_engine=dict(scale=rs.scale,
                                   note="engine geometry scaled so the thrust command sits "
                                        "mid-span at the launch condition; thrust ~ scale^2"),
                backend=cfg.backend)
    rows = []
    status, miss, t_hit = "miss", math.inf, None
    n_max = int(round(cfg.t_max / cfg.dt))
    every = cfg.engine_every
    for i in range(n_max + 1):
        t = i * cfg.dt
        if i % every == 0 and i > 0:
            tau = engine.step(p.h, p.V, w)
            out = ctl.step(cfg.thrust_command - tau)
            u, w = out.u, out.w
        R, beta, Rdot, bdot = los(p, e)
        miss = min(miss, R)
        a_c = guidance(R, beta, Rdot, bdot, cfg.nav_gain, cfg.g_limit)
        a_z = normal_accel(p, aero, delta, tau)
        delta = ap(a_c, a_z, p.q, cfg.dt)
        th = ctl.state.theta
        rows.append((t, p.x, p.h, p.V, p.gamma, p.alpha, p.q, e.x, e.h, e.V, R, beta, a_c, a_z,
                     p.q, delta, cfg.thrust_command, tau, u, w, float(th[0]), float(th[1])))
        if R < cfg.capture_radius:
            status, t_hit = "intercept", t
            break
        if i == n_max:
            break
        p1 = step_dynamics(p, delta, tau, cfg.dt, aero)
        e1 = step_evader(e, cfg.evader, cfg.dt)
        dmin, frac = _closest_in_step(p, p1, e, e1)
        if dmin < cfg.capture_radius:
            miss = min(miss, dmin)
            status, t_hit = "intercept", t + frac * cfg.dt
            p, e = p1, e1
            break
        if dmin < miss:
            miss = dmin
        p, e = p1, e1
    return EngagementLog(rows, status, float(miss), t_hit, meta)
