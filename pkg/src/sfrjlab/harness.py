"""Closed-loop experiments: RCAC PI controller driving the engine model.

One control step reads the thrust after the plant has run with the current
heat flux, forms z = r - y, updates the controller and applies the new heat
flux. Plants share a tiny interface (``reset``/``step``) so the full
quasi-1D solver and the cheap surrogates are interchangeable.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .engine import (BoundaryCondition, EngineSolver, SolverError, SolverLimits, build_geometry,
                     build_grid, detect_unstart, run_to_steady)
from .engine.geometry import Grid
from .envelope import EnvelopeTable, heat_flux_sweep, query_feasible
from .rcac import MapConfig, RcacConfig, RcacController

# raw command range of the original static experiments and where it lands on
# this engine's thrust span in calibrated mode
RAW_RANGE = (300.0, 900.0)
CAL_RANGE = (0.25, 0.75)
SETTLE_WINDOW = 10
MAX_RESAMPLES = 1000

INLET_RANGES = dict(velocity=(800.0, 1000.0), temperature=(220.0, 260.0),
                    pressure=(26e3, 54e3))


class HarnessError(RuntimeError):
    pass


class ResampleLimitError(HarnessError):
    pass


# ---------------------------------------------------------------- commands

@dataclass(frozen=True)
class CommandProfile:
    """Thrust command schedule.

    kind "constant" holds ``value``; "random_steps" draws U(low, high) every
    ``hold`` steps from a PCG64 stream seeded by ``seed``; "sequence" walks
    ``values``, each held for ``hold`` steps (last value held to the end).
    """

    kind: str = "constant"
    value: float = 600.0
    low: float = 300.0
    high: float = 900.0
    hold: int = 40
    seed: int = 0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "random_steps", "sequence"):
            raise ValueError(f"unknown command kind {self.kind!r}")
        if self.hold < 1:
            raise ValueError("hold must be >= 1")
        if self.kind == "random_steps" and not self.low <= self.high:
            raise ValueError("random_steps needs low <= high")
        if self.kind == "sequence" and not self.values:
            raise ValueError("sequence profile needs values")

    def commands(self, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.value))
        if self.kind == "random_steps":
            rng = np.random.Generator(np.random.PCG64(self.seed))
            nseg = -(-n // self.hold)
            levels = rng.uniform(self.low, self.high, nseg)
            return np.repeat(levels, self.hold)[:n]
        idx = np.minimum(np.arange(n) // self.hold, len(self.values) - 1)
        return np.asarray(self.values, dtype=float)[idx]

    def scaled(self, fn) -> "CommandProfile":
        """Apply ``fn`` (raw N -> N) to every level of the profile."""
        return replace(self, value=fn(self.value), low=fn(self.low), high=fn(self.high),
                       values=tuple(fn(v) for v in self.values))

    def to_dict(self):
        d = asdict(self)
        d["values"] = list(self.values)
        return d


# ------------------------------------------------------------- calibration

@dataclass(frozen=True)
class Calibration:
    """Pre-unstart thrust span and one-step sensitivity at one inlet state.

    ``tau_low`` = max(0, lowest started thrust), ``tau_high`` = highest
    started thrust with w <= w_max. ``h1`` is the thrust change one control
    step after a unit control step from w_bar; its reciprocal is the default
    error pre-scale so that a unit target model matches the plant.
    """

    tau_low: float
    tau_high: float
    h1: float
    w_bar: float
    bc: dict
    fluxes: tuple = ()
    thrust: tuple = ()
    inner_iterations: int = 500

    @property
    def span(self) -> float:
        return self.tau_high - self.tau_low

    def target(self, fraction: float) -> float:
        return self.tau_low + fraction * self.span

    def from_raw(self, thrust_raw: float) -> float:
        """Map a raw command on the original 300-900 N scale into the span."""
        (a, b), (fa, fb) = RAW_RANGE, CAL_RANGE
        return self.target(fa + (thrust_raw - a) / (b - a) * (fb - fa))

    @property
    def error_scale(self) -> float:
        return 1.0 / abs(self.h1)

    def to_dict(self):
        d = asdict(self)
        d.update(span=self.span, error_scale=self.error_scale,
                 fluxes=list(self.fluxes), thrust=list(self.thrust))
        return d

    @classmethod
    def from_dict(cls, d):
        keys = ("tau_low", "tau_high", "h1", "w_bar", "bc", "fluxes", "thrust",
                "inner_iterations")
        kw = {k: d[k] for k in keys if k in d}
        kw["fluxes"] = tuple(kw.get("fluxes", ()))
        kw["thrust"] = tuple(kw.get("thrust", ()))
        return cls(**kw)


def calibrate(bc: BoundaryCondition | None = None, grid: Grid | None = None,
              map_cfg: MapConfig = MapConfig(), inner_iterations: int = 500,
              flux_step: float = 2e6, limits: SolverLimits = SolverLimits(),
              kernel=None) -> Calibration:
    bc = bc or BoundaryCondition()
    grid = grid or build_grid(build_geometry(), 500)
    fluxes = np.arange(0.0, map_cfg.w_max + 0.5 * flux_step, flux_step)
    sweep = heat_flux_sweep(bc, fluxes, grid, limits, kernel=kernel)
    started = [p.thrust for p in sweep.points if not (p.unstarted or p.failed)]
    if not started:
        raise HarnessError("no started operating point below w_max")
    tau_high = sweep.max_started_thrust(map_cfg.w_max)
    tau_low = max(0.0, min(started))
    base = run_to_steady(bc, map_cfg.w_bar, grid, limits, kernel=kernel)
    eng = EngineSolver(grid, bc, limits.cfl, limits.order, kernel, base.state)
    eng.iterate(inner_iterations, map_cfg.w_bar + map_cfg.K_w)
    h1 = eng.thrust() - base.thrust
    if not abs(h1) > 0:
        raise HarnessError("zero one-step thrust sensitivity")
    return Calibration(float(tau_low), float(tau_high), float(h1), map_cfg.w_bar, bc.to_dict(),
                       tuple(float(q) for q in fluxes), tuple(float(t) for t in sweep.thrust),
                       inner_iterations)


# ------------------------------------------------------------------ plants

@dataclass
class PlantOutput:
    thrust: float
    unstarted: bool = False
    residuals: tuple = (math.nan, math.nan, math.nan)


class EnginePlant:
    """Full quasi-1D solver, advanced ``inner_iterations`` per control step."""

    kind = "engine"

    def __init__(self, bc: BoundaryCondition, grid: Grid | None = None, inner_iterations: int = 500,
                 w0: float = 10e6, limits: SolverLimits = SolverLimits(), kernel=None,
                 initial=None):
        self.bc = bc
        self.grid = grid or build_grid(build_geometry(), 500)
        self.inner = int(inner_iterations)
        self.limits = limits
        self.kernel = kernel
        if initial is None:
            initial = run_to_steady(bc, w0, self.grid, limits, kernel=kernel).state
        self._initial = initial
        self.reset()

    def reset(self):
        self.solver = EngineSolver(self.grid, self.bc, self.limits.cfl, self.limits.order,
                                   self.kernel, self._initial)
        self._hist = np.empty((self.inner, 3))

    def set_inflow(self, bc: BoundaryCondition):
        self.bc = bc
        self.solver.set_bc(bc)

    def step(self, w: float) -> PlantOutput:
        n = self.solver.iterate(self.inner, w, self._hist)[0]
        last = self._hist[max(n - 1, 0)]
        f = self.solver.field()
        rep = detect_unstart(f, self.bc, self.grid)
        return PlantOutput(self.solver.thrust(), rep.unstarted, tuple(float(v) for v in last))


@dataclass
class LagModel:
    """Second-order ARX lag with unit DC gain.

    y_k = a1 y_{k-1} + a2 y_{k-2} + c0 x_{k-1} + c1 x_{k-2}; the static input
    x is whatever the plant's steady map produces.
    """

    a1: float
    a2: float
    c0: float
    c1: float

    @property
    def dc_gain(self) -> float:
        return (self.c0 + self.c1) / (1.0 - self.a1 - self.a2)

    @classmethod
    def fit(cls, response, step_size: float = 1.0):
        """Fit to a step response ``response[k]`` (deviation, k >= 1) of a
        plant with static gain ``response[-1]/step_size``."""
        d = np.concatenate(([0.0, 0.0], np.asarray(response, dtype=float) / step_size))
        u = np.concatenate(([0.0], np.ones(len(response) + 1)))
        rows, rhs = [], []
        for k in range(2, len(d)):
            rows.append([d[k - 1], d[k - 2], u[k - 1], u[k - 2]])
            rhs.append(d[k])
        a1, a2, b1, b2 = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]
        # normalise so the lag itself has unit static gain
        g = (b1 + b2) / (1.0 - a1 - a2)
        return cls(float(a1), float(a2), float(b1 / g), float(b2 / g))


# fitted once to the default engine at nominal inflow (w_bar -> w_bar + K_w)
DEFAULT_LAG = LagModel(a1=1.0780, a2=-0.3143, c0=0.1585, c1=0.0778)


class LtiPlant:
    """Linear surrogate: y = y0 + gain * lag(u), u = (w - w_bar) / K_w."""

    kind = "lti"

    def __init__(self, y0: float, gain: float, lag: LagModel = DEFAULT_LAG,
                 map_cfg: MapConfig = MapConfig()):
        self.y0, self.gain, self.lag, self.map = float(y0), float(gain), lag, map_cfg
        self.reset()

    def reset(self):
        self._y = [0.0, 0.0]
        self._x = [0.0, 0.0]

    def step(self, w: float) -> PlantOutput:
        x = self.gain * (w - self.map.w_bar) / self.map.K_w
        lg = self.lag
        self._x = [x, self._x[0]]
        y = lg.a1 * self._y[0] + lg.a2 * self._y[1] + lg.c0 * self._x[0] + lg.c1 * self._x[1]
        self._y = [y, self._y[0]]
        return PlantOutput(self.y0 + y)


class TablePlant:
    """Nonlinear surrogate: a static thrust map w -> tau followed by the lag.

    ``thrust_map`` is any callable; ``unstart_flux`` marks the output as
    unstarted at or beyond that heat flux.
    """

    kind = "table"

    def __init__(self, thrust_map, w0: float, lag: LagModel = DEFAULT_LAG,
                 unstart_flux: float | None = None):
        self.thrust_map = thrust_map
        self.w0 = float(w0)
        self.lag = lag
        self.unstart_flux = unstart_flux
        self.reset()

    def reset(self):
        y0 = float(self.thrust_map(self.w0))
        self._y = [y0, y0]
        self._x = [y0, y0]

    def step(self, w: float) -> PlantOutput:
        lg = self.lag
        self._x = [float(self.thrust_map(w)), self._x[0]]
        y = lg.a1 * self._y[0] + lg.a2 * self._y[1] + lg.c0 * self._x[0] + lg.c1 * self._x[1]
        self._y = [y, self._y[0]]
        un = self.unstart_flux is not None and w >= self.unstart_flux
        return PlantOutput(y, un)


def sweep_thrust_map(fluxes, thrust):
    """Piecewise-linear static map from a flux sweep (clamped at the ends)."""
    xs = np.asarray(fluxes, dtype=float)
    ys = np.asarray(thrust, dtype=float)
    return lambda w: float(np.interp(w, xs, ys))


@dataclass(frozen=True)
class PlantSpec:
    """Picklable recipe for a fresh plant (one per experiment)."""

    kind: str = "engine"
    bc: BoundaryCondition = field(default_factory=BoundaryCondition)
    n_cells: int = 500
    inner_iterations: int = 500
    w0: float = 10e6
    y0: float = 0.0
    gain: float = 0.0
    lag: LagModel = DEFAULT_LAG
    fluxes: tuple = ()
    thrust: tuple = ()
    unstart_flux: float | None = None

    def build(self):
        if self.kind == "engine":
            return EnginePlant(self.bc, build_grid(build_geometry(), self.n_cells),
                               self.inner_iterations, self.w0)
        if self.kind == "lti":
            return LtiPlant(self.y0, self.gain, self.lag)
        if self.kind == "table":
            return TablePlant(sweep_thrust_map(self.fluxes, self.thrust), self.w0, self.lag,
                              self.unstart_flux)
        raise ValueError(f"unknown plant kind {self.kind!r}")

    def to_dict(self):
        d = dict(kind=self.kind, bc=self.bc.to_dict())
        if self.kind == "engine":
            d.update(n_cells=self.n_cells, inner_iterations=self.inner_iterations, w0=self.w0)
        elif self.kind == "lti":
            d.update(y0=self.y0, gain=self.gain, lag=asdict(self.lag))
        else:
            d.update(w0=self.w0, lag=asdict(self.lag), fluxes=list(self.fluxes),
                     thrust=list(self.thrust), unstart_flux=self.unstart_flux)
        return d


def surrogate_from_calibration(cal: Calibration, kind: str = "lti",
                               map_cfg: MapConfig = MapConfig()) -> PlantSpec:
    """LTI (linearised at w_bar) or table surrogate of the calibrated engine."""
    bc = BoundaryCondition(**{k: cal.bc[k] for k in ("velocity", "pressure", "temperature")})
    xs, ys = np.array(cal.fluxes), np.array(cal.thrust)
    if kind == "table":
        return PlantSpec("table", bc, w0=cal.w_bar, fluxes=cal.fluxes, thrust=cal.thrust)
    y0 = float(np.interp(cal.w_bar, xs, ys))
    dw = map_cfg.K_w
    gain = float(np.interp(cal.w_bar + dw, xs, ys) - np.interp(cal.w_bar - dw, xs, ys)) / 2.0
    return PlantSpec("lti", bc, y0=y0, gain=gain)


# -------------------------------------------------------------- experiment

@dataclass(frozen=True)
class LoopConfig:
    inner_iterations: int = 500
    control_steps: int = 275
    rcac: RcacConfig = field(default_factory=lambda: RcacConfig(N1=-1.0))
    map: MapConfig = field(default_factory=MapConfig)
    bc: BoundaryCondition = field(default_factory=BoundaryCondition)

    def __post_init__(self):
        if self.inner_iterations < 1 or self.control_steps < 1:
            raise ValueError("inner_iterations and control_steps must be >= 1")

    def with_hyper(self, n: float, p: float) -> "LoopConfig":
        """N1 = -n (thrust rises with heat and z = r - y), P0 = p I."""
        return replace(self, rcac=replace(self.rcac, N1=-float(n), P0_scale=float(p)))

    def to_dict(self):
        return dict(inner_iterations=self.inner_iterations, control_steps=self.control_steps,
                    rcac=dict(asdict(self.rcac), theta0=list(self.rcac.theta0)),
                    map=asdict(self.map), bc=self.bc.to_dict())


def calibrated_loop(cal: Calibration, **kw) -> LoopConfig:
    """Default loop with the error pre-scale taken from ``cal``."""
    rcac = kw.pop("rcac", RcacConfig(N1=-1.0))
    return LoopConfig(rcac=replace(rcac, error_scale=cal.error_scale), **kw)


LOG_COLUMNS = ("k", "r", "y", "z", "u", "w", "K_P", "K_I", "unstart",
               "rms_mass", "rms_energy", "mass_imbalance")


@dataclass
class ExperimentLog:
    rows: list
    meta: dict
    status: str = "ok"
    message: str = ""

    def column(self, name) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def n_steps(self) -> int:
        return len(self.rows)

    def rel_error(self) -> np.ndarray:
        z, r = self.column("z"), self.column("r")
        return np.abs(z) / np.abs(r)

    def settling_step(self, band: float = 0.02, window: int = SETTLE_WINDOW,
                      to_end: bool = False, start: int = 0, stop: int | None = None):
        """First step of a run of ``window`` in-band steps (None if never).

        ``to_end`` additionally requires staying in band until ``stop``.
        """
        e = self.rel_error()[start:stop]
        inb = e < band
        for k in range(len(e) - window + 1):
            if inb[k:k + window].all() and (not to_end or inb[k:].all()):
                return start + k
        return None

    def overshoot(self, start: int = 0, stop: int | None = None) -> float:
        """Peak error past the command, relative to it, in the direction
        opposite to the initial error."""
        z = self.column("z")[start:stop]
        r = abs(self.column("r")[start])
        nz = z[np.abs(z) > 0]
        if nz.size == 0:
            return 0.0
        return float(max(0.0, np.max(-np.sign(nz[0]) * z)) / r)

    def segments(self):
        r = self.column("r")
        cuts = [0] + [k for k in range(1, len(r)) if r[k] != r[k - 1]] + [len(r)]
        return list(zip(cuts[:-1], cuts[1:]))

    def final_gains(self):
        if not self.rows:
            return (math.nan, math.nan)
        return (self.rows[-1][6], self.rows[-1][7])

    def summary(self, band: float = 0.02) -> dict:
        e = self.rel_error()
        return dict(status=self.status, message=self.message, steps=self.n_steps,
                    final_rel_error=float(e[-1]) if len(e) else math.nan,
                    settling_step=self.settling_step(band), band=band,
                    overshoot=self.overshoot() if self.rows else math.nan,
                    final_gains=list(self.final_gains()),
                    any_unstart=bool(any(r[8] for r in self.rows)))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in self.rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def write(self, stem, wall_clock: float | None = None):
        """Write ``stem.csv`` and ``stem.json``; return both paths."""
        csv_path, js_path = f"{stem}.csv", f"{stem}.json"
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv_text())
        man = dict(self.meta, summary=self.summary())
        if wall_clock is not None:
            man["wall_clock_s"] = wall_clock
        with open(js_path, "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True, default=_json_default)
        return csv_path, js_path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def regulate(profile: CommandProfile, cfg: LoopConfig = LoopConfig(), plant=None,
             meta: dict | None = None) -> ExperimentLog:
    """Run one closed-loop experiment.

    Solver divergence ends the run with ``status="diverged"`` and the rows
    logged so far; unstart is only flagged.
    """
    if plant is None:
        plant = EnginePlant(cfg.bc, inner_iterations=cfg.inner_iterations, w0=cfg.map.w_bar)
    ctl = RcacController(cfg.rcac, cfg.map)
    r = profile.commands(cfg.control_steps)
    w = float(ctl.map.w_bar)
    u = 0.0
    rows = []
    log = ExperimentLog(rows, dict(meta or {}, profile=profile.to_dict(), loop=cfg.to_dict(),
                                   plant=getattr(plant, "kind", type(plant).__name__)))
    for k in range(cfg.control_steps):
        try:
            out = plant.step(w)
        except SolverError as e:
            log.status, log.message = "diverged", f"step {k}: {e}"
            break
        y = float(out.thrust)
        z = float(r[k] - y)
        step = ctl.step(z)
        rows.append((k, float(r[k]), y, z, u, w, float(step.theta[0]), float(step.theta[1]),
                     int(out.unstarted), *(float(v) for v in out.residuals)))
        u, w = float(step.u), float(step.w)
    return log


# ------------------------------------------------------------------ sweeps

def _run_job(job):
    profile, cfg, plant, meta = job
    t0 = time.perf_counter()
    try:
        log = regulate(profile, cfg, plant.build(), meta)
    except (SolverError, ArithmeticError, HarnessError) as e:
        log = ExperimentLog([], dict(meta), "failed", str(e))
    return log, time.perf_counter() - t0


def _map_jobs(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_job, jobs))


@dataclass
class SweepCell:
    n: float
    p: float
    log: ExperimentLog
    settling: int | None
    overshoot: float
    wall_clock: float = 0.0


@dataclass
class HyperSweep:
    n_values: list
    p_values: list
    cells: list
    band: float = 0.02

    def cell(self, n, p) -> SweepCell:
        for c in self.cells:
            if c.n == n and c.p == p:
                return c
        raise KeyError((n, p))

    def orderings(self, tol: float = 1e-9) -> dict:
        """Per n: is settling non-increasing and overshoot non-decreasing in p?

        A run that never settles counts as infinitely slow.
        """
        out = {}
        ps = sorted(self.p_values)
        for n in self.n_values:
            st = [self.cell(n, p).settling for p in ps]
            st = [math.inf if s is None else s for s in st]
            ov = [self.cell(n, p).overshoot for p in ps]
            out[n] = dict(
                p=ps, settling=st, overshoot=ov,
                settling_ok=all(b <= a for a, b in zip(st[:-1], st[1:])),
                overshoot_ok=all(b >= a - tol for a, b in zip(ov[:-1], ov[1:])))
        return out

    def ok(self) -> bool:
        return all(v["settling_ok"] and v["overshoot_ok"] for v in self.orderings().values())

    def table(self):
        return [dict(n=c.n, p=c.p, settling=c.settling, overshoot=c.overshoot,
                     status=c.log.status) for c in self.cells]


def hyperparameter_sweep(n_values, p_values, profile: CommandProfile,
                         cfg: LoopConfig = LoopConfig(), plant: PlantSpec | None = None,
                         band: float = 0.02, workers: int = 1) -> HyperSweep:
    """Every (n, p) pair on identical commands; a failed cell is recorded."""
    if not n_values or not p_values:
        raise ValueError("empty hyperparameter grid")
    plant = plant or PlantSpec("engine", cfg.bc, inner_iterations=cfg.inner_iterations,
                               w0=cfg.map.w_bar)
    pairs = [(float(n), float(p)) for n in n_values for p in p_values]
    jobs = [(profile, cfg.with_hyper(n, p), plant, dict(n=n, p=p)) for n, p in pairs]
    cells = []
    for (n, p), (log, wc) in zip(pairs, _map_jobs(jobs, workers)):
        ok = log.status == "ok" and log.rows
        cells.append(SweepCell(n, p, log, log.settling_step(band) if ok else None,
                               log.overshoot() if ok else math.nan, wc))
    return HyperSweep([float(n) for n in n_values], [float(p) for p in p_values], cells, band)


# ------------------------------------------------------------- Monte Carlo

def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


@dataclass
class McSample:
    index: int
    inputs: dict
    command: float
    rejections: int
    max_thrust: float
    log: ExperimentLog
    feasibility: dict = field(default_factory=dict)

    def record(self, band: float = 0.02) -> dict:
        s = self.log.summary(band)
        return dict(index=self.index, **self.inputs, command=self.command,
                    rejections=self.rejections, max_thrust=self.max_thrust,
                    final_rel_error=s["final_rel_error"], settling_step=s["settling_step"],
                    K_P=s["final_gains"][0], K_I=s["final_gains"][1], status=s["status"])


@dataclass
class MonteCarloResult:
    samples: list
    seed: int
    band: float = 0.02

    @property
    def rejections(self) -> int:
        return sum(s.rejections for s in self.samples)

    def table(self):
        return [s.record(self.band) for s in self.samples]

    def gains(self) -> np.ndarray:
        return np.array([s.log.final_gains() for s in self.samples])

    def all_settled(self) -> bool:
        return all(s.log.status == "ok" and s.log.rel_error()[-1] < self.band
                   and s.log.settling_step(self.band) is not None for s in self.samples)


def _inlet_feasibility(bc, command, map_cfg, n_cells, flux_step):
    fluxes = np.arange(0.0, map_cfg.w_max + 0.5 * flux_step, flux_step)
    sweep = heat_flux_sweep(bc, fluxes, build_grid(build_geometry(), n_cells))
    return sweep, sweep.max_started_thrust(map_cfg.w_max)


def monte_carlo_inlet(n_samples: int = 15, ranges: dict | None = None, command: float = 600.0,
                      seed: int = 0, cfg: LoopConfig = LoopConfig(), backend: str = "engine",
                      feasibility: bool = True, n_cells: int = 500, flux_step: float = 2e6,
                      workers: int = 1) -> MonteCarloResult:
    """Regulate ``command`` from independently sampled inlet states.

    Sample i draws from its own child of SeedSequence(seed), so samples do
    not depend on each other or on worker count. With ``feasibility`` on, a
    heat-flux sweep at the drawn state gives the largest started thrust with
    w <= w_max; a command above it is rejected and redrawn.
    """
    ranges = dict(INLET_RANGES, **(ranges or {}))
    for k, (lo, hi) in ranges.items():
        if not 0 < lo <= hi:
            raise ValueError(f"bad range for {k}: {(lo, hi)}")
    children = np.random.SeedSequence(seed).spawn(n_samples)
    drawn = []
    for i, ss in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(ss))
        rej = 0
        while True:
            inp = {k: _uniform(rng, ranges[k]) for k in ("velocity", "temperature", "pressure")}
            bc = BoundaryCondition(**inp)
            sweep, tmax = (None, math.inf)
            if feasibility or backend == "table":
                sweep, tmax = _inlet_feasibility(bc, command, cfg.map, n_cells, flux_step)
            if not feasibility or command <= tmax:
                break
            rej += 1
            if rej >= MAX_RESAMPLES:
                raise ResampleLimitError(f"sample {i}: no feasible draw in {MAX_RESAMPLES} tries")
        drawn.append((i, inp, bc, sweep, tmax, rej))

    jobs = []
    for i, inp, bc, sweep, tmax, rej in drawn:
        c = replace(cfg, bc=bc)
        if backend == "engine":
            plant = PlantSpec("engine", bc, n_cells, cfg.inner_iterations, cfg.map.w_bar)
        elif backend == "table":
            plant = PlantSpec("table", bc, w0=cfg.map.w_bar, fluxes=tuple(sweep.fluxes.tolist()),
                             thrust=tuple(sweep.thrust.tolist()))
        else:
            raise ValueError(f"unknown backend {backend!r}")
        jobs.append((CommandProfile("constant", value=command), c, plant,
                     dict(sample=i, inputs=inp, seed=seed)))
    out = _map_jobs(jobs, workers)
    samples = [McSample(i, inp, command, rej, float(tmax), log,
                        sweep.to_dict() if sweep is not None else {})
               for (i, inp, bc, sweep, tmax, rej), (log, _) in zip(drawn, out)]
    return MonteCarloResult(samples, seed)


def monte_carlo_envelope(table: EnvelopeTable, n_samples: int = 15,
                         altitude_range=(5000.0, 10000.0), velocity_range=(800.0, 1000.0),
                         thrust_range=(300.0, 900.0), seed: int = 0,
                         cfg: LoopConfig = LoopConfig(), backend: str = "engine",
                         n_cells: int = 500, workers: int = 1) -> MonteCarloResult:
    """Sample (altitude, velocity, command), keeping only table-feasible draws.

    Every feasibility decision is made from ``table`` alone; the decision and
    the interpolated max thrust are stored with the sample.
    """
    if table is None:
        raise HarnessError("monte_carlo_envelope needs an envelope table (run 'envelope' first)")
    children = np.random.SeedSequence(seed).spawn(n_samples)
    drawn = []
    for i, ss in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(ss))
        rej = 0
        while True:
            h = _uniform(rng, altitude_range)
            V = _uniform(rng, velocity_range)
            tau = _uniform(rng, thrust_range)
            fz = query_feasible(table, h, V, tau)
            if fz.feasible:
                break
            rej += 1
            if rej >= MAX_RESAMPLES:
                raise ResampleLimitError(f"sample {i}: no feasible draw in {MAX_RESAMPLES} tries")
        drawn.append((i, dict(altitude=h, velocity=V), tau, fz, rej))

    jobs = []
    for i, inp, tau, fz, rej in drawn:
        bc = BoundaryCondition.from_altitude(inp["altitude"], inp["velocity"])
        c = replace(cfg, bc=bc)
        if backend == "engine":
            plant = PlantSpec("engine", bc, n_cells, cfg.inner_iterations, cfg.map.w_bar)
        elif backend == "table":
            fl = tuple(float(q) for q in table.fluxes)
            th = tuple(table.thrust_at(inp["altitude"], inp["velocity"], q) for q in fl)
            plant = PlantSpec("table", bc, w0=cfg.map.w_bar, fluxes=fl, thrust=th)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        jobs.append((CommandProfile("constant", value=tau), c, plant,
                     dict(sample=i, inputs=inp, seed=seed)))
    out = _map_jobs(jobs, workers)
    samples = [McSample(i, inp, tau, rej, fz.max_thrust, log,
                        dict(feasible=fz.feasible, max_thrust=fz.max_thrust))
               for (i, inp, tau, fz, rej), (log, _) in zip(drawn, out)]
    return MonteCarloResult(samples, seed)
