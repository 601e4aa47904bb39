"""Open-loop characterisation: heat-flux sweeps and the flight-envelope table.

The table stores steady thrust and an unstart flag on an (altitude,
velocity, heat flux) grid. Feasibility queries only read the stored table,
so every decision is reproducible without the solver.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .engine.geometry import EngineGeometry, build_geometry, build_grid, geometry_from_dict
from .engine.solver import (BoundaryCondition, SolverError, SolverLimits, run_to_steady)

DEFAULT_FLUXES = tuple(float(q) * 1e6 for q in (2, 4, 6, 8, 10, 12, 14, 16))
# reaches past the nominal unstart point of this engine (about 36 MW/m^2)
EXTENDED_FLUXES = tuple(2e6 * k for k in range(22))
DEFAULT_ALTITUDES = (5000.0, 6250.0, 7500.0, 8750.0, 10000.0)
DEFAULT_VELOCITIES = (800.0, 900.0, 1000.0)
REFINE_STEP = 0.5e6


class OutOfTableError(ValueError):
    pass


@dataclass
class SweepPoint:
    q_wall: float
    thrust: float
    unstarted: bool
    converged: bool
    failed: bool = False
    message: str = ""
    iterations: int = 0
    min_inlet_mach: float = float("nan")
    inlet_pressure_ratio: float = float("nan")


@dataclass
class SweepTable:
    bc: dict
    points: list

    @property
    def fluxes(self):
        return np.array([p.q_wall for p in self.points])

    @property
    def thrust(self):
        return np.array([p.thrust for p in self.points])

    @property
    def unstarted(self):
        return np.array([p.unstarted for p in self.points])

    def first_unstart(self) -> float | None:
        for p in self.points:
            if p.unstarted:
                return p.q_wall
        return None

    def max_started_thrust(self, w_max: float = math.inf) -> float:
        return _scan_max([p.thrust for p in self.points], [p.unstarted for p in self.points],
                         [p.failed for p in self.points], [p.q_wall for p in self.points], w_max)

    def to_dict(self):
        return dict(bc=self.bc, points=[asdict(p) for p in self.points])


def _scan_max(thrust, unstarted, failed, fluxes, w_max=math.inf) -> float:
    """Largest thrust on the flux axis before the first unstart (nan if none)."""
    best = math.nan
    for t, u, f, q in zip(thrust, unstarted, failed, fluxes):
        if u:
            break
        if f or q > w_max or not np.isfinite(t):
            continue
        if not (t <= best):
            best = float(t)
    return best


def heat_flux_sweep(bc: BoundaryCondition, fluxes, grid=None, limits: SolverLimits = SolverLimits(),
                    geometry: EngineGeometry | None = None, n_cells: int = 500,
                    kernel=None, on_result=None) -> SweepTable:
    """Steady thrust along an ascending heat-flux list, warm-starting each point.

    A point whose solve fails is marked and the next point restarts cold.
    ``on_result(q, result)`` is called after every successful solve.
    """
    fluxes = [float(q) for q in fluxes]
    if any(q < 0 for q in fluxes):
        raise ValueError("heat fluxes must be non-negative")
    if any(b < a for a, b in zip(fluxes[:-1], fluxes[1:])):
        raise ValueError("heat fluxes must be sorted ascending")
    if grid is None:
        grid = build_grid(geometry or build_geometry(), n_cells)
    pts = []
    U = None
    for q in fluxes:
        try:
            r = run_to_steady(bc, q, grid, limits, initial=U, kernel=kernel)
        except SolverError as e:
            pts.append(SweepPoint(q, math.nan, False, False, True, str(e)))
            U = None
            continue
        U = r.state
        if on_result is not None:
            on_result(q, r)
        pts.append(SweepPoint(q, r.thrust, r.unstarted, r.converged, False, "", r.iterations,
                              r.unstart.min_inlet_mach, r.unstart.inlet_pressure_ratio))
    return SweepTable(bc.to_dict(), pts)


def refine_fluxes(base, sweep: SweepTable, step: float = REFINE_STEP):
    """Extra fluxes at ``step`` spacing between the last started and first unstarted point."""
    qu = sweep.first_unstart()
    if qu is None:
        return []
    below = [p.q_wall for p in sweep.points if p.q_wall < qu and not p.failed]
    lo = below[-1] if below else 0.0
    n = int(round((qu - lo) / step))
    extra = [lo + i * step for i in range(1, n)]
    return [q for q in extra if q not in base]


@dataclass
class EnvelopeTable:
    altitudes: np.ndarray
    velocities: np.ndarray
    fluxes: np.ndarray
    thrust: np.ndarray          # (na, nv, nq); nan marks a failed point
    unstarted: np.ndarray
    converged: np.ndarray
    failed: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.altitudes = np.asarray(self.altitudes, float)
        self.velocities = np.asarray(self.velocities, float)
        self.fluxes = np.asarray(self.fluxes, float)
        shape = (len(self.altitudes), len(self.velocities), len(self.fluxes))
        self.thrust = np.asarray(self.thrust, float).reshape(shape)
        self.unstarted = np.asarray(self.unstarted, bool).reshape(shape)
        self.converged = np.asarray(self.converged, bool).reshape(shape)
        self.failed = np.asarray(self.failed, bool).reshape(shape)

    @property
    def w_max(self) -> float:
        return float(self.metadata.get("w_max", math.inf))

    def max_thrust(self) -> np.ndarray:
        """(na, nv) largest pre-unstart thrust up to ``w_max``."""
        out = np.empty(self.thrust.shape[:2])
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] = _scan_max(self.thrust[i, j], self.unstarted[i, j],
                                      self.failed[i, j], self.fluxes, self.w_max)
        return out

    def _check_bounds(self, h, V):
        a, v = self.altitudes, self.velocities
        if not (a[0] <= h <= a[-1]) or not (v[0] <= V <= v[-1]):
            raise OutOfTableError(
                f"query (h={h}, V={V}) outside table [{a[0]}, {a[-1]}] x [{v[0]}, {v[-1]}]")

    def max_thrust_at(self, h: float, V: float) -> float:
        self._check_bounds(h, V)
        mt = self.max_thrust()
        if len(self.altitudes) == 1 or len(self.velocities) == 1:
            # degenerate axis: interpolate along the other one only
            if len(self.altitudes) == 1 and len(self.velocities) == 1:
                return float(mt[0, 0])
            if len(self.altitudes) == 1:
                return float(np.interp(V, self.velocities, mt[0]))
            return float(np.interp(h, self.altitudes, mt[:, 0]))
        f = RegularGridInterpolator((self.altitudes, self.velocities), mt,
                                    method="linear", bounds_error=True)
        return float(f([[h, V]])[0])

    def thrust_at(self, h: float, V: float, w: float) -> float:
        """Trilinear thrust lookup, for the surrogate engine."""
        self._check_bounds(h, V)
        if not (self.fluxes[0] <= w <= self.fluxes[-1]):
            raise OutOfTableError(f"heat flux {w} outside table")
        f = RegularGridInterpolator((self.altitudes, self.velocities, self.fluxes), self.thrust,
                                    method="linear", bounds_error=True)
        return float(f([[h, V, w]])[0])

    def to_dict(self) -> dict:
        def arr(a):
            return [None if (isinstance(v, float) and not math.isfinite(v)) else v
                    for v in np.asarray(a).ravel().tolist()]
        return dict(
            format="sfrjlab.envelope/1",
            axes=dict(altitude_m=self.altitudes.tolist(), velocity_mps=self.velocities.tolist(),
                      heat_flux_Wm2=self.fluxes.tolist()),
            shape=list(self.thrust.shape),
            thrust_N=arr(self.thrust),
            unstarted=arr(self.unstarted),
            converged=arr(self.converged),
            failed=arr(self.failed),
            metadata=self.metadata,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "EnvelopeTable":
        if d.get("format") != "sfrjlab.envelope/1":
            raise ValueError("not an envelope table file")
        ax = d["axes"]
        th = np.array([np.nan if v is None else v for v in d["thrust_N"]], float)
        return cls(ax["altitude_m"], ax["velocity_mps"], ax["heat_flux_Wm2"], th,
                   d["unstarted"], d["converged"], d["failed"], d.get("metadata", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EnvelopeTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["altitude_m", "velocity_mps", "heat_flux_Wm2", "thrust_N",
                        "unstarted", "converged", "failed", "negative_thrust"])
            for i, h in enumerate(self.altitudes):
                for j, v in enumerate(self.velocities):
                    for k, q in enumerate(self.fluxes):
                        t = self.thrust[i, j, k]
                        w.writerow([repr(float(h)), repr(float(v)), repr(float(q)),
                                    repr(float(t)), int(self.unstarted[i, j, k]),
                                    int(self.converged[i, j, k]), int(self.failed[i, j, k]),
                                    int(bool(t < 0))])

    def summary_rows(self):
        mt = self.max_thrust()
        for i, h in enumerate(self.altitudes):
            for j, v in enumerate(self.velocities):
                qs = [q for q, u in zip(self.fluxes, self.unstarted[i, j]) if u]
                yield dict(altitude_m=float(h), velocity_mps=float(v),
                           max_thrust_N=float(mt[i, j]),
                           first_unstart_Wm2=float(qs[0]) if qs else None)


@dataclass
class FeasibilityResult:
    feasible: bool
    max_thrust: float


def query_feasible(table: EnvelopeTable, altitude: float, velocity: float,
                   thrust: float) -> FeasibilityResult:
    mt = table.max_thrust_at(altitude, velocity)
    return FeasibilityResult(bool(np.isfinite(mt) and thrust <= mt), mt)


def _sweep_job(args):
    h, V, fluxes, geom_dict, n_cells, limits = args
    geom = geometry_from_dict(geom_dict)
    bc = BoundaryCondition.from_altitude(h, V)
    return heat_flux_sweep(bc, fluxes, build_grid(geom, n_cells), limits)


def build_envelope(altitudes=DEFAULT_ALTITUDES, velocities=DEFAULT_VELOCITIES,
                   fluxes=DEFAULT_FLUXES, geometry: EngineGeometry | None = None,
                   n_cells: int = 500, limits: SolverLimits = SolverLimits(),
                   refine: bool = True, refine_step: float = REFINE_STEP,
                   w_max: float = 16e6, workers: int = 1) -> EnvelopeTable:
    """Full-factorial sweep over ISA inlet states.

    With ``refine`` on, fluxes at ``refine_step`` spacing are added between
    the last started and first unstarted flux of every (altitude, velocity)
    pair, and the whole grid is evaluated on the union axis.
    """
    geometry = geometry or build_geometry()
    alts = [float(a) for a in altitudes]
    vels = [float(v) for v in velocities]
    if not alts or not vels or not len(fluxes):
        raise ValueError("envelope grids must be non-empty")
    base = sorted(float(q) for q in fluxes)
    gd_ = geometry.to_dict()

    def run(fl):
        jobs = [(h, v, fl, gd_, n_cells, limits) for h in alts for v in vels]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                return list(ex.map(_sweep_job, jobs))
        return [_sweep_job(j) for j in jobs]

    sweeps = run(base)
    axis = base
    if refine:
        extra = set()
        for s in sweeps:
            extra.update(refine_fluxes(base, s, refine_step))
        if extra:
            axis = sorted(set(base) | extra)
            sweeps = run(axis)

    shape = (len(alts), len(vels), len(axis))
    th = np.array([[p.thrust for p in s.points] for s in sweeps]).reshape(shape)
    un = np.array([[p.unstarted for p in s.points] for s in sweeps]).reshape(shape)
    cv = np.array([[p.converged for p in s.points] for s in sweeps]).reshape(shape)
    fl = np.array([[p.failed for p in s.points] for s in sweeps]).reshape(shape)
    meta = dict(
        geometry_digest=geometry.digest(),
        geometry=gd_,
        n_cells=n_cells,
        solver=asdict(limits),
        w_max=w_max,
        refined=bool(refine and len(axis) > len(base)),
        inlet_state="ISA troposphere static p, T at each altitude",
        axis_pairing="altitude x velocity per heat flux (inferred layout)",
    )
    return EnvelopeTable(alts, vels, axis, th, un, cv, fl, meta)
