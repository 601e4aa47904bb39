"""Quasi-1D Euler solver for the heated ramjet duct.

Conserved variables per unit length are (rho A, rho u A, rho E A). Faces use
a Rusanov flux (optionally MUSCL-minmod reconstructed); the pressure-area
term p dA/dx is discretised as p_i (A_{i+1/2} - A_{i-1/2}) so a uniform
state at rest on any area profile is preserved exactly. Wall heat enters the
energy equation as q_wall times the heated wall area of each cell.

The inflow face is solved as an exact Riemann problem between the
prescribed freestream and the first cell. This lets a terminal shock leave
the duct upstream, which is the unstart event itself.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import gas as gd
from ..atmosphere import isa
from . import kernel as _kernel
from ._kernel_py import (BAD_STATE, CONVERGED, INLET_DIRICHLET, INLET_RIEMANN,
                         OUTLET_BACKPRESSURE, OUTLET_EXTRAPOLATE, OUTLET_SUPERSONIC)
from .geometry import Grid, build_geometry, build_grid

_OUTLETS = {"supersonic": OUTLET_SUPERSONIC, "extrapolate": OUTLET_EXTRAPOLATE,
            "back_pressure": OUTLET_BACKPRESSURE}
_INLETS = {"riemann": INLET_RIEMANN, "dirichlet": INLET_DIRICHLET}


class SolverError(RuntimeError):
    pass


class StepRejected(SolverError):
    """An update produced non-positive density or pressure."""

    def __init__(self, cell: int, msg: str = ""):
        self.cell = int(cell)
        super().__init__(msg or f"non-physical state in cell {cell}")


class SolverDivergence(SolverError):
    def __init__(self, msg: str, history: np.ndarray, cell: int | None = None):
        self.history = history
        self.cell = cell
        super().__init__(msg)


@dataclass(frozen=True)
class BoundaryCondition:
    """Inflow static state plus outlet treatment.

    ``inlet`` is one of:
      * "riemann": exact Riemann problem between freestream and first cell
        (default; lets a shock leave through the inflow face);
      * "dirichlet": Rusanov flux against a freestream ghost cell.
    ``outlet`` is one of:
      * "supersonic": extrapolate, but fall back to a back-pressure outlet
        whenever the exit flow is subsonic;
      * "extrapolate": always extrapolate;
      * "back_pressure": always impose ``back_pressure``.
    ``back_pressure`` defaults to the inflow static pressure.
    """

    velocity: float = 695.0
    pressure: float = 1.0e5
    temperature: float = 300.0
    outlet: str = "supersonic"
    back_pressure: float | None = None
    inlet: str = "riemann"
    gas: gd.GasModel = gd.AIR
    inlet_mach: float = field(init=False)

    def __post_init__(self):
        if not (self.velocity > 0 and self.pressure > 0 and self.temperature > 0):
            raise ValueError("inlet velocity, pressure and temperature must be positive")
        if self.outlet not in _OUTLETS:
            raise ValueError(f"unknown outlet kind {self.outlet!r}")
        if self.inlet not in _INLETS:
            raise ValueError(f"unknown inlet kind {self.inlet!r}")
        if self.back_pressure is not None and not self.back_pressure > 0:
            raise ValueError("back pressure must be positive")
        a = math.sqrt(self.gas.gamma * self.gas.R * self.temperature)
        object.__setattr__(self, "inlet_mach", self.velocity / a)

    @classmethod
    def from_altitude(cls, altitude: float, velocity: float, **kw) -> "BoundaryCondition":
        atm = isa(altitude)
        return cls(velocity=velocity, pressure=atm.p, temperature=atm.T, **kw)

    @property
    def inflow(self) -> gd.FlowState:
        return gd.FlowState.from_upT(self.velocity, self.pressure, self.temperature, self.gas)

    @property
    def p_back(self) -> float:
        return self.pressure if self.back_pressure is None else self.back_pressure

    def to_dict(self) -> dict:
        return dict(velocity=self.velocity, pressure=self.pressure,
                    temperature=self.temperature, outlet=self.outlet,
                    back_pressure=self.back_pressure, inlet=self.inlet,
                    gamma=self.gas.gamma, R=self.gas.R, inlet_mach=self.inlet_mach)


@dataclass(frozen=True)
class SolverLimits:
    max_iterations: int = 200_000
    residual_drop: float = 1e-6
    mass_tol: float = 1e-6
    # 0.5 makes the minmod limiter cycle and stalls the residual near 1e-2;
    # first-order runs can use 0.5
    cfl: float = 0.3
    order: int = 2
    chunk: int = 2000
    divergence_factor: float = 1e4

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if not 0 < self.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        if self.max_iterations < 1 or self.chunk < 1:
            raise ValueError("iteration counts must be positive")


@dataclass
class FlowField:
    """Primitive fields on the cell centres."""

    x: np.ndarray
    A: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    p: np.ndarray
    gas: gd.GasModel = gd.AIR

    @property
    def T(self):
        return self.p / (self.rho * self.gas.R)

    @property
    def a(self):
        return np.sqrt(self.gas.gamma * self.p / self.rho)

    @property
    def M(self):
        return self.u / self.a

    @property
    def Tt(self):
        return self.T + 0.5 * self.u**2 / self.gas.cp

    @property
    def mdot(self):
        return self.rho * self.u * self.A

    def state(self, i: int) -> gd.FlowState:
        return gd.FlowState.from_primitive(float(self.rho[i]), float(self.u[i]),
                                           float(self.p[i]), self.gas)

    def to_csv(self, path):
        write_field_csv(path, self)


@dataclass
class ConservativeState:
    """Per-cell (rho A, rho u A, rho E A), shape (n, 3), tied to its grid."""

    values: np.ndarray
    grid: Grid

    def copy(self) -> "ConservativeState":
        return ConservativeState(self.values.copy(), self.grid)

    @classmethod
    def uniform(cls, grid: Grid, rho: float, u: float, p: float,
                gas: gd.GasModel = gd.AIR) -> "ConservativeState":
        A = grid.A
        U = np.empty((grid.n_cells, 3))
        U[:, 0] = rho * A
        U[:, 1] = rho * u * A
        U[:, 2] = (p / (gas.gamma - 1.0) + 0.5 * rho * u * u) * A
        return cls(U, grid)

    @classmethod
    def from_bc(cls, grid: Grid, bc: BoundaryCondition) -> "ConservativeState":
        s = bc.inflow
        return cls.uniform(grid, s.rho, s.u, s.p, bc.gas)

    def decode(self, gas: gd.GasModel = gd.AIR) -> FlowField:
        A = self.grid.A
        rho = self.values[:, 0] / A
        u = self.values[:, 1] / self.values[:, 0]
        E = self.values[:, 2] / self.values[:, 0]
        p = gd.close_pressure(rho, E, u, gas)
        bad = np.flatnonzero(~(p > 0))
        if bad.size:
            raise StepRejected(int(bad[0]))
        return FlowField(self.grid.x, A, rho, u, p, gas)

    def totals(self) -> np.ndarray:
        """Integrals of mass, momentum and energy over the domain."""
        return (self.values * self.grid.dx[:, None]).sum(axis=0)


def _kargs(grid: Grid, bc: BoundaryCondition):
    s = bc.inflow
    return (grid.A, grid.A_faces, grid.dx, grid.heated_area, bc.gas.gamma,
            (s.rho, s.u, s.p), _INLETS[bc.inlet], _OUTLETS[bc.outlet], bc.p_back)


def advance(U: ConservativeState, bc: BoundaryCondition, q_wall: float, dt: float,
            order: int = 1, cfl: float = 0.5, kernel=None) -> ConservativeState:
    """One explicit step. ``dt > 0`` is a global step; ``dt <= 0`` uses local CFL steps.

    Raises:
        StepRejected: if the step produces non-positive density or pressure.
    """
    k = kernel or _kernel.get()
    out = U.values.copy()
    hist = np.zeros((1, 3))
    args = _kargs(U.grid, bc)
    _, status, bad, _ = k.iterate(out, 1, *args[:5], args[5], args[6], args[7], args[8],
                                  float(q_wall), cfl, order, float(dt), hist,
                                  (-1.0, -1.0, -1.0))
    if status == BAD_STATE:
        raise StepRejected(bad)
    return ConservativeState(out, U.grid)


def stable_dt(U: ConservativeState, gas: gd.GasModel = gd.AIR, cfl: float = 0.5) -> float:
    f = U.decode(gas)
    return float(np.min(cfl * U.grid.dx / (np.abs(f.u) + f.a)))


def compute_thrust(mdot: float, v_in: float, v_out: float, p_in: float, p_out: float,
                   A_out: float) -> float:
    """Momentum balance over the engine control volume."""
    return mdot * (v_out - v_in) + (p_out - p_in) * A_out


def field_thrust(f: FlowField, A_exit: float) -> float:
    """Thrust using the first cell as the inlet plane and the last as the outlet."""
    mdot = f.rho[-1] * f.u[-1] * A_exit
    return compute_thrust(mdot, f.u[0], f.u[-1], f.p[0], f.p[-1], A_exit)


@dataclass(frozen=True)
class UnstartCriteria:
    """Detection thresholds.

    ``probe_fraction`` limits the Mach check to the upstream part of the
    inlet channel; the smeared terminal shock parked at the step otherwise
    reaches a few cells into the channel before it is actually expelled.
    """

    pressure_ratio: float = 1.05
    probe_fraction: float = 0.5


@dataclass(frozen=True)
class UnstartReport:
    unstarted: bool
    min_inlet_mach: float
    max_combustor_mach: float
    inlet_pressure_ratio: float
    reason: str = ""

    def to_dict(self):
        return dict(unstarted=self.unstarted, min_inlet_mach=self.min_inlet_mach,
                    max_combustor_mach=self.max_combustor_mach,
                    inlet_pressure_ratio=self.inlet_pressure_ratio, reason=self.reason)


def detect_unstart(f: FlowField, bc: BoundaryCondition, grid: Grid | None = None,
                   criteria: UnstartCriteria = UnstartCriteria()) -> UnstartReport:
    M = f.M
    x = f.x
    check_mach = True
    if grid is not None:
        try:
            seg = grid.geometry.segment("inlet")
            probe = (x >= seg.x0) & (x <= seg.x0 + criteria.probe_fraction * (seg.x1 - seg.x0))
        except KeyError:
            # plain duct: no inlet channel, only the pressure test applies
            probe = np.zeros_like(x, dtype=bool)
            check_mach = False
        comb = grid.combustor_mask()
    else:
        probe = np.ones_like(x, dtype=bool)
        comb = np.ones_like(x, dtype=bool)
    min_in = float(M[probe].min()) if probe.any() else float(M[0])
    max_comb = float(M[comb].max()) if comb.any() else float("nan")
    pr = float(f.p[0] / bc.pressure)
    reasons = []
    if check_mach and min_in < 1.0:
        reasons.append("subsonic inlet channel")
    if pr > criteria.pressure_ratio:
        reasons.append("inlet pressure rise")
    return UnstartReport(bool(reasons), min_in, max_comb, pr, "; ".join(reasons))


@dataclass
class SteadyResult:
    field: FlowField
    thrust: float
    converged: bool
    history: np.ndarray
    mass_imbalance: float
    unstarted: bool
    unstart: UnstartReport
    iterations: int
    q_wall: float
    outlet_fallback: bool
    state: ConservativeState
    residual_reference: tuple = (1.0, 1.0)

    def summary(self) -> dict:
        return dict(q_wall=self.q_wall, thrust=self.thrust, converged=self.converged,
                    iterations=self.iterations, mass_imbalance=self.mass_imbalance,
                    unstarted=self.unstarted, outlet_fallback=self.outlet_fallback,
                    **{k: v for k, v in self.unstart.to_dict().items() if k != "unstarted"})


class EngineSolver:
    """Stateful solver instance; owns its conserved state.

    Used directly by the closed loop, which advances a fixed iteration
    budget per control step rather than running to convergence.
    """

    def __init__(self, grid: Grid, bc: BoundaryCondition, cfl: float = 0.3, order: int = 2,
                 kernel=None, state: ConservativeState | None = None):
        self.grid = grid
        self.bc = bc
        self.cfl = cfl
        self.order = order
        self.kernel = kernel or _kernel.get()
        self.state = state.copy() if state is not None else ConservativeState.from_bc(grid, bc)
        self.iterations = 0
        self.outlet_fallback = False
        self.last_residual = np.full(3, np.nan)

    def set_bc(self, bc: BoundaryCondition):
        self.bc = bc

    def iterate(self, n: int, q_wall: float, hist: np.ndarray | None = None,
                stop_tol=(-1.0, -1.0, -1.0)):
        """Run up to ``n`` local-time-step iterations; return (done, status)."""
        if hist is None:
            hist = np.empty((n, 3))
        args = _kargs(self.grid, self.bc)
        done, status, bad, fb = self.kernel.iterate(
            self.state.values, int(n), *args[:5], args[5], args[6], args[7], args[8],
            float(q_wall), self.cfl, self.order, 0.0, hist, stop_tol)
        self.iterations += done
        self.outlet_fallback = bool(fb)
        if done > 0 or status == CONVERGED:
            self.last_residual = hist[min(done, n - 1)].copy()
        if status == BAD_STATE:
            raise StepRejected(bad, f"non-physical state in cell {bad} after "
                                    f"{self.iterations} iterations")
        return done, status

    def field(self) -> FlowField:
        return self.state.decode(self.bc.gas)

    def thrust(self) -> float:
        return field_thrust(self.field(), float(self.grid.A_faces[-1]))

    def unstart(self, criteria: UnstartCriteria = UnstartCriteria()) -> UnstartReport:
        return detect_unstart(self.field(), self.bc, self.grid, criteria)


def run_to_steady(bc: BoundaryCondition, q_wall: float, grid: Grid | None = None,
                  limits: SolverLimits = SolverLimits(), initial: ConservativeState | None = None,
                  criteria: UnstartCriteria = UnstartCriteria(), kernel=None) -> SteadyResult:
    """Iterate with local time stepping until steady or out of iterations.

    Steady means both RMS residuals (mass, energy) fell by ``residual_drop``
    relative to the reference level and the mass imbalance is below
    ``mass_tol``. The reference is the first-iteration residual, floored at
    a freestream throughflow scale so warm starts are not held to an
    unreachable absolute level.

    Raises:
        SolverDivergence: on residual blow-up or a rejected step.
    """
    grid = grid or build_grid(build_geometry(), 500)
    eng = EngineSolver(grid, bc, limits.cfl, limits.order, kernel, initial)
    s = bc.inflow
    L = grid.geometry.length
    floor_m = s.rho * s.u / L
    floor_e = floor_m * (bc.gas.cp * s.T + 0.5 * s.u**2)

    hist = np.empty((limits.max_iterations + 1, 3))
    n_done = 0
    try:
        eng.iterate(1, q_wall, hist[0:1])
    except StepRejected as e:
        raise SolverDivergence(str(e), hist[:1].copy(), e.cell) from e
    ref = (max(hist[0, 0], floor_m), max(hist[0, 1], floor_e))
    tol = (limits.residual_drop * ref[0], limits.residual_drop * ref[1], limits.mass_tol)
    n_done = 1
    converged = False
    while n_done < limits.max_iterations:
        n = min(limits.chunk, limits.max_iterations - n_done)
        try:
            done, status = eng.iterate(n, q_wall, hist[n_done:n_done + n], tol)
        except StepRejected as e:
            h = hist[:n_done + n].copy()
            raise SolverDivergence(f"step rejected at q_wall={q_wall:g}: {e}", h, e.cell) from e
        chunk = hist[n_done:n_done + min(done + 1, n)]
        if not np.all(np.isfinite(chunk[:, :2])) or np.any(
                chunk[:, 0] > limits.divergence_factor * ref[0]):
            raise SolverDivergence(f"residual blow-up at q_wall={q_wall:g}",
                                   hist[:n_done + done].copy())
        if status == CONVERGED:
            n_done += done
            converged = True
            break
        n_done += done

    f = eng.field()
    rep = detect_unstart(f, bc, grid, criteria)
    # the convergence check ran before the final (skipped) update, so the
    # stored row describes exactly the returned state
    last = hist[n_done] if converged else hist[n_done - 1]
    history = hist[:n_done + 1].copy() if converged else hist[:n_done].copy()
    return SteadyResult(
        field=f,
        thrust=field_thrust(f, float(grid.A_faces[-1])),
        converged=converged,
        history=history,
        mass_imbalance=float(last[2]),
        unstarted=rep.unstarted,
        unstart=rep,
        iterations=n_done,
        q_wall=float(q_wall),
        outlet_fallback=eng.outlet_fallback,
        state=eng.state,
        residual_reference=ref,
    )


@dataclass
class ChokingSearch:
    q_wall: float
    total_heat: float
    bracket: tuple
    evaluations: list   # (q_wall, inflow p ratio, inflow mass-flow ratio)


def choking_heat_search(bc: BoundaryCondition, grid: Grid, q_lo: float, q_hi: float,
                        limits: SolverLimits = SolverLimits(max_iterations=30000),
                        back_pressure_ratio: float = 0.3, rtol: float = 2e-3,
                        kernel=None) -> ChokingSearch:
    """Find the wall flux at which heating starts to disrupt a subsonic inflow.

    The outlet is held at ``back_pressure_ratio`` times the inflow pressure,
    low enough that the exit chokes. While the heat is below the choking
    value the choked duct swallows more than the freestream mass flow and
    the first-cell pressure sits under freestream; past it the duct spills
    and that pressure rises above freestream. The sign change of
    p[0]/p_inf - 1 is bracketed and bisected to ``rtol``.

    The exit sits on the sonic point so the residual plateaus instead of
    dropping; each evaluation runs the full iteration budget.
    """
    bc = replace(bc, outlet="supersonic", back_pressure=back_pressure_ratio * bc.pressure)
    mdot_inf = bc.inflow.rho * bc.velocity * float(grid.A_faces[0])
    states = {}
    evals = []

    def disrupted(q):
        near = min(states, key=lambda k: abs(k - q)) if states else None
        r = run_to_steady(bc, q, grid, limits, initial=states.get(near), kernel=kernel)
        states[q] = r.state
        pr = r.field.p[0] / bc.pressure
        evals.append((float(q), float(pr), float(r.field.mdot[0] / mdot_inf)))
        return pr > 1.0

    if disrupted(q_lo):
        raise SolverError(f"inflow already disrupted at the lower bracket q={q_lo:g}")
    if not disrupted(q_hi):
        raise SolverError(f"no inflow disruption up to q={q_hi:g}")
    lo, hi = q_lo, q_hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if disrupted(mid):
            hi = mid
        else:
            lo = mid
    q = 0.5 * (lo + hi)
    return ChokingSearch(q, q * grid.total_heated_area, (lo, hi), evals)


def isentropic_state_analysis(f: FlowField, grid: Grid, gas: gd.GasModel | None = None) -> dict:
    """Isentropic ratios at the inlet-channel and combustor midpoints.

    Returns a dict with keys "inlet" and "combustor", each holding the
    station Mach, (p/pt, T/Tt, A/A*) and the branch the state lies on.
    """
    gas = gas or f.gas
    out = {}
    for name in ("inlet", "combustor"):
        try:
            seg = grid.geometry.segment(name)
            xm = 0.5 * (seg.x0 + seg.x1)
        except KeyError:
            xm = 0.5 * (grid.x[0] + grid.x[-1])
        i = grid.index_at(xm)
        M = abs(float(f.M[i]))
        r = gd.isentropic_ratios(M, gas)
        out[name] = dict(x=float(grid.x[i]), M=M, p_over_pt=r.p_over_pt,
                         T_over_Tt=r.T_over_Tt, A_over_Astar=r.A_over_Astar,
                         branch=gd.SUPERSONIC if M >= 1.0 else gd.SUBSONIC)
    return out


@dataclass
class ConvergenceTable:
    cells: list
    fluxes: list
    thrust: np.ndarray          # (len(cells), len(fluxes))
    unstarted: np.ndarray
    rel_change: np.ndarray      # (len(cells)-1,) max relative change to next refinement
    converged_cells: int | None
    tolerance: float

    def rows(self):
        for i, n in enumerate(self.cells):
            for j, q in enumerate(self.fluxes):
                yield dict(cells=n, q_wall=q, thrust=float(self.thrust[i, j]),
                           unstarted=bool(self.unstarted[i, j]))


def grid_convergence_study(cell_counts, fluxes, bc: BoundaryCondition | None = None,
                           geometry=None, limits: SolverLimits = SolverLimits(),
                           tolerance: float = 0.01, kernel=None) -> ConvergenceTable:
    """Thrust against resolution over a heat-flux sweep.

    The relative change of grid k is the largest |tau_{k+1} - tau_k| over the
    fluxes that are started on both grids, divided by the largest |tau_{k+1}|
    among them. Normalising by the sweep's thrust scale keeps fluxes where
    the thrust crosses zero from dominating. The converged resolution is the
    coarsest grid whose change is below ``tolerance``.
    """
    cells = [int(c) for c in cell_counts]
    if len(cells) < 3:
        raise ValueError("need at least three cell counts")
    bc = bc or BoundaryCondition()
    geometry = geometry or build_geometry()
    fluxes = [float(q) for q in fluxes]
    th = np.full((len(cells), len(fluxes)), np.nan)
    un = np.zeros_like(th, dtype=bool)
    for i, n in enumerate(cells):
        grid = build_grid(geometry, n)
        U0 = None
        for j, q in enumerate(fluxes):
            r = run_to_steady(bc, q, grid, limits, initial=U0, kernel=kernel)
            th[i, j] = r.thrust
            un[i, j] = r.unstarted
            U0 = r.state
    rel = np.full(len(cells) - 1, np.nan)
    for i in range(len(cells) - 1):
        ok = ~(un[i] | un[i + 1])
        if ok.any():
            scale = max(float(np.abs(th[i + 1, ok]).max()), 1e-300)
            rel[i] = float(np.abs(th[i + 1, ok] - th[i, ok]).max()) / scale
    conv = None
    for i in range(len(cells) - 1):
        if rel[i] < tolerance:
            conv = cells[i]
            break
    return ConvergenceTable(cells, fluxes, th, un, rel, conv, tolerance)


def write_field_csv(path, f: FlowField):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "A", "rho", "u", "p", "T", "M"])
        for row in zip(f.x, f.A, f.rho, f.u, f.p, f.T, f.M):
            w.writerow([repr(float(v)) for v in row])


def write_residual_csv(path, history: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "rms_mass", "rms_energy", "mass_imbalance"])
        for k, (a, b, c) in enumerate(history):
            w.writerow([k, repr(float(a)), repr(float(b)), repr(float(c))])


def with_inflow(bc: BoundaryCondition, velocity=None, pressure=None, temperature=None):
    return replace(bc, velocity=velocity if velocity is not None else bc.velocity,
                   pressure=pressure if pressure is not None else bc.pressure,
                   temperature=temperature if temperature is not None else bc.temperature)
