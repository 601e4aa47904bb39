"""Quasi-1D engine model: geometry, grid, solver, thrust and unstart."""
from .geometry import (EngineGeometry, GeometryError, Grid, Segment, build_geometry, build_grid,
                       constant_area_duct, default_grid)
from .solver import (BoundaryCondition, ChokingSearch, ConservativeState, ConvergenceTable, EngineSolver,
                     FlowField, SolverDivergence, SolverError, SolverLimits, SteadyResult,
                     StepRejected, UnstartCriteria, UnstartReport, advance, compute_thrust,
                     choking_heat_search, detect_unstart, field_thrust, grid_convergence_study,
                     isentropic_state_analysis, run_to_steady, stable_dt, write_field_csv,
                     write_residual_csv)

__all__ = [
    "EngineGeometry", "GeometryError", "Grid", "Segment", "build_geometry", "build_grid",
    "constant_area_duct", "default_grid", "BoundaryCondition", "ConservativeState",
    "ChokingSearch", "ConvergenceTable", "EngineSolver", "FlowField", "SolverDivergence", "SolverError",
    "SolverLimits", "SteadyResult", "StepRejected", "UnstartCriteria", "UnstartReport",
    "advance", "choking_heat_search", "compute_thrust", "detect_unstart", "field_thrust", "grid_convergence_study",
    "isentropic_state_analysis", "run_to_steady", "stable_dt", "write_field_csv",
    "write_residual_csv",
]
