"""Perfect-gas closure and closed-form compressible-flow relations.

Everything here is a pure function of (Mach, gas) or of a flow state, so the
same routines double as independent oracles for the solver tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUBSONIC = "subsonic"
SUPERSONIC = "supersonic"

_BISECT_TOL = 1e-12
_BISECT_MAXITER = 400


class DomainError(ValueError):
    """Input outside the domain of a flow relation."""


class RootFindError(ArithmeticError):
    """Bracketed root find failed to converge."""


@dataclass(frozen=True)
class GasModel:
    """Calorically perfect gas.

    Attributes:
        gamma: ratio of specific heats.
        R: specific gas constant, J/(kg K).
    """

    gamma: float = 1.4
    R: float = 287.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")
        if not self.R > 0.0:
            raise DomainError(f"R must be positive, got {self.R}")

    @property
    def cp(self) -> float:
        return self.gamma * self.R / (self.gamma - 1.0)

    @property
    def cv(self) -> float:
        return self.R / (self.gamma - 1.0)

    def sound_speed(self, T):
        return np.sqrt(self.gamma * self.R * np.asarray(T, dtype=float))


AIR = GasModel()


@dataclass(frozen=True)
class FlowState:
    """Primitive state of a single station.

    Use :meth:`from_primitive` to build a consistent state; the plain
    constructor validates the ideal-gas and Mach identities.
    """

    rho: float
    u: float
    p: float
    T: float
    M: float
    gas: GasModel = AIR

    def __post_init__(self):
        if not (self.rho > 0 and self.p > 0 and self.T > 0):
            raise DomainError(
                f"non-physical state rho={self.rho}, p={self.p}, T={self.T}")
        if abs(self.p - self.rho * self.gas.R * self.T) > 1e-10 * self.p:
            raise DomainError("p != rho R T")
        a = math.sqrt(self.gas.gamma * self.gas.R * self.T)
        if abs(self.M - self.u / a) > 1e-10 * max(abs(self.M), 1e-300):
            raise DomainError("M != u / a")

    @classmethod
    def from_primitive(cls, rho: float, u: float, p: float,
                       gas: GasModel = AIR) -> "FlowState":
        T = p / (rho * gas.R)
        return cls(rho, u, p, T, u / math.sqrt(gas.gamma * gas.R * T), gas)

    @classmethod
    def from_upT(cls, u: float, p: float, T: float,
                 gas: GasModel = AIR) -> "FlowState":
        rho = p / (gas.R * T)
        return cls(rho, u, p, T, u / math.sqrt(gas.gamma * gas.R * T), gas)

    @property
    def a(self) -> float:
        return math.sqrt(self.gas.gamma * self.gas.R * self.T)

    @property
    def Tt(self) -> float:
        return self.T + 0.5 * self.u**2 / self.gas.cp

    @property
    def pt(self) -> float:
        g = self.gas.gamma
        return self.p * (1 + 0.5 * (g - 1) * self.M**2) ** (g / (g - 1))

    @property
    def E(self) -> float:
        """Total energy per unit mass."""
        return self.p / ((self.gas.gamma - 1) * self.rho) + 0.5 * self.u**2


@dataclass(frozen=True)
class IsentropicRatios:
    p_over_pt: float
    T_over_Tt: float
    A_over_Astar: float


def close_pressure(rho, E, u, gas: GasModel = AIR):
    """Pressure from density, total energy per mass, and velocity.

    Works element-wise on arrays. A non-positive return value marks an
    unphysical state; callers that advance the flow reject such steps.
    """
    if np.any(np.asarray(rho) <= 0):
        raise DomainError("density must be positive")
    return (gas.gamma - 1.0) * rho * (E - 0.5 * u * u)


def _check_mach(M):
    if np.any(np.asarray(M) <= 0):
        raise DomainError("Mach number must be positive")


def area_ratio(M, gas: GasModel = AIR):
    """A/A* as a function of Mach, element-wise."""
    _check_mach(M)
    g = gas.gamma
    M = np.asarray(M, dtype=float)
    f = 2.0 / (g + 1) * (1 + 0.5 * (g - 1) * M * M)
    return f ** ((g + 1) / (2 * (g - 1))) / M


def isentropic_ratios(M: float, gas: GasModel = AIR) -> IsentropicRatios:
    _check_mach(M)
    g = gas.gamma
    t = 1.0 / (1.0 + 0.5 * (g - 1) * M * M)
    return IsentropicRatios(
        p_over_pt=float(t ** (g / (g - 1))),
        T_over_Tt=float(t),
        A_over_Astar=float(area_ratio(M, gas)),
    )


def _bisect(f, lo, hi, what):
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise RootFindError(f"{what}: root not bracketed on [{lo}, {hi}]"
                            f" (f={flo:.3e}, {fhi:.3e})")
    for _ in range(_BISECT_MAXITER):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < _BISECT_TOL or hi - lo < 1e-15 * max(1.0, mid):
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    raise RootFindError(f"{what}: no convergence after {_BISECT_MAXITER} "
                        f"bisections, bracket [{lo}, {hi}]")


def mach_from_area_ratio(A_over_Astar: float, branch: str = SUPERSONIC,
                         gas: GasModel = AIR) -> float:
    """Invert the area-Mach relation on one branch by bisection."""
    if A_over_Astar < 1.0:
        raise DomainError(f"A/A* must be >= 1, got {A_over_Astar}")
    if branch not in (SUBSONIC, SUPERSONIC):
        raise ValueError(f"unknown branch {branch!r}")
    if A_over_Astar == 1.0:
        return 1.0

    def f(M):
        return float(area_ratio(M, gas)) - A_over_Astar

    if branch == SUBSONIC:
        return _bisect(f, 1e-12, 1.0, "subsonic area-Mach")
    return _bisect(f, 1.0, 50.0, "supersonic area-Mach")


def rayleigh_total_temperature_ratio(M, gas: GasModel = AIR):
    """Tt/Tt* for frictionless constant-area flow with heat addition."""
    _check_mach(M)
    g = gas.gamma
    M2 = np.asarray(M, dtype=float) ** 2
    out = (g + 1) * M2 * (2 + (g - 1) * M2) / (1 + g * M2) ** 2
    return float(out) if np.ndim(out) == 0 else out


def rayleigh_pressure_ratio(M, gas: GasModel = AIR):
    """Static p/p* along the same Rayleigh line."""
    _check_mach(M)
    g = gas.gamma
    out = (1 + g) / (1 + g * np.asarray(M, dtype=float) ** 2)
    return float(out) if np.ndim(out) == 0 else out


def mach_from_rayleigh_ratio(ratio: float, branch: str = SUBSONIC,
                             gas: GasModel = AIR) -> float:
    """Inverse of :func:`rayleigh_total_temperature_ratio` on one branch."""
    if not 0.0 < ratio <= 1.0:
        raise DomainError(f"Tt/Tt* must be in (0, 1], got {ratio}")
    if ratio == 1.0:
        return 1.0

    def f(M):
        return rayleigh_total_temperature_ratio(M, gas) - ratio

    if branch == SUBSONIC:
        return _bisect(f, 1e-12, 1.0, "subsonic Rayleigh")
    if branch == SUPERSONIC:
        # Tt/Tt* tends to a finite limit as M -> inf, so cap the bracket there
        return _bisect(f, 1.0, 1e3, "supersonic Rayleigh")
    raise ValueError(f"unknown branch {branch!r}")


def heat_to_choke(state: FlowState, mdot_per_area: float | None = None,
                  gas: GasModel | None = None) -> float:
    """Heat per unit mass flow (J/kg) that drives a Rayleigh line to M=1.

    ``mdot_per_area`` is accepted for interface symmetry but does not enter
    the result: the choking heat depends on the inflow Mach and Tt only.
    """
    gas = gas or state.gas
    g = gas.gamma
    Tt = state.T * (1 + 0.5 * (g - 1) * state.M**2)
    ratio = rayleigh_total_temperature_ratio(abs(state.M), gas)
    return gas.cp * Tt * (1.0 / ratio - 1.0)


def normal_shock(M1: float, gas: GasModel = AIR):
    """Downstream Mach and static ratios across a normal shock.

    Returns:
        (M2, p2/p1, rho2/rho1, pt2/pt1)
    """
    if M1 < 1.0:
        raise DomainError("normal shock needs M1 >= 1")
    g = gas.gamma
    m2 = M1 * M1
    M2 = math.sqrt((1 + 0.5 * (g - 1) * m2) / (g * m2 - 0.5 * (g - 1)))
    pr = 1 + 2 * g / (g + 1) * (m2 - 1)
    rr = (g + 1) * m2 / ((g - 1) * m2 + 2)
    ptr = rr ** (g / (g - 1)) * (1 / pr) ** (1 / (g - 1))
    return M2, pr, rr, ptr
