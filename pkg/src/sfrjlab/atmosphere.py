"""ISA troposphere (0 to 11 km)."""
from __future__ import annotations

from dataclasses import dataclass

T0 = 288.15       # K
P0 = 101325.0     # Pa
LAPSE = 0.0065    # K/m
G0 = 9.80665      # m/s^2
R_AIR = 287.0     # J/(kg K)
H_MAX = 11000.0   # tropopause, m


@dataclass(frozen=True)
class AtmoState:
    h: float
    T: float
    p: float
    rho: float


def isa(h: float) -> AtmoState:
    """Standard-day static conditions at geometric altitude ``h`` (m).

    Raises:
        ValueError: if ``h`` lies outside the troposphere.
    """
    h = float(h)
    if not 0.0 <= h <= H_MAX:
        raise ValueError(f"altitude {h} m outside troposphere [0, {H_MAX}]")
    T = T0 - LAPSE * h
    p = P0 * (T / T0) ** (G0 / (R_AIR * LAPSE))
    return AtmoState(h=h, T=T, p=p, rho=p / (R_AIR * T))


def speed_of_sound(h: float, gamma: float = 1.4) -> float:
    return (gamma * R_AIR * isa(h).T) ** 0.5
