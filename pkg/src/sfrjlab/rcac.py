"""Adaptive PI control with gains tuned online by retrospective cost (RCAC).

The PI law is written in regressor form, u_k = Phi_k theta_k with
Phi_k = [z_k, gamma_k] and theta = [K_P, K_I]. Each step the gains solve a
recursive least-squares problem on the retrospective error

    zhat(theta) = z_k + N1 Phi_{k-1} theta - N1 u_{k-1},

i.e. the error the loop would have seen had the gains theta been applied
one step earlier, seen through the target model G_f(q) = N1 q^-1.

Note on the sign of N1: the retrospective error vanishes when the filtered
control change cancels the measured error, so N1 must carry the sign of
dz/du of the loop. With z = r - y and heat raising thrust that sign is
negative; the harness passes ``N1 = -n`` for a positive tuning magnitude n.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RcacStateError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RcacConfig:
    P0_scale: float = 1e-6
    N1: float = 1.0
    lam: float = 1.0
    theta0: tuple = (0.0, 0.0)
    error_scale: float = 1.0

    def __post_init__(self):
        if not self.P0_scale > 0:
            raise ValueError("P0_scale must be positive")
        if self.N1 == 0:
            raise ValueError("N1 must be non-zero")
        if not 0 < self.lam <= 1:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if len(self.theta0) != 2:
            raise ValueError("theta0 must have two entries")
        if not self.error_scale > 0:
            raise ValueError("error_scale must be positive")


@dataclass(frozen=True)
class MapConfig:
    """Affine control-to-heat-flux map plus the actuator clamps."""

    w_bar: float = 10e6
    K_w: float = 1e6
    u_max: float = 10.0
    w_max: float = 16e6

    def __post_init__(self):
        if not (self.w_bar > 0 and self.K_w > 0):
            raise ValueError("w_bar and K_w must be positive")
        if not (self.u_max > 0 and self.w_max > 0):
            raise ValueError("clamp limits must be positive")


@dataclass
class RcacState:
    theta: np.ndarray
    P: np.ndarray
    gamma_acc: float = 0.0
    prev_Phi: np.ndarray | None = None
    prev_u: float | None = None
    steps: int = 0

    @classmethod
    def initial(cls, cfg: RcacConfig) -> "RcacState":
        return cls(theta=np.array(cfg.theta0, dtype=float),
                   P=cfg.P0_scale * np.eye(2))

    def copy(self) -> "RcacState":
        return RcacState(self.theta.copy(), self.P.copy(), self.gamma_acc,
                         None if self.prev_Phi is None else self.prev_Phi.copy(),
                         self.prev_u, self.steps)


def accumulate_error(state: RcacState, z: float) -> float:
    state.gamma_acc = state.gamma_acc + z
    return state.gamma_acc


def controller_output(theta, Phi) -> float:
    return float(np.dot(Phi, theta))


def rcac_update(state: RcacState, z_k: float, cfg: RcacConfig):
    """One RLS step on the retrospective error; returns (theta, P).

    With no stored (Phi, u) pair the gains are left unchanged.
    """
    if state.prev_Phi is None or state.prev_u is None:
        return state.theta, state.P
    phi = cfg.N1 * np.asarray(state.prev_Phi, dtype=float)   # filtered regressor
    uf = cfg.N1 * float(state.prev_u)
    P = state.P
    th = state.theta
    e = z_k + phi @ th - uf
    Pphi = P @ phi
    denom = cfg.lam + phi @ Pphi
    K = Pphi / denom
    th = th - K * e
    P = (P - np.outer(K, Pphi)) / cfg.lam
    P = 0.5 * (P + P.T)
    # 2x2: positive definite iff trace and determinant are positive
    det = P[0, 0] * P[1, 1] - P[0, 1] * P[1, 0]
    if not (P[0, 0] > 0 and det > 0):
        raise RcacStateError(f"covariance lost positive definiteness: P={P.tolist()}")
    state.theta = th
    state.P = P
    return th, P


def heat_flux_map(u: float, cfg: MapConfig = MapConfig(), clamp: bool = True) -> float:
    w = cfg.w_bar + cfg.K_w * u
    if clamp:
        w = min(max(w, 0.0), cfg.w_max)
    return w


@dataclass
class StepOutput:
    z: float
    u: float
    w: float
    theta: np.ndarray
    saturated: bool


@dataclass
class RcacController:
    """Per-step driver: accumulate, adapt, compute, clamp.

    Anti-windup: the error is not added to gamma while the previous control
    sat on a clamp (either the u limit or the w limits).
    """

    cfg: RcacConfig = field(default_factory=RcacConfig)
    map: MapConfig = field(default_factory=MapConfig)
    state: RcacState = None
    saturated: bool = False

    def __post_init__(self):
        if self.state is None:
            self.state = RcacState.initial(self.cfg)

    def step(self, z: float) -> StepOutput:
        zs = self.cfg.error_scale * z
        st = self.state
        if not self.saturated:
            accumulate_error(st, zs)
        rcac_update(st, zs, self.cfg)
        Phi = np.array([zs, st.gamma_acc])
        u_raw = controller_output(st.theta, Phi)
        u = min(max(u_raw, -self.map.u_max), self.map.u_max)
        w_raw = self.map.w_bar + self.map.K_w * u
        w = heat_flux_map(u, self.map)
        self.saturated = (u != u_raw) or (w != w_raw)
        # the retrospective error must see the control actually applied
        u_applied = u if w == w_raw else (w - self.map.w_bar) / self.map.K_w
        st.prev_Phi = Phi
        st.prev_u = u_applied
        st.steps += 1
        return StepOutput(z, u_applied, w, st.theta.copy(), self.saturated)

