"""Pure numpy implementation of the solver hot loop.

Mirrors ``_kernel.pyx`` operation by operation; used when the compiled
extension is unavailable or when ``SFRJLAB_KERNEL=python`` is set.

Array conventions: ``U`` is (n, 3) holding (rho A, rho u A, rho E A) per cell.
Residuals are time derivatives of those per-unit-length quantities.
"""
from __future__ import annotations

import math

import numpy as np

OK = 0
BAD_STATE = 1
CONVERGED = 2

INLET_RIEMANN = 0
INLET_DIRICHLET = 1

OUTLET_SUPERSONIC = 0
OUTLET_EXTRAPOLATE = 1
OUTLET_BACKPRESSURE = 2


def _fk(p, rk, pk, ak, g):
    if p > pk:
        A = 2.0 / ((g + 1.0) * rk)
        B = (g - 1.0) / (g + 1.0) * pk
        sq = math.sqrt(A / (p + B))
        return (p - pk) * sq, sq * (1.0 - 0.5 * (p - pk) / (B + p))
    r = p / pk
    return (2.0 * ak / (g - 1.0) * (r ** ((g - 1.0) / (2.0 * g)) - 1.0),
            1.0 / (rk * ak) * r ** (-(g + 1.0) / (2.0 * g)))


def riemann_face(rL, uL, pL, rR, uR, pR, g):
    """Exact Riemann solution sampled on the interface x/t = 0."""
    aL = math.sqrt(g * pL / rL)
    aR = math.sqrt(g * pR / rR)
    # two-rarefaction guess, always positive
    z = (g - 1.0) / (2.0 * g)
    num = aL + aR - 0.5 * (g - 1.0) * (uR - uL)
    den = aL / pL ** z + aR / pR ** z
    if num > 0.0:
        p = (num / den) ** (1.0 / z)
    else:
        p = 1e-6 * min(pL, pR)
    for _ in range(60):
        fL, dL = _fk(p, rL, pL, aL, g)
        fR, dR = _fk(p, rR, pR, aR, g)
        pn = p - (fL + fR + uR - uL) / (dL + dR)
        if pn < 1e-8 * p:
            pn = 1e-8 * p
        if abs(pn - p) < 1e-13 * (pn + p):
            p = pn
            break
        p = pn
    fL, _ = _fk(p, rL, pL, aL, g)
    fR, _ = _fk(p, rR, pR, aR, g)
    u = 0.5 * (uL + uR) + 0.5 * (fR - fL)
    gm = (g - 1.0) / (g + 1.0)
    if u >= 0.0:
        if p > pL:
            SL = uL - aL * math.sqrt((g + 1.0) / (2.0 * g) * p / pL + (g - 1.0) / (2.0 * g))
            if SL >= 0.0:
                return rL, uL, pL
            return rL * (p / pL + gm) / (gm * p / pL + 1.0), u, p
        if uL - aL >= 0.0:
            return rL, uL, pL
        aS = aL * (p / pL) ** ((g - 1.0) / (2.0 * g))
        if u - aS <= 0.0:
            return rL * (p / pL) ** (1.0 / g), u, p
        c = 2.0 / (g + 1.0) + (g - 1.0) / ((g + 1.0) * aL) * uL
        return (rL * c ** (2.0 / (g - 1.0)), 2.0 / (g + 1.0) * (aL + 0.5 * (g - 1.0) * uL),
                pL * c ** (2.0 * g / (g - 1.0)))
    if p > pR:
        SR = uR + aR * math.sqrt((g + 1.0) / (2.0 * g) * p / pR + (g - 1.0) / (2.0 * g))
        if SR <= 0.0:
            return rR, uR, pR
        return rR * (p / pR + gm) / (gm * p / pR + 1.0), u, p
    if uR + aR <= 0.0:
        return rR, uR, pR
    aS = aR * (p / pR) ** ((g - 1.0) / (2.0 * g))
    if u + aS >= 0.0:
        return rR * (p / pR) ** (1.0 / g), u, p
    c = 2.0 / (g + 1.0) - (g - 1.0) / ((g + 1.0) * aR) * uR
    return (rR * c ** (2.0 / (g - 1.0)), 2.0 / (g + 1.0) * (-aR + 0.5 * (g - 1.0) * uR),
            pR * c ** (2.0 * g / (g - 1.0)))


def _minmod(a, b):
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _phys(r, u, p, g):
    rE = p / (g - 1.0) + 0.5 * r * u * u
    return r * u, r * u * u + p, (rE + p) * u, rE, np.abs(u) + np.sqrt(g * p / r)


def _residual(U, Ac, Af, dAf, dx, heat, g, inflow, inlet_kind, outlet_kind,
              p_back, q_wall, order):
    """Return (res (n,3), rho, u, p, F0 at inlet face, F0 at outlet face, fallback)."""
    rho = U[:, 0] / Ac
    u = U[:, 1] / U[:, 0]
    p = (g - 1.0) * (U[:, 2] / Ac - 0.5 * rho * u * u)
    n = rho.shape[0]

    # outlet ghost
    fallback = 0
    pg = p[-1]
    if outlet_kind == OUTLET_BACKPRESSURE:
        pg = p_back
        fallback = 1
    elif outlet_kind == OUTLET_SUPERSONIC:
        if u[-1] < math.sqrt(g * p[-1] / rho[-1]):
            pg = p_back
            fallback = 1

    # face states: index j = 0..n
    rL = np.empty(n + 1)
    uL = np.empty(n + 1)
    pL = np.empty(n + 1)
    rR = np.empty(n + 1)
    uR = np.empty(n + 1)
    pR = np.empty(n + 1)
    rL[1:] = rho
    uL[1:] = u
    pL[1:] = p
    rR[:-1] = rho
    uR[:-1] = u
    pR[:-1] = p
    rR[n] = rho[-1]
    uR[n] = u[-1]
    pR[n] = pg
    if order == 2 and n > 2:
        w = (rho, u, p)
        left = (rL, uL, pL)
        right = (rR, uR, pR)
        sl = [np.zeros(n) for _ in range(3)]
        for k in range(3):
            sl[k][1:-1] = _minmod(w[k][1:-1] - w[k][:-2], w[k][2:] - w[k][1:-1])
        # candidate reconstructions on interior faces j=1..n-1
        cL = [w[k][:-1] + 0.5 * sl[k][:-1] for k in range(3)]
        cR = [w[k][1:] - 0.5 * sl[k][1:] for k in range(3)]
        okf = (cL[0] > 0) & (cL[2] > 0) & (cR[0] > 0) & (cR[2] > 0)
        for k in range(3):
            left[k][1:n] = np.where(okf, cL[k], left[k][1:n])
            right[k][1:n] = np.where(okf, cR[k], right[k][1:n])

    f0L, f1L, f2L, eL, sL = _phys(rL[1:], uL[1:], pL[1:], g)
    f0R, f1R, f2R, eR, sR = _phys(rR[1:], uR[1:], pR[1:], g)
    s = np.maximum(sL, sR)
    F = np.empty((n + 1, 3))
    F[1:, 0] = 0.5 * (f0L + f0R) - 0.5 * s * (rR[1:] - rL[1:])
    F[1:, 1] = 0.5 * (f1L + f1R) - 0.5 * s * (rR[1:] * uR[1:] - rL[1:] * uL[1:])
    F[1:, 2] = 0.5 * (f2L + f2R) - 0.5 * s * (eR - eL)

    rin, uin, pin = inflow
    if inlet_kind == INLET_RIEMANN:
        rb, ub, pb = riemann_face(rin, uin, pin, rho[0], u[0], p[0], g)
        rEb = pb / (g - 1.0) + 0.5 * rb * ub * ub
        F[0, 0] = rb * ub
        F[0, 1] = rb * ub * ub + pb
        F[0, 2] = (rEb + pb) * ub
    else:
        rEi = pin / (g - 1.0) + 0.5 * rin * uin * uin
        rE0 = p[0] / (g - 1.0) + 0.5 * rho[0] * u[0] * u[0]
        si = max(abs(uin) + math.sqrt(g * pin / rin), abs(u[0]) + math.sqrt(g * p[0] / rho[0]))
        F[0, 0] = 0.5 * (rin * uin + rho[0] * u[0]) - 0.5 * si * (rho[0] - rin)
        F[0, 1] = (0.5 * (rin * uin * uin + pin + rho[0] * u[0] * u[0] + p[0])
                   - 0.5 * si * (rho[0] * u[0] - rin * uin))
        F[0, 2] = 0.5 * ((rEi + pin) * uin + (rE0 + p[0]) * u[0]) - 0.5 * si * (rE0 - rEi)

    F *= Af[:, None]
    res = np.empty((n, 3))
    res[:, 0] = -(F[1:, 0] - F[:-1, 0]) / dx
    res[:, 1] = (-(F[1:, 1] - F[:-1, 1]) + p * dAf) / dx
    res[:, 2] = (-(F[1:, 2] - F[:-1, 2]) + q_wall * heat) / dx
    return res, rho, u, p, F[0, 0], F[n, 0], fallback


def _first_bad(U, Ac, g):
    rho = U[:, 0] / Ac
    u = U[:, 1] / np.where(U[:, 0] != 0.0, U[:, 0], 1.0)
    p = (g - 1.0) * (U[:, 2] / Ac - 0.5 * rho * u * u)
    bad = ~((rho > 0.0) & (p > 0.0) & np.isfinite(p))
    if np.any(bad):
        return int(np.argmax(bad))
    return -1


def iterate(U, n_iter, Ac, Af, dx, heat, gamma, inflow, inlet_kind,
            outlet_kind, p_back, q_wall, cfl, order, dt_fixed, hist,
            stop_tol):
    """Advance ``U`` in place by up to ``n_iter`` explicit iterations.

    Args:
        dt_fixed: global time step if > 0, otherwise local time stepping at
            the given CFL number.
        hist: (n_iter, 3) output array for (rms_mass, rms_energy,
            mass_imbalance) of each iteration, evaluated before the update.
        stop_tol: length-3 thresholds; iteration stops early once all three
            history entries fall at or below them.

    Returns:
        (iterations_done, status, bad_cell, fallback_active)
    """
    g = float(gamma)
    dAf = Af[1:] - Af[:-1]
    args = (Ac, Af, dAf, dx, heat, g, inflow, inlet_kind, outlet_kind, p_back, q_wall, order)
    fallback = 0
    for it in range(n_iter):
        res, rho, u, p, fin, fout, fallback = _residual(U, *args)
        rm = math.sqrt(float(np.mean((res[:, 0] / Ac) ** 2)))
        re = math.sqrt(float(np.mean((res[:, 2] / Ac) ** 2)))
        imb = abs(fout - fin) / abs(fin) if fin != 0.0 else math.inf
        hist[it, 0] = rm
        hist[it, 1] = re
        hist[it, 2] = imb
        if rm <= stop_tol[0] and re <= stop_tol[1] and imb <= stop_tol[2]:
            return it, CONVERGED, -1, fallback
        if dt_fixed > 0.0:
            dt = np.full(Ac.shape[0], dt_fixed)
        else:
            dt = cfl * dx / (np.abs(u) + np.sqrt(g * p / rho))
        U1 = U + dt[:, None] * res
        bad = _first_bad(U1, Ac, g)
        if bad >= 0:
            return it, BAD_STATE, bad, fallback
        if order == 2:
            res2 = _residual(U1, *args)[0]
            U1 = 0.5 * (U + U1 + dt[:, None] * res2)
            bad = _first_bad(U1, Ac, g)
            if bad >= 0:
                return it, BAD_STATE, bad, fallback
        U[:] = U1
    return n_iter, OK, -1, fallback
