# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled solver hot loop. Same algorithm and signature as _kernel_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, isfinite, INFINITY

cnp.import_array()

DEF OK = 0
DEF BAD_STATE = 1
DEF CONVERGED = 2


cdef inline void _fk(double p, double rk, double pk, double ak, double g,
                     double* f, double* df) noexcept nogil:
    cdef double A, B, sq, r
    if p > pk:
        A = 2.0 / ((g + 1.0) * rk)
        B = (g - 1.0) / (g + 1.0) * pk
        sq = sqrt(A / (p + B))
        f[0] = (p - pk) * sq
        df[0] = sq * (1.0 - 0.5 * (p - pk) / (B + p))
    else:
        r = p / pk
        f[0] = 2.0 * ak / (g - 1.0) * (pow(r, (g - 1.0) / (2.0 * g)) - 1.0)
        df[0] = 1.0 / (rk * ak) * pow(r, -(g + 1.0) / (2.0 * g))


cdef void _riemann(double rL, double uL, double pL, double rR, double uR, double pR,
                   double g, double* out) noexcept nogil:
    cdef double aL = sqrt(g * pL / rL)
    cdef double aR = sqrt(g * pR / rR)
    cdef double z = (g - 1.0) / (2.0 * g)
    cdef double num = aL + aR - 0.5 * (g - 1.0) * (uR - uL)
    cdef double den = aL / pow(pL, z) + aR / pow(pR, z)
    cdef double p, pn, fL, dL, fR, dR, u, gm, SL, SR, aS, c
    cdef int k
    if num > 0.0:
        p = pow(num / den, 1.0 / z)
    else:
        p = 1e-6 * (pL if pL < pR else pR)
    for k in range(60):
        _fk(p, rL, pL, aL, g, &fL, &dL)
        _fk(p, rR, pR, aR, g, &fR, &dR)
        pn = p - (fL + fR + uR - uL) / (dL + dR)
        if pn < 1e-8 * p:
            pn = 1e-8 * p
        if fabs(pn - p) < 1e-13 * (pn + p):
            p = pn
            break
        p = pn
    _fk(p, rL, pL, aL, g, &fL, &dL)
    _fk(p, rR, pR, aR, g, &fR, &dR)
    u = 0.5 * (uL + uR) + 0.5 * (fR - fL)
    gm = (g - 1.0) / (g + 1.0)
    if u >= 0.0:
        if p > pL:
            SL = uL - aL * sqrt((g + 1.0) / (2.0 * g) * p / pL + (g - 1.0) / (2.0 * g))
            if SL >= 0.0:
                out[0] = rL; out[1] = uL; out[2] = pL
                return
            out[0] = rL * (p / pL + gm) / (gm * p / pL + 1.0); out[1] = u; out[2] = p
            return
        if uL - aL >= 0.0:
            out[0] = rL; out[1] = uL; out[2] = pL
            return
        aS = aL * pow(p / pL, (g - 1.0) / (2.0 * g))
        if u - aS <= 0.0:
            out[0] = rL * pow(p / pL, 1.0 / g); out[1] = u; out[2] = p
            return
        c = 2.0 / (g + 1.0) + (g - 1.0) / ((g + 1.0) * aL) * uL
        out[0] = rL * pow(c, 2.0 / (g - 1.0))
        out[1] = 2.0 / (g + 1.0) * (aL + 0.5 * (g - 1.0) * uL)
        out[2] = pL * pow(c, 2.0 * g / (g - 1.0))
        return
    if p > pR:
        SR = uR + aR * sqrt((g + 1.0) / (2.0 * g) * p / pR + (g - 1.0) / (2.0 * g))
        if SR <= 0.0:
            out[0] = rR; out[1] = uR; out[2] = pR
            return
        out[0] = rR * (p / pR + gm) / (gm * p / pR + 1.0); out[1] = u; out[2] = p
        return
    if uR + aR <= 0.0:
        out[0] = rR; out[1] = uR; out[2] = pR
        return
    aS = aR * pow(p / pR, (g - 1.0) / (2.0 * g))
    if u + aS >= 0.0:
        out[0] = rR * pow(p / pR, 1.0 / g); out[1] = u; out[2] = p
        return
    c = 2.0 / (g + 1.0) - (g - 1.0) / ((g + 1.0) * aR) * uR
    out[0] = rR * pow(c, 2.0 / (g - 1.0))
    out[1] = 2.0 / (g + 1.0) * (-aR + 0.5 * (g - 1.0) * uR)
    out[2] = pR * pow(c, 2.0 * g / (g - 1.0))


def riemann_face(double rL, double uL, double pL, double rR, double uR, double pR, double g):
    cdef double out[3]
    _riemann(rL, uL, pL, rR, uR, pR, g, out)
    return out[0], out[1], out[2]


cdef inline double _minmod(double a, double b) noexcept nogil:
    if a * b > 0.0:
        return a if fabs(a) < fabs(b) else b
    return 0.0


cdef inline void _rusanov(double rl, double ul, double pl, double rr, double ur, double pr,
                          double g, double* F) noexcept nogil:
    cdef double rEl = pl / (g - 1.0) + 0.5 * rl * ul * ul
    cdef double rEr = pr / (g - 1.0) + 0.5 * rr * ur * ur
    cdef double sl = fabs(ul) + sqrt(g * pl / rl)
    cdef double sr = fabs(ur) + sqrt(g * pr / rr)
    cdef double s = sl if sl > sr else sr
    F[0] = 0.5 * (rl * ul + rr * ur) - 0.5 * s * (rr - rl)
    F[1] = 0.5 * (rl * ul * ul + pl + rr * ur * ur + pr) - 0.5 * s * (rr * ur - rl * ul)
    F[2] = 0.5 * ((rEl + pl) * ul + (rEr + pr) * ur) - 0.5 * s * (rEr - rEl)


cdef int _residual(double[:, ::1] U, double[::1] Ac, double[::1] Af, double[::1] dx,
                   double[::1] heat, double g, double rin, double uin, double pin,
                   int inlet_kind, int outlet_kind, double p_back, double q_wall, int order,
                   double[:, ::1] res, double[::1] rho, double[::1] u, double[::1] p,
                   double[:, ::1] slope, double[:, ::1] F) noexcept nogil:
    """Fill res, primitive arrays and face fluxes; return 1 if outlet fallback is on."""
    cdef Py_ssize_t n = U.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double pg, rl, ul, pl, rr, ur, pr, rEb
    cdef double fb[3]
    cdef double st[3]
    cdef int fallback = 0
    for i in range(n):
        rho[i] = U[i, 0] / Ac[i]
        u[i] = U[i, 1] / U[i, 0]
        p[i] = (g - 1.0) * (U[i, 2] / Ac[i] - 0.5 * rho[i] * u[i] * u[i])

    pg = p[n - 1]
    if outlet_kind == 2:
        pg = p_back
        fallback = 1
    elif outlet_kind == 0:
        if u[n - 1] < sqrt(g * p[n - 1] / rho[n - 1]):
            pg = p_back
            fallback = 1

    if order == 2 and n > 2:
        for i in range(1, n - 1):
            slope[i, 0] = _minmod(rho[i] - rho[i - 1], rho[i + 1] - rho[i])
            slope[i, 1] = _minmod(u[i] - u[i - 1], u[i + 1] - u[i])
            slope[i, 2] = _minmod(p[i] - p[i - 1], p[i + 1] - p[i])
        for k in range(3):
            slope[0, k] = 0.0
            slope[n - 1, k] = 0.0

    # interior faces
    for j in range(1, n):
        rl = rho[j - 1]; ul = u[j - 1]; pl = p[j - 1]
        rr = rho[j]; ur = u[j]; pr = p[j]
        if order == 2 and n > 2:
            st[0] = rho[j - 1] + 0.5 * slope[j - 1, 0]
            st[1] = u[j - 1] + 0.5 * slope[j - 1, 1]
            st[2] = p[j - 1] + 0.5 * slope[j - 1, 2]
            fb[0] = rho[j] - 0.5 * slope[j, 0]
            fb[1] = u[j] - 0.5 * slope[j, 1]
            fb[2] = p[j] - 0.5 * slope[j, 2]
            if st[0] > 0 and st[2] > 0 and fb[0] > 0 and fb[2] > 0:
                rl = st[0]; ul = st[1]; pl = st[2]
                rr = fb[0]; ur = fb[1]; pr = fb[2]
        _rusanov(rl, ul, pl, rr, ur, pr, g, &F[j, 0])
    # outlet face
    _rusanov(rho[n - 1], u[n - 1], p[n - 1], rho[n - 1], u[n - 1], pg, g, &F[n, 0])
    # inlet face
    if inlet_kind == 0:
        _riemann(rin, uin, pin, rho[0], u[0], p[0], g, fb)
        rEb = fb[2] / (g - 1.0) + 0.5 * fb[0] * fb[1] * fb[1]
        F[0, 0] = fb[0] * fb[1]
        F[0, 1] = fb[0] * fb[1] * fb[1] + fb[2]
        F[0, 2] = (rEb + fb[2]) * fb[1]
    else:
        _rusanov(rin, uin, pin, rho[0], u[0], p[0], g, &F[0, 0])

    for j in range(n + 1):
        F[j, 0] *= Af[j]
        F[j, 1] *= Af[j]
        F[j, 2] *= Af[j]
    for i in range(n):
        res[i, 0] = -(F[i + 1, 0] - F[i, 0]) / dx[i]
        res[i, 1] = (-(F[i + 1, 1] - F[i, 1]) + p[i] * (Af[i + 1] - Af[i])) / dx[i]
        res[i, 2] = (-(F[i + 1, 2] - F[i, 2]) + q_wall * heat[i]) / dx[i]
    return fallback


cdef Py_ssize_t _first_bad(double[:, ::1] U, double[::1] Ac, double g) noexcept nogil:
    cdef Py_ssize_t i
    cdef double r, uu, pp
    for i in range(U.shape[0]):
        r = U[i, 0] / Ac[i]
        if not (r > 0.0):
            return i
        uu = U[i, 1] / U[i, 0]
        pp = (g - 1.0) * (U[i, 2] / Ac[i] - 0.5 * r * uu * uu)
        if not (pp > 0.0) or not isfinite(pp):
            return i
    return -1


def iterate(double[:, ::1] U, int n_iter, double[::1] Ac, double[::1] Af, double[::1] dx,
            double[::1] heat, double gamma, inflow, int inlet_kind, int outlet_kind,
            double p_back, double q_wall, double cfl, int order, double dt_fixed,
            double[:, ::1] hist, stop_tol):
    cdef Py_ssize_t n = U.shape[0]
    cdef double g = gamma
    cdef double rin = inflow[0], uin = inflow[1], pin = inflow[2]
    cdef double tm = stop_tol[0], te = stop_tol[1], ti = stop_tol[2]
    cdef double[:, ::1] res = np.empty((n, 3))
    cdef double[:, ::1] res2 = np.empty((n, 3))
    cdef double[:, ::1] U1 = np.empty((n, 3))
    cdef double[:, ::1] slope = np.zeros((n, 3))
    cdef double[:, ::1] F = np.empty((n + 1, 3))
    cdef double[::1] rho = np.empty(n)
    cdef double[::1] u = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] dt = np.empty(n)
    cdef double[::1] rho2 = np.empty(n)
    cdef double[::1] u2 = np.empty(n)
    cdef double[::1] p2 = np.empty(n)
    cdef Py_ssize_t it, i, k, bad
    cdef int fallback = 0
    cdef double sm, se, fin, fout, imb, t
    cdef int status = OK
    cdef Py_ssize_t done = n_iter
    bad = -1
    with nogil:
        for it in range(n_iter):
            fallback = _residual(U, Ac, Af, dx, heat, g, rin, uin, pin, inlet_kind,
                                 outlet_kind, p_back, q_wall, order, res, rho, u, p, slope, F)
            sm = 0.0
            se = 0.0
            for i in range(n):
                t = res[i, 0] / Ac[i]
                sm += t * t
                t = res[i, 2] / Ac[i]
                se += t * t
            sm = sqrt(sm / n)
            se = sqrt(se / n)
            fin = F[0, 0]
            fout = F[n, 0]
            if fin != 0.0:
                imb = fabs(fout - fin) / fabs(fin)
            else:
                imb = INFINITY
            hist[it, 0] = sm
            hist[it, 1] = se
            hist[it, 2] = imb
            if sm <= tm and se <= te and imb <= ti:
                status = CONVERGED
                done = it
                break
            if dt_fixed > 0.0:
                for i in range(n):
                    dt[i] = dt_fixed
            else:
                for i in range(n):
                    dt[i] = cfl * dx[i] / (fabs(u[i]) + sqrt(g * p[i] / rho[i]))
            for i in range(n):
                for k in range(3):
                    U1[i, k] = U[i, k] + dt[i] * res[i, k]
            bad = _first_bad(U1, Ac, g)
            if bad >= 0:
                status = BAD_STATE
                done = it
                break
            if order == 2:
                _residual(U1, Ac, Af, dx, heat, g, rin, uin, pin, inlet_kind,
                          outlet_kind, p_back, q_wall, order, res2, rho2, u2, p2, slope, F)
                for i in range(n):
                    for k in range(3):
                        U1[i, k] = 0.5 * (U[i, k] + U1[i, k] + dt[i] * res2[i, k])
                bad = _first_bad(U1, Ac, g)
                if bad >= 0:
                    status = BAD_STATE
                    done = it
                    break
            for i in range(n):
                for k in range(3):
                    U[i, k] = U1[i, k]
    return done, status, bad, fallback
