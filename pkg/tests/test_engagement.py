import math

import numpy as np
import pytest

from sfrjlab.atmosphere import G0, speed_of_sound
from sfrjlab.engagement import (DEG, NO_AERO, Autopilot, EngagementConfig, EngagementError,
                                SolverEngine, TableEngine, VehicleState, guidance,
                                interpolation_error_bound, linear_step_response, los,
                                normal_accel, resolve, run_engagement, step_dynamics,
                                step_evader)

import oracles


@pytest.fixture(scope="module")
def setup():
    return resolve(EngagementConfig())


@pytest.fixture(scope="module")
def engagement():
    return run_engagement(EngagementConfig())


# ------------------------------------------------------------------ guidance

def test_guidance_examples():
    assert guidance(1000.0, 0.3, -500.0, 0.0) == 0.0
    assert guidance(1000.0, 0.3, -500.0, 0.01, nav_gain=4.0) == pytest.approx(20.0, abs=1e-12)
    assert guidance(1000.0, 0.0, -500.0, 1.0, g_limit=30) == pytest.approx(30 * G0)
    assert guidance(1000.0, 0.0, -500.0, -1.0, g_limit=30) == pytest.approx(-30 * G0)
    with pytest.raises(EngagementError):
        guidance(0.0, 0.0, -1.0, 0.0)


def test_constant_bearing_course_needs_no_acceleration():
    # straight-line collision: both reach (4000, 7500) at t = 8 s
    hit = np.array([4000.0, 7500.0])
    p0, e0 = np.array([0.0, 7000.0]), np.array([2000.0, 8000.0])
    vp, ve = (hit - p0) / 8.0, (hit - e0) / 8.0
    for t in np.linspace(0, 7.9, 80):
        pp, ee = p0 + vp * t, e0 + ve * t
        p = VehicleState(pp[0], pp[1], float(np.hypot(*vp)), math.atan2(vp[1], vp[0]))
        e = VehicleState(ee[0], ee[1], float(np.hypot(*ve)), math.atan2(ve[1], ve[0]))
        R, beta, Rdot, bdot = los(p, e)
        assert guidance(R, beta, Rdot, bdot) == pytest.approx(0.0, abs=1e-10)


def test_los_geometry():
    p = VehicleState(0.0, 7000.0, 800.0, 0.0)
    e = VehicleState(3000.0, 11000.0, 250.0, 0.0)
    R, beta, Rdot, bdot = los(p, e)
    assert R == pytest.approx(5000.0, rel=1e-15)
    assert beta == pytest.approx(math.atan2(4000, 3000), rel=1e-15)
    assert Rdot == pytest.approx((-550.0 * 3000) / 5000, rel=1e-14)


# ----------------------------------------------------------------- autopilot

def test_autopilot_trim_returns_trim_fin(setup):
    ap = Autopilot(setup.gains)
    ap.trim(35.0, 0.02, 0.05)
    assert ap(35.0, 35.0, 0.02, 0.01) == pytest.approx(0.05, abs=1e-14)
    # zero error leaves the integrator alone
    assert ap(35.0, 35.0, 0.02, 0.01) == pytest.approx(0.05, abs=1e-14)


def test_autopilot_linear_step_settles(setup):
    t, az = linear_step_response(setup.pursuer0, setup.aero, 12e3, setup.gains, 50.0, t_end=3.0)
    tail = az[t >= 1.5]
    assert np.all(np.abs(tail / 50.0 - 1) < 0.05)


def test_autopilot_saturates(setup):
    ap = Autopilot(setup.gains)
    d = ap(3000.0, 0.0, -50.0, 0.01)
    assert abs(d) == pytest.approx(30 * DEG, abs=1e-15)
    xi = ap.xi
    ap(3000.0, 0.0, -50.0, 0.01)
    assert ap.xi == xi          # no wind-up into the stop


def test_autopilot_gain_design_places_poles(setup):
    from sfrjlab.engagement import short_period_model
    A, B, C, D = short_period_model(setup.pursuer0, setup.aero, 12e3)
    g = setup.gains
    # closed loop in [alpha, q, xi] with delta = K_R (K_I xi - K_A a_z - q)
    Aa = np.zeros((3, 3))
    Aa[:2, :2] = A
    Aa[2, :2] = -C[0]
    Ba = np.vstack([B, -D])
    den = 1 + g.K_R * g.K_A * D[0, 0]
    K = g.K_R * np.array([-g.K_A * C[0, 0], -1.0, g.K_I]) / den
    eig = np.sort_complex(np.linalg.eigvals(Aa + Ba @ K[None, :]))
    want = np.sort_complex(np.array([-14 + 20 * math.sqrt(0.51) * 1j,
                                     -14 - 20 * math.sqrt(0.51) * 1j, -5.0]))
    assert np.allclose(eig, want, rtol=1e-8)


# ---------------------------------------------------------------- dynamics

def test_ballistic_energy_and_parabola():
    s = VehicleState(0.0, 5000.0, 200.0, 30 * DEG, mass=100.0)
    dt, n = 0.01, 1000
    E0 = 0.5 * s.V ** 2 + G0 * s.h
    for _ in range(n):
        s = step_dynamics(s, 0.0, 0.0, dt, NO_AERO)
    E1 = 0.5 * s.V ** 2 + G0 * s.h
    assert E1 == pytest.approx(E0, rel=1e-8)
    vx, vy = 200 * math.cos(30 * DEG), 200 * math.sin(30 * DEG)
    assert s.x == pytest.approx(vx * 10.0, rel=1e-8)
    assert s.h == pytest.approx(5000 + vy * 10 - 0.5 * G0 * 100, rel=1e-8)
    # independent integrator on the Cartesian form agrees
    ref = oracles.euler_rk4(lambda y: np.array([y[2], y[3], 0.0, -G0]),
                            [0.0, 5000.0, vx, vy], 10.0, dt)
    assert (s.x, s.h) == pytest.approx((ref[0], ref[1]), rel=1e-10)


def test_step_dynamics_rejects_bad_input():
    s = VehicleState(0.0, 5000.0, 200.0, 0.0)
    with pytest.raises(ValueError):
        step_dynamics(s, 0.0, 0.0, 0.0, NO_AERO)
    with pytest.raises(EngagementError):
        VehicleState(0.0, 5000.0, 0.0, 0.0)
    with pytest.raises(EngagementError):
        VehicleState(0.0, 5000.0, 10.0, 0.0, mass=-1.0)


def test_level_trim_holds_speed(setup):
    s = VehicleState(0.0, 7000.0, setup.pursuer0.V, 0.0, setup.trim_alpha, 0.0, 204.0)
    V0 = s.V
    for _ in range(1000):
        s = step_dynamics(s, setup.trim_delta, 12e3, 0.01, setup.aero)
    assert s.V == pytest.approx(V0, rel=1e-3)
    assert normal_accel(s, setup.aero, setup.trim_delta, 12e3) == pytest.approx(0.0, abs=1e-6)


def test_evader_accelerates(setup):
    cfg = EngagementConfig()
    e = setup.evader0
    assert e.V == pytest.approx(0.75 * speed_of_sound(8000.0), rel=1e-14)
    V = [e.V]
    for _ in range(300):
        e = step_evader(e, cfg.evader, 0.01)
        V.append(e.V)
    assert np.all(np.diff(V) > 0)
    assert e.h == pytest.approx(8000.0, abs=1e-9)


# -------------------------------------------------------------- engagement

def test_config_validation():
    for kw in ({"capture_radius": 0.0}, {"dt": 0.1, "engine_dt": 0.05}, {"backend": "rocket"}):
        with pytest.raises(ValueError):
            EngagementConfig(**kw)


def test_intercept_and_log_shape(engagement):
    log = engagement
    assert log.status == "intercept" and log.miss_distance < 5.0
    t = log.column("t")
    assert np.allclose(np.diff(t), 0.01, atol=1e-12)
    assert np.all(log.column("R") >= 0)
    assert log.meta["scaled_engine"]["scale"] > 1


def test_kinematic_consistency(engagement):
    log = engagement
    dx = log.column("x_e") - log.column("x_p")
    dh = log.column("h_e") - log.column("h_p")
    assert np.max(np.abs(np.hypot(dx, dh) - log.column("R"))) < 1e-9
    assert np.max(np.abs(np.arctan2(dh, dx) - log.column("beta"))) < 1e-9


def test_thrust_regulated_and_gains_evolve(engagement):
    log = engagement
    assert log.thrust_band_after(1.0) < 0.05
    kp, ki = log.column("K_P"), log.column("K_I")
    assert np.ptp(kp) > 0 and np.ptp(ki) > 0
    h, V = log.column("h_p"), log.column("V_p")
    assert np.ptp(h) > 100 and np.ptp(V) > 1         # conditions really vary


def test_engagement_deterministic(engagement):
    again = run_engagement(EngagementConfig())
    assert again.to_csv_text() == engagement.to_csv_text()


def test_engagement_write(tmp_path, engagement):
    import json
    csv_path, js_path = engagement.write(tmp_path / "eng")
    assert open(csv_path).readline().strip().split(",")[:3] == ["t", "x_p", "h_p"]
    man = json.load(open(js_path))
    assert man["summary"]["status"] == "intercept" and "scaled_engine" in man


def test_backend_equivalence_slow_climb(setup, packaged_table):
    """Full solver and table surrogate on a slow (h, V) drift at fixed flux."""
    s, w = setup.scale, setup.w_bar
    h0, V0 = 7000.0, setup.pursuer0.V
    tab, sol = TableEngine(packaged_table, s), SolverEngine(s)
    tab.start(h0, V0, w)
    sol.start(h0, V0, w)
    for k in range(1, 21):
        h, V = h0 + 2.0 * k, V0 + 0.5 * k
        a, b = tab.step(h, V, w), sol.step(h, V, w)
        bound = interpolation_error_bound(packaged_table, h, V, w, s)
        assert abs(a - b) <= bound, (k, a, b, bound)
