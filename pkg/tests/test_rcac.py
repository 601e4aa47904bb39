import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfrjlab import rcac
from sfrjlab.rcac import (MapConfig, RcacConfig, RcacController, RcacState, RcacStateError,
                          accumulate_error, controller_output, heat_flux_map, rcac_update)

import oracles


def test_accumulate_examples():
    s = RcacState.initial(RcacConfig())
    assert accumulate_error(s, 0.0) == 0.0
    s.gamma_acc = 5.0
    assert accumulate_error(s, -2.0) == 3.0
    s.gamma_acc = 0.0
    for z in (1, 1, 1):
        accumulate_error(s, z)
    assert s.gamma_acc == 3.0


def test_controller_output_examples():
    assert controller_output(np.zeros(2), [3.7, -1.2]) == 0.0
    assert controller_output([3.0, 4.0], [1.0, 2.0]) == 11.0
    assert controller_output([2.0, 123.0], [0.5, 0.0]) == controller_output([2.0, -9.0], [0.5, 0.0])


def test_config_validation():
    for kw in ({"P0_scale": 0.0}, {"N1": 0.0}, {"lam": 0.0}, {"lam": 1.1},
               {"theta0": (0.0,)}, {"error_scale": -1.0}):
        with pytest.raises(ValueError):
            RcacConfig(**kw)
    for kw in ({"w_bar": 0.0}, {"K_w": -1.0}, {"u_max": 0.0}):
        with pytest.raises(ValueError):
            MapConfig(**kw)


def test_no_history_leaves_theta():
    cfg = RcacConfig()
    s = RcacState.initial(cfg)
    th, P = rcac_update(s, 3.0, cfg)
    assert np.array_equal(th, [0, 0]) and np.array_equal(P, 1e-6 * np.eye(2))


def test_one_sample_closed_form():
    cfg = RcacConfig(P0_scale=0.3, N1=1.0)
    s = RcacState.initial(cfg)
    phi0 = np.array([1.5, -0.7])
    s.prev_Phi, s.prev_u = phi0, 0.0
    z1 = 2.3
    th, P = rcac_update(s, z1, cfg)
    P1 = np.linalg.inv(np.eye(2) / 0.3 + np.outer(phi0, phi0))
    assert np.allclose(P, P1, rtol=1e-12, atol=0)
    assert np.allclose(th, -P1 @ phi0 * z1, rtol=1e-12, atol=0)


def test_stationary_when_retrospective_error_zero():
    cfg = RcacConfig(P0_scale=1e-2, N1=-2.0)
    s = RcacState.initial(cfg)
    s.theta = np.array([0.4, -0.1])
    s.prev_Phi, s.prev_u = np.array([1.0, 3.0]), 0.25
    z = cfg.N1 * s.prev_u - cfg.N1 * s.prev_Phi @ s.theta
    th, _ = rcac_update(s, z, cfg)
    assert np.allclose(th, [0.4, -0.1], rtol=0, atol=1e-15)


def _run_history(rng, n, cfg):
    s = RcacState.initial(cfg)
    phis, us, zs = [], [], []
    thetas = []
    for k in range(n):
        phi = rng.normal(size=2) * rng.choice([0.1, 1.0, 10.0])
        u = rng.normal()
        if k:
            z = rng.normal()
            rcac_update(s, z, cfg)
            zs.append(z)
            thetas.append(s.theta.copy())
            assert np.max(np.abs(s.P - s.P.T)) < 1e-12
            assert np.linalg.eigvalsh(s.P).min() > 0
        s.prev_Phi, s.prev_u = phi, u
        phis.append(phi)
        us.append(u)
    return phis, us, zs, thetas


@pytest.mark.parametrize("seed", range(50))
def test_recursive_equals_batch(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    cfg = RcacConfig(P0_scale=float(10 ** rng.uniform(-3, 1)), N1=float(rng.choice([-1, 1]) * 10 ** rng.uniform(-1, 1)),
                     theta0=tuple(rng.normal(size=2)))
    phis, us, zs, thetas = _run_history(rng, n, cfg)
    # every step, not just the last
    for k in range(1, len(zs) + 1):
        ref = oracles.batch_rcac_theta(phis[:k], us[:k], zs[:k], cfg.N1, cfg.P0_scale, cfg.theta0)
        assert np.allclose(thetas[k - 1], ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_forgetting_factor_matches_weighted_batch():
    rng = np.random.default_rng(7)
    cfg = RcacConfig(P0_scale=0.5, N1=1.0, lam=0.97)
    phis, us, zs, thetas = _run_history(rng, 30, cfg)
    ref = oracles.batch_rcac_theta(phis[:29], us[:29], zs, 1.0, 0.5, lam=0.97)
    assert np.allclose(thetas[-1], ref, rtol=1e-9)


def test_loss_of_definiteness_raises():
    cfg = RcacConfig()
    s = RcacState.initial(cfg)
    s.P = np.array([[1.0, 2.0], [2.0, 1.0]])
    s.prev_Phi, s.prev_u = np.array([1.0, 0.0]), 0.0
    with pytest.raises(RcacStateError):
        rcac_update(s, 1.0, cfg)


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-10, 10),
                          st.floats(-1e3, 1e3)), min_size=2, max_size=50),
       st.floats(1e-8, 1e-2))
def test_covariance_stays_spd(samples, p):
    cfg = RcacConfig(P0_scale=p, N1=-1.0)
    s = RcacState.initial(cfg)
    for a, b, u, z in samples:
        rcac_update(s, z, cfg)
        assert np.max(np.abs(s.P - s.P.T)) < 1e-12 * max(1.0, np.abs(s.P).max())
        assert np.linalg.eigvalsh(s.P).min() > 0
        s.prev_Phi, s.prev_u = np.array([a, b]), u


@pytest.mark.parametrize("u,w", [(0.0, 10e6), (2.0, 12e6), (-1.0, 9e6)])
def test_heat_flux_map_examples(u, w):
    assert heat_flux_map(u) == pytest.approx(w, abs=1e-6)


def test_heat_flux_map_clamps():
    assert heat_flux_map(9.0) == 16e6
    assert heat_flux_map(-11.0) == 0.0
    assert heat_flux_map(9.0, clamp=False) == 19e6


def test_zero_start_gives_nominal_flux():
    ctl = RcacController(RcacConfig(N1=-1.0), MapConfig())
    out = ctl.step(250.0)
    assert out.u == 0.0 and out.w == 10e6


def test_anti_windup_holds_gamma_while_saturated():
    ctl = RcacController(RcacConfig(N1=-1.0, theta0=(0.0, 1.0)), MapConfig(u_max=1.0))
    ctl.step(5.0)                       # gamma = 5 -> u = 5 clipped to 1
    assert ctl.saturated
    g = ctl.state.gamma_acc
    ctl.step(5.0)
    assert ctl.state.gamma_acc == g
    # flux clamp counts as saturation and the logged control is the applied one
    ctl = RcacController(RcacConfig(N1=-1.0, theta0=(0.0, 1.0)), MapConfig(w_max=12e6))
    out = ctl.step(4.0)
    assert out.saturated and out.w == 12e6 and out.u == pytest.approx(2.0)


def test_adaptation_speed_monotone_in_p0(calibration):
    from sfrjlab.harness import CommandProfile, calibrated_loop, regulate, surrogate_from_calibration
    plant = surrogate_from_calibration(calibration, "lti")
    cmd = CommandProfile(value=calibration.target(0.5))
    for n in (0.1, 1.0, 10.0):
        first = []
        for p in (1e-8, 1e-7, 1e-6, 1e-5):
            cfg = calibrated_loop(calibration, control_steps=400).with_hyper(n, p)
            z = regulate(cmd, cfg, plant.build()).column("z")
            flips = np.flatnonzero(np.sign(z[1:]) != np.sign(z[0]))
            first.append(int(flips[0]) + 1 if flips.size else np.inf)
        assert all(b <= a for a, b in zip(first, first[1:])), (n, first)


def test_model_free_signatures():
    allowed = {"self", "state", "z", "z_k", "cfg", "theta", "Phi", "u", "clamp"}
    for fn in (accumulate_error, controller_output, rcac_update, heat_flux_map,
               RcacController.step):
        assert set(inspect.signature(fn).parameters) <= allowed, fn.__name__
    fields = {f for f in RcacConfig.__dataclass_fields__}
    assert fields == {"P0_scale", "N1", "lam", "theta0", "error_scale"}
    assert "engine" not in inspect.getsource(rcac) and "thrust" not in inspect.getsource(rcac_update)
