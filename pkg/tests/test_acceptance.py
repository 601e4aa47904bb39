"""Acceptance criteria, one test each.

Every test prints a single PASS/FAIL line (collected again in the terminal
summary) and then asserts, so a failing criterion shows both ways.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import SWEEP_STEP, record
from sfrjlab import gas as gd
from sfrjlab.engine import (BoundaryCondition, SolverLimits, build_grid, choking_heat_search,
                            constant_area_duct, detect_unstart, isentropic_state_analysis,
                            run_to_steady)
from sfrjlab.envelope import (DEFAULT_ALTITUDES, DEFAULT_VELOCITIES, DEFAULT_FLUXES, EnvelopeTable,
                              build_envelope, heat_flux_sweep, query_feasible)
from sfrjlab.harness import (CommandProfile, calibrated_loop, hyperparameter_sweep,
                             monte_carlo_envelope, monte_carlo_inlet, regulate,
                             surrogate_from_calibration)
from sfrjlab.rcac import RcacConfig, RcacState, rcac_update

import oracles

pytestmark = pytest.mark.acceptance


# 1 ----------------------------------------------------------------- gas

def test_c01_gas_dynamics_oracles():
    t0 = time.perf_counter()
    worst = 0.0
    for M in (0.5, 1.0, 2.0):
        r = gd.isentropic_ratios(M)
        for got, ref in zip((r.p_over_pt, r.T_over_Tt, r.A_over_Astar), oracles.ISENTROPIC_TABLE[M]):
            worst = max(worst, abs(got / ref - 1))
        tt, pp = oracles.RAYLEIGH_TABLE[M]
        worst = max(worst, abs(gd.rayleigh_total_temperature_ratio(M) / tt - 1),
                    abs(gd.rayleigh_pressure_ratio(M) / pp - 1))
    trip = 0.0
    for M in np.linspace(0.05, 5.0, 500):
        A = gd.isentropic_ratios(M).A_over_Astar
        Mi = gd.mach_from_area_ratio(A, gd.SUPERSONIC if M >= 1 else gd.SUBSONIC)
        trip = max(trip, abs(Mi - M))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4 and trip <= 1e-8 and dt < 1.0
    record(1, "gas-dynamics oracles", ok,
           f"max table rel err {worst:.1e} (<=1e-4), round trip {trip:.1e} (<=1e-8), {dt:.2f} s (<1 s)")
    assert ok


# 2 ------------------------------------------------------------ conservation

def test_c02_zero_heat_conservation(nominal_bc, grid500):
    t0 = time.perf_counter()
    r = run_to_steady(nominal_bc, 0.0, grid500)
    dt = time.perf_counter() - t0
    target = nominal_bc.inflow.M
    inlet = grid500.inlet_mask()
    x_step = grid500.geometry.segment("inlet").x1
    core = inlet & (grid500.x_faces[1:] <= x_step - grid500.smear_length)
    dev = float(np.max(np.abs(r.field.M[core] / target - 1)))
    sup = bool(np.all(r.field.M[inlet] > 1.0))
    ok = r.converged and r.mass_imbalance < 1e-6 and dev < 0.01 and sup and dt < 60
    record(2, "zero-heat conservation", ok,
           f"mass imbalance {r.mass_imbalance:.1e} (<1e-6), inlet M {target:.4f} max dev "
           f"{dev:.2%} over {core.sum()}/{inlet.sum()} cells (<1%), supersonic={sup}, {dt:.1f} s")
    assert ok


# 3 --------------------------------------------------------------- Rayleigh

def test_c03_rayleigh_duct():
    t0 = time.perf_counter()
    g = build_grid(constant_area_duct(1.0, 0.1), 500)
    T, M0 = 300.0, 0.5
    u = M0 * math.sqrt(1.4 * 287.0 * T)
    s = gd.FlowState.from_upT(u, 1e5, T)
    mdot = s.rho * u * float(g.A[0])
    Tt = T * (1 + 0.2 * M0 * M0)
    q_choke = oracles.CP * Tt * (1 / oracles.mp_rayleigh_tt(M0) - 1)     # J/kg
    Ah = g.total_heated_area
    errs = []
    U = None
    for frac in (0.3, 0.6, 0.9, 0.95):
        Me = oracles.rayleigh_exit_mach(M0, 1 + frac * q_choke / (oracles.CP * Tt))
        pb = 1e5 * oracles.mp_rayleigh_p(Me) / oracles.mp_rayleigh_p(M0)
        bc = BoundaryCondition(velocity=u, pressure=1e5, temperature=T, outlet="supersonic",
                               back_pressure=pb, inlet="riemann")
        r = run_to_steady(bc, frac * q_choke * mdot / Ah, g, SolverLimits(max_iterations=100000),
                          initial=U)
        U = r.state
        errs.append(abs(r.field.M[-1] / Me - 1))
    bc = BoundaryCondition(velocity=u, pressure=1e5, temperature=T, inlet="riemann")
    qs = q_choke * mdot / Ah
    cs = choking_heat_search(bc, g, 0.8 * qs, 1.2 * qs)
    cerr = abs(cs.total_heat / (q_choke * mdot) - 1)
    dt = time.perf_counter() - t0
    ok = max(errs) <= 0.02 and cerr <= 0.05 and dt < 120
    record(3, "Rayleigh duct", ok,
           f"exit M max rel err {max(errs):.2%} (<=2%), choking heat err {cerr:.2%} (<=5%), "
           f"{dt:.0f} s (<120 s)")
    assert ok


# 4 ---------------------------------------------------------------- unstart

def test_c04_unstart_phenomenology(nominal_bc, grid500, nominal_sweep):
    t0 = time.perf_counter()
    paper = heat_flux_sweep(nominal_bc, DEFAULT_FLUXES, grid500)
    t8 = time.perf_counter() - t0
    table, res = nominal_sweep
    qs = sorted(res)
    thrust = np.array([res[q].thrust for q in qs])
    qu = table.first_unstart()
    pre = np.array([q < qu for q in qs])
    mono = bool(np.all(np.diff(thrust[pre]) > 0))
    k_drop = next(k for k in range(1, len(qs)) if thrust[k] < thrust[k - 1])
    # inlet Mach probe as used by the unstart detector
    k_sub = next(k for k, q in enumerate(qs)
                 if detect_unstart(res[q].field, nominal_bc, grid500).min_inlet_mach < 1.0)
    coincide = abs(qs[k_drop] - qs[k_sub]) <= SWEEP_STEP
    k_max = int(np.argmax(np.where(pre, thrust, -np.inf)))
    a_max = isentropic_state_analysis(res[qs[k_max]].field, grid500)
    a_un = isentropic_state_analysis(res[qs[k_sub]].field, grid500)
    a_ratio = a_max["combustor"]["A_over_Astar"]
    jump = a_un["inlet"]["p_over_pt"] / a_max["inlet"]["p_over_pt"]
    paper_ok = all(p.converged for p in paper.points) and t8 < 900
    ok = mono and coincide and abs(a_ratio - 1) <= 0.05 and jump > 2 and paper_ok
    record(4, "unstart phenomenology", ok,
           f"monotone pre-unstart={mono}; drop at {qs[k_drop] / 1e6:g} vs inlet subsonic at "
           f"{qs[k_sub] / 1e6:g} MW/m2 (<= {SWEEP_STEP / 1e6:g}); combustor A/A* at max thrust "
           f"{a_ratio:.3f} (|.-1|<=0.05); inlet p/pt jump x{jump:.1f} (>2); "
           f"8-point sweep {t8:.0f} s (<900 s)")
    assert ok


# 5 ------------------------------------------------------------------- RCAC

def test_c05_rcac_batch_equivalence():
    t0 = time.perf_counter()
    worst, min_eig, asym = 0.0, np.inf, 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(2, 51))
        cfg = RcacConfig(P0_scale=float(10 ** rng.uniform(-3, 1)),
                         N1=float(rng.choice([-1, 1]) * 10 ** rng.uniform(-1, 1)),
                         theta0=tuple(rng.normal(size=2)))
        s = RcacState.initial(cfg)
        phis, us, zs = [], [], []
        for k in range(n):
            phi, u = rng.normal(size=2) * rng.choice([0.1, 1.0, 10.0]), rng.normal()
            if k:
                z = rng.normal()
                rcac_update(s, z, cfg)
                zs.append(z)
                ref = oracles.batch_rcac_theta(phis, us, zs, cfg.N1, cfg.P0_scale, cfg.theta0)
                worst = max(worst, float(np.max(np.abs(s.theta - ref)) / np.abs(ref).max()))
                min_eig = min(min_eig, float(np.linalg.eigvalsh(s.P).min()))
                asym = max(asym, float(np.max(np.abs(s.P - s.P.T))))
            s.prev_Phi, s.prev_u = phi, u
            phis.append(phi)
            us.append(u)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and min_eig > 0 and asym == 0.0 and dt < 5
    record(5, "RCAC batch equivalence", ok,
           f"max rel dev {worst:.1e} (<=1e-9) over 50 histories, min eig(P) {min_eig:.1e} (>0), "
           f"asymmetry {asym:.0e}, {dt:.2f} s (<5 s)")
    assert ok


# 6 ------------------------------------------------------------- regulation

def test_c06_step_regulation(calibration):
    t0 = time.perf_counter()
    cfg = calibrated_loop(calibration)
    r = calibration.target(0.5)
    log = regulate(CommandProfile("constant", value=r), cfg)
    k = log.settling_step(0.01, to_end=True)
    dt = time.perf_counter() - t0
    ok = log.status == "ok" and log.n_steps == 275 and k is not None and dt < 1200
    record(6, "step regulation", ok,
           f"command {r:.1f} N, 1% band entered for good at step {k} (<=275), "
           f"final |z|/r {log.rel_error()[-1]:.1e}, {dt:.0f} s (<1200 s)")
    assert ok


# 7 -------------------------------------------------------- hyperparameters

def test_c07_hyperparameter_orderings(calibration):
    cfg = calibrated_loop(calibration)
    prof = CommandProfile("constant", value=calibration.target(0.5))
    n_vals, p_vals = [0.1, 1.0, 10.0], [1e-5, 1e-6, 1e-7, 1e-8]
    eng = hyperparameter_sweep(n_vals, p_vals, prof, cfg)
    t0 = time.perf_counter()
    lti = hyperparameter_sweep(n_vals, p_vals, prof, cfg,
                               surrogate_from_calibration(calibration, "lti"))
    dt = time.perf_counter() - t0
    ok = eng.ok() and lti.ok() and len(lti.cells) == 12 and dt < 30
    bad = [n for n, o in eng.orderings().items() if not (o["settling_ok"] and o["overshoot_ok"])]
    record(7, "hyperparameter orderings", ok,
           f"engine 3x4 grid orderings hold={eng.ok()} (violations at N1 {bad}); "
           f"LTI grid holds={lti.ok()} in {dt:.1f} s (<30 s)")
    assert ok


# 8 ------------------------------------------------------------ Monte Carlo

def test_c08_monte_carlo_inlet(calibration):
    cfg = calibrated_loop(calibration)
    cmd = calibration.target(0.5)
    t0 = time.perf_counter()
    res = monte_carlo_inlet(15, command=cmd, seed=0, cfg=cfg, backend="engine")
    dt = time.perf_counter() - t0
    t1 = time.perf_counter()
    sur = monte_carlo_inlet(15, command=cmd, seed=0, cfg=cfg, backend="table", n_cells=250)
    dt_sur = time.perf_counter() - t1
    G = res.gains()
    spread = np.ptp(G, axis=0) / np.abs(G).mean(axis=0)
    ok = (len(res.samples) == 15 and res.all_settled() and bool(np.all(spread > 0.01))
          and dt < 3600 and sur.all_settled())
    record(8, "Monte Carlo inlet", ok,
           f"15/15 engine samples in 2% band={res.all_settled()}, gain spread K_P {spread[0]:.0%} "
           f"K_I {spread[1]:.0%}, rejections {res.rejections}, engine {dt:.0f} s (<3600 s), "
           f"surrogate settled={sur.all_settled()} in {dt_sur:.0f} s")
    assert ok


# 9 ------------------------------------------------------------- envelope

@pytest.fixture(scope="module")
def built_envelope(tmp_path_factory):
    tab = build_envelope(DEFAULT_ALTITUDES, DEFAULT_VELOCITIES, DEFAULT_FLUXES)
    path = tmp_path_factory.mktemp("env") / "envelope.json"
    tab.save(path)
    return EnvelopeTable.load(path)


def test_c09_feasibility_resampling(built_envelope, calibration):
    tab = built_envelope
    top = float(np.nanmax(tab.max_thrust()))
    cfg = calibrated_loop(calibration, control_steps=40)
    res = monte_carlo_envelope(tab, 15, thrust_range=(0.0, 1.5 * top), seed=0, cfg=cfg,
                               backend="table")
    bad = [s.index for s in res.samples
           if not query_feasible(tab, s.inputs["altitude"], s.inputs["velocity"], s.command).feasible]
    logged = all("rejections" in r for r in res.table())
    ok = not bad and res.rejections > 0 and logged and len(res.samples) == 15
    record(9, "feasibility resampling", ok,
           f"thrust range to {1.5 * top:.0f} N vs table max {top:.0f} N, {res.rejections} "
           f"rejections logged, {len(bad)} accepted-infeasible (==0)")
    assert ok


# 10 ---------------------------------------------------------- engagement

def test_c10_engagement():
    from sfrjlab.engagement import EngagementConfig, run_engagement
    t0 = time.perf_counter()
    log = run_engagement(EngagementConfig())
    dt = time.perf_counter() - t0
    dx = log.column("x_e") - log.column("x_p")
    dh = log.column("h_e") - log.column("h_p")
    eR = float(np.max(np.abs(np.hypot(dx, dh) - log.column("R"))))
    eb = float(np.max(np.abs(np.arctan2(dh, dx) - log.column("beta"))))
    band = log.thrust_band_after(1.0)
    ok = (log.status == "intercept" and log.miss_distance < 5.0 and band < 0.05
          and max(eR, eb) <= 1e-9 and dt < 300)
    record(10, "engagement", ok,
           f"{log.status} at {log.intercept_time} s, miss {log.miss_distance:.2f} m (<5 m), "
           f"thrust within {band:.2%} of command after 1 s (<5%), R/beta residual "
           f"{max(eR, eb):.0e} (<=1e-9), {dt:.1f} s (<300 s)")
    assert ok


# 11 --------------------------------------------------------- determinism

def _artifacts(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())
            if p.suffix == ".csv" or (p.suffix == ".json" and not p.name.startswith("manifest"))}


def test_c11_determinism(tmp_path, calibration):
    from sfrjlab.cli import main
    cal = tmp_path / "cal.json"
    cal.write_text(json.dumps(calibration.to_dict()))
    env = tmp_path / "env0"
    runs = {
        "open-loop": ["open-loop", "--sweep", "0,8e6,16e6", "--cells", "150"],
        "envelope": ["envelope", "--altitudes", "6000,9000", "--velocities", "850,950",
                     "--fluxes", "4e6,8e6,12e6", "--cells", "120", "--no-refine"],
        "regulate": ["regulate", "--calibration", str(cal), "--cells", "150", "--steps", "40"],
        "regulate-random": ["regulate", "--calibration", str(cal), "--backend", "lti",
                            "--command", "random_steps", "--seed", "3"],
        "sweep": ["sweep", "--calibration", str(cal), "--backend", "lti"],
        "montecarlo": ["montecarlo", "--calibration", str(cal), "--backend", "table",
                       "--samples", "3", "--cells", "120", "--steps", "40", "--seed", "4"],
        "montecarlo-envelope": ["montecarlo", "--mode", "envelope", "--table",
                                str(env / "envelope.json"), "--calibration", str(cal),
                                "--altitude-range", "6000,9000", "--velocity-range", "850,950",
                                "--thrust-range", "0,3000", "--backend", "table",
                                "--samples", "4", "--steps", "40"],
        "engage": ["engage"],
        "convergence": ["convergence", "--cells", "60,120,240", "--fluxes", "4e6"],
    }
    mismatched, failed = [], []
    for name, argv in runs.items():
        outs = []
        for rep in range(2):
            d = env if (name == "envelope" and rep == 0) else tmp_path / f"{name}{rep}"
            code = main(argv + ["--threads", "1", "--out", str(d)])
            if code != 0:
                failed.append((name, code))
            outs.append(_artifacts(d))
        if not outs[0] or outs[0] != outs[1]:
            mismatched.append(name)
    ok = not mismatched and not failed
    record(11, "determinism", ok,
           f"{len(runs) - len(mismatched)}/{len(runs)} experiments byte-identical on re-run"
           + (f"; differing: {mismatched}" if mismatched else "")
           + (f"; nonzero exits: {failed}" if failed else ""))
    assert ok
