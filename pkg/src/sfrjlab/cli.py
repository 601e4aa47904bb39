"""``sfrjlab`` command line: one subcommand per experiment.

Exit codes:
    0  success
    2  configuration error (bad flag, bad or missing file, missing prerequisite)
    3  solver failure (partial artifacts are kept)
    4  acceptance gate missed (only when ``--gate`` is given)

Precedence: flags > config file > built-in defaults. A config file is JSON;
keys may sit at the top level or under a section named after the
subcommand. A manifest written by a previous run is also accepted and
replays that run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_GATE = 4

ENV_OUT = "SFRJLAB_OUT"
DEFAULT_OUT = "sfrjlab_out"

log = logging.getLogger("sfrjlab")


class ConfigError(ValueError):
    pass


class GateFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- options

def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(x) for x in str(v).split(",") if x.strip()]


def _ints(v):
    return [int(x) for x in _floats(v)]


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    return None if v is None else float(v)


@dataclass(frozen=True)
class Opt:
    name: str
    conv: object
    default: object
    help: str = ""
    choices: tuple | None = None

    @property
    def dest(self):
        return self.name.replace("-", "_")


_INLET = [
    Opt("velocity", float, 695.0, "inflow velocity, m/s"),
    Opt("pressure", float, 1.0e5, "inflow static pressure, Pa"),
    Opt("temperature", float, 300.0, "inflow static temperature, K"),
    Opt("altitude", _opt_float, None, "ISA altitude, m (replaces pressure and temperature)"),
]
_SOLVER = [
    Opt("cells", int, 500, "grid cells"),
    Opt("geometry", str, None, "JSON file of geometry overrides"),
    Opt("max-iterations", int, 200000, "solver iteration cap per steady solve"),
    Opt("order", int, 2, "spatial order (1 or 2)", (1, 2)),
    Opt("cfl", float, 0.3, "CFL number"),
]
_LOOP = [
    Opt("command", str, "step", "command profile", ("step", "constant", "random_steps", "sequence")),
    Opt("target", str, "calibrated-50pct",
        "command level: calibrated-<pct>pct, raw:<N> (300-900 N mapped into the span) or N"),
    Opt("values", _floats, None, "sequence command levels (same syntax as a list of N)"),
    Opt("low", float, 300.0, "random_steps lower raw bound, N"),
    Opt("high", float, 900.0, "random_steps upper raw bound, N"),
    Opt("hold", int, 40, "random_steps hold, control steps"),
    Opt("steps", int, 275, "control steps"),
    Opt("inner", int, 500, "solver iterations per control step"),
    Opt("backend", str, "engine", "plant", ("engine", "lti", "table")),
    Opt("band", float, 0.02, "settling band, relative"),
    Opt("calibration", str, None, "reuse a calibration JSON instead of recomputing"),
    Opt("error-scale", _opt_float, None, "RCAC error pre-scale (default 1/one-step sensitivity)"),
]
_GATE = [Opt("gate", _bool, False, "exit 4 when the run misses its acceptance check")]

OPTIONS = {
    "open-loop": _INLET + _SOLVER + [
        Opt("flux", _opt_float, None, "single steady solve at this heat flux, W/m^2"),
        Opt("sweep", str, None, "'default' (2..16 MW/m^2), 'extended' (0..42 MW/m^2, reaches unstart) or a comma list"),
        Opt("outlet", str, "supersonic", "outlet treatment",
            ("supersonic", "extrapolate", "back_pressure")),
    ],
    "envelope": _SOLVER + [
        Opt("altitudes", _floats, None, "altitudes, m"),
        Opt("velocities", _floats, None, "velocities, m/s"),
        Opt("fluxes", _floats, None, "heat fluxes, W/m^2"),
        Opt("refine", _bool, True, "refine fluxes around each unstart"),
        Opt("w-max", float, 16e6, "actuator ceiling used for max thrust"),
    ],
    "regulate": _INLET + _SOLVER + _LOOP + [
        Opt("n", float, 1.0, "N1 magnitude"),
        Opt("p", float, 1e-6, "P0 scale"),
        Opt("seed-command", int, None, "seed for random_steps (default: --seed)"),
    ] + _GATE,
    "sweep": _INLET + _SOLVER + _LOOP + [
        Opt("n", _floats, [0.1, 1.0, 10.0], "N1 magnitudes"),
        Opt("p", _floats, [1e-5, 1e-6, 1e-7, 1e-8], "P0 scales"),
    ] + _GATE,
    "montecarlo": _INLET + _SOLVER + _LOOP + [
        Opt("mode", str, "inlet", "inlet: sample (V, T, p); envelope: sample (h, V, thrust)",
            ("inlet", "envelope")),
        Opt("samples", int, 15, "number of samples"),
        Opt("table", str, None, "envelope table JSON (required for --mode envelope)"),
        Opt("feasibility", _bool, True, "reject infeasible draws (inlet mode)"),
        Opt("thrust-range", _floats, [300.0, 900.0], "envelope mode: command range, N"),
        Opt("altitude-range", _floats, [5000.0, 10000.0], "envelope mode: altitude range, m"),
        Opt("velocity-range", _floats, [800.0, 1000.0], "envelope mode: velocity range, m/s"),
    ] + _GATE,
    "engage": [
        Opt("preset", str, "baseline", "initial conditions preset", ("baseline",)),
        Opt("backend", str, "surrogate", "engine model", ("surrogate", "engine")),
        Opt("table", str, None, "unit-scale thrust table (default: packaged table)"),
        Opt("t-max", float, 30.0, "timeout, s"),
        Opt("dt", float, 0.01, "dynamics step, s"),
        Opt("engine-dt", float, 0.05, "engine controller period, s"),
        Opt("nav-gain", float, 4.0, "proportional navigation constant"),
        Opt("g-limit", float, 30.0, "guidance acceleration limit, g"),
        Opt("capture-radius", float, 5.0, "intercept radius, m"),
        Opt("thrust-command", float, 12e3, "thrust command, N"),
        Opt("cells", int, 500, "grid cells (engine backend)"),
        Opt("inner", int, 500, "solver iterations per engine step (engine backend)"),
    ] + _GATE,
    "convergence": _INLET + [
        Opt("cells", _ints, [250, 500, 1000, 2000], "cell counts, coarse to fine"),
        Opt("fluxes", _floats, [4e6, 8e6, 12e6, 16e6], "heat fluxes, W/m^2 (heated, pre-unstart)"),
        Opt("tolerance", float, 0.01, "relative thrust change accepted as converged"),
        Opt("geometry", str, None, "JSON file of geometry overrides"),
        Opt("max-iterations", int, 200000, "solver iteration cap per steady solve"),
    ],
}

GLOBAL_KEYS = ("out", "seed", "threads", "verbose")


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    out: str
    seed: int = 0
    threads: int = 1
    verbose: int = 0

    def to_dict(self):
        return asdict(self)


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def load_config_file(path: str, sub: str) -> tuple[dict, dict]:
    """Returns (global settings, subcommand params) from a JSON file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{path}: config file not found")
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: top level must be an object")
    if "run_config" in data:           # a manifest from an earlier run
        rc = data["run_config"]
        if rc.get("subcommand") != sub:
            raise ConfigError(f"{path}: manifest is for '{rc.get('subcommand')}', not '{sub}'")
        return {k: rc[k] for k in GLOBAL_KEYS if k in rc}, dict(rc.get("params", {}))
    known = {o.dest for o in OPTIONS[sub]} | {o.name for o in OPTIONS[sub]}
    glob = {k: data[k] for k in GLOBAL_KEYS if k in data}
    params = {}
    for k, v in data.items():
        if k in GLOBAL_KEYS or k in OPTIONS:
            continue
        if k not in known:
            raise ConfigError(f"{path}:{_line_of(text, k)}: unknown key '{k}' for '{sub}'")
        params[k.replace("-", "_")] = v
    sec = data.get(sub, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{path}:{_line_of(text, sub)}: section '{sub}' must be an object")
    for k, v in sec.items():
        if k in GLOBAL_KEYS:
            glob[k] = v
        elif k not in known:
            raise ConfigError(f"{path}:{_line_of(text, k)}: unknown key '{k}' for '{sub}'")
        else:
            params[k.replace("-", "_")] = v
    return glob, params


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sfrjlab", description=__doc__.split("\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog="exit codes: 0 ok, 2 config error, 3 solver failure, "
                                        "4 gate missed")
    ap.add_argument("--version", action="version", version=f"sfrjlab {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="JSON config file or earlier manifest")
    common.add_argument("--out", default=S, help=f"output directory (env {ENV_OUT})")
    common.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    common.add_argument("--threads", type=int, default=S,
                        help="worker processes (default: hardware threads)")
    common.add_argument("-v", "--verbose", action="count", default=S)
    subs = ap.add_subparsers(dest="subcommand", required=True)
    for name, opts in OPTIONS.items():
        sp = subs.add_parser(name, parents=[common], help=f"{name} experiment")
        for o in opts:
            kw = dict(dest=o.dest, default=S, help=f"{o.help} [default: {o.default}]")
            if o.choices:
                kw["choices"] = o.choices
            if o.conv is _bool:
                sp.add_argument(f"--{o.name}", nargs="?", const=True, type=_bool, **kw)
                if o.default is True:
                    sp.add_argument(f"--no-{o.name}", dest=o.dest, action="store_const",
                                    const=False, default=S)
            else:
                sp.add_argument(f"--{o.name}", type=str, **kw)
    return ap


def resolve_run_config(ns: argparse.Namespace) -> RunConfig:
    sub = ns.subcommand
    opts = {o.dest: o for o in OPTIONS[sub]}
    params = {d: o.default for d, o in opts.items()}
    glob = dict(seed=0, threads=os.cpu_count() or 1, verbose=0,
                out=os.environ.get(ENV_OUT, DEFAULT_OUT))
    if hasattr(ns, "config"):
        g, p = load_config_file(ns.config, sub)
        glob.update(g)
        params.update(p)
    for k in GLOBAL_KEYS:
        if hasattr(ns, k):
            glob[k] = getattr(ns, k)
    for d in opts:
        if hasattr(ns, d):
            params[d] = getattr(ns, d)
    for d, v in list(params.items()):
        o = opts[d]
        if v is None:
            continue
        try:
            params[d] = o.conv(v)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"--{o.name}: {e}") from None
        if o.choices and params[d] not in o.choices:
            raise ConfigError(f"--{o.name}: {params[d]!r} not in {o.choices}")
    try:
        seed, threads = int(glob["seed"]), int(glob["threads"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad global setting: {e}") from None
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    return RunConfig(sub, params, str(glob["out"]), seed, threads, int(glob["verbose"] or 0))


# --------------------------------------------------------------- plumbing

def code_hash() -> str:
    """sha256 over the package sources, stable across machines."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx") and "__pycache__" not in p.parts:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)


def write_rows(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


class Run:
    """Output directory, artifact list and manifest for one invocation."""

    def __init__(self, rc: RunConfig):
        self.rc = rc
        self.out = Path(rc.out)
        self.artifacts = []
        self.t0 = time.perf_counter()
        self.results = {}

    def path(self, name) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.artifacts.append(str(p))
        return p

    def stem(self, name) -> str:
        """Register ``name``.csv / ``name``.json and return the common stem."""
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts += [str(self.out / f"{name}.csv"), str(self.out / f"{name}.json")]
        return str(self.out / name)

    def manifest(self, status: str, message: str = ""):
        from .engine import kernel
        self.out.mkdir(parents=True, exist_ok=True)
        write_json(self.out / f"manifest_{self.rc.subcommand}.json", dict(
            run_config=self.rc.to_dict(), status=status, message=message,
            version=__version__, code_hash=code_hash(), kernel=kernel.backend_name(),
            python=platform.python_version(), numpy=np.__version__,
            artifacts=self.artifacts, results=self.results,
            wall_clock_s=time.perf_counter() - self.t0))


def _geometry(p):
    from .engine import GeometryError, build_geometry
    path = p.get("geometry")
    if not path:
        return build_geometry()
    f = Path(path)
    if not f.is_file():
        raise ConfigError(f"--geometry: file not found: {path}")
    try:
        d = json.loads(f.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    try:
        return build_geometry(d)
    except GeometryError as e:
        raise ConfigError(f"{path}: {e}") from None


def _bc(p, **kw):
    from .engine import BoundaryCondition
    try:
        if p.get("altitude") is not None:
            return BoundaryCondition.from_altitude(p["altitude"], p["velocity"], **kw)
        return BoundaryCondition(p["velocity"], p["pressure"], p["temperature"], **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _limits(p):
    from .engine import SolverLimits
    try:
        return SolverLimits(max_iterations=p.get("max_iterations", 200000),
                            cfl=p.get("cfl", 0.3), order=p.get("order", 2))
    except ValueError as e:
        raise ConfigError(str(e)) from None


# ------------------------------------------------------------ subcommands

def cmd_open_loop(rc: RunConfig, run: Run):
    from .engine import (build_grid, isentropic_state_analysis, run_to_steady, write_field_csv,
                         write_residual_csv)
    from .envelope import EXTENDED_FLUXES, DEFAULT_FLUXES, heat_flux_sweep
    p = rc.params
    geom = _geometry(p)
    bc = _bc(p, outlet=p["outlet"])
    limits = _limits(p)
    grid = build_grid(geom, p["cells"])
    if p["sweep"] is not None:
        presets = {"default": DEFAULT_FLUXES, "extended": EXTENDED_FLUXES}
        fluxes = list(presets.get(p["sweep"]) or _floats(p["sweep"]))
        if p["flux"] is not None:
            raise ConfigError("give either --flux or --sweep, not both")

        stations = []

        def save(q, r):
            tag = f"q{q / 1e6:g}MW"
            write_field_csv(run.path(f"field_{tag}.csv"), r.field)
            write_residual_csv(run.path(f"residuals_{tag}.csv"), r.history)
            for name, st in isentropic_state_analysis(r.field, grid).items():
                stations.append(dict(q_wall=q, station=name, unstarted=r.unstarted, **st))

        sw = heat_flux_sweep(bc, fluxes, grid, limits, on_result=save)
        rows = [asdict(pt) for pt in sw.points]
        write_rows(run.path("thrust_table.csv"), rows)
        write_rows(run.path("isentropic_states.csv"), stations)
        run.results = dict(points=rows, first_unstart=sw.first_unstart())
        for r in rows:
            print(f"q={r['q_wall']:.3e}  thrust={r['thrust']:10.3f} N  "
                  f"unstarted={r['unstarted']}  converged={r['converged']}")
        if any(pt.failed for pt in sw.points):
            return EXIT_SOLVER, "one or more sweep points failed"
        return EXIT_OK, ""
    q = p["flux"] or 0.0
    res = run_to_steady(bc, q, grid, limits)
    tag = f"q{q / 1e6:g}MW"
    write_field_csv(run.path(f"field_{tag}.csv"), res.field)
    write_residual_csv(run.path(f"residuals_{tag}.csv"), res.history)
    run.results = res.summary()
    print(f"q={q:.3e}  thrust={res.thrust:.3f} N  converged={res.converged}  "
          f"unstarted={res.unstarted}  iterations={res.iterations}")
    return EXIT_OK, ""


def cmd_envelope(rc: RunConfig, run: Run):
    from .envelope import DEFAULT_ALTITUDES, DEFAULT_VELOCITIES, DEFAULT_FLUXES, build_envelope
    p = rc.params
    geom = _geometry(p)
    tab = build_envelope(p["altitudes"] or DEFAULT_ALTITUDES,
                         p["velocities"] or DEFAULT_VELOCITIES,
                         p["fluxes"] or DEFAULT_FLUXES, geom, p["cells"], _limits(p),
                         refine=p["refine"], w_max=p["w_max"], workers=rc.threads)
    tab.save(run.path("envelope.json"))
    tab.to_csv(run.path("envelope.csv"))
    rows = list(tab.summary_rows())
    write_rows(run.path("envelope_summary.csv"), rows)
    run.results = dict(summary=rows, failed=int(tab.failed.sum()))
    for r in rows:
        print(f"h={r['altitude_m']:7.0f} m  V={r['velocity_mps']:6.0f} m/s  "
              f"max thrust={r['max_thrust_N']:9.2f} N  first unstart={r['first_unstart_Wm2']}")
    return (EXIT_SOLVER, f"{int(tab.failed.sum())} failed points") if tab.failed.any() else (EXIT_OK, "")


def _calibration(rc: RunConfig, run: Run, bc, grid):
    from .harness import Calibration, calibrate
    p = rc.params
    if p.get("calibration"):
        f = Path(p["calibration"])
        if not f.is_file():
            raise ConfigError(f"--calibration: file not found: {f}")
        return Calibration.from_dict(json.loads(f.read_text()))
    cal = calibrate(bc, grid, inner_iterations=p["inner"], limits=_limits(p))
    write_json(run.path("calibration.json"), cal.to_dict())
    return cal


def _level(text: str, cal) -> float:
    s = str(text)
    if s.startswith("calibrated-") and s.endswith("pct"):
        return cal.target(float(s[len("calibrated-"):-3]) / 100.0)
    if s.startswith("raw:"):
        return cal.from_raw(float(s[4:]))
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"--target: cannot parse {text!r}") from None


def _profile(rc: RunConfig, cal):
    from .harness import CommandProfile
    p = rc.params
    kind = p["command"]
    if kind in ("step", "constant"):
        return CommandProfile("constant", value=_level(p["target"], cal))
    if kind == "random_steps":
        seed = p.get("seed_command")
        return CommandProfile("random_steps", low=cal.from_raw(p["low"]),
                              high=cal.from_raw(p["high"]), hold=p["hold"],
                              seed=rc.seed if seed is None else seed)
    if not p.get("values"):
        raise ConfigError("--command sequence needs --values")
    return CommandProfile("sequence", values=tuple(p["values"]), hold=p["hold"])


def _loop_setup(rc: RunConfig, run: Run):
    from .engine import build_grid
    from .harness import calibrated_loop, surrogate_from_calibration, PlantSpec
    from .rcac import RcacConfig
    p = rc.params
    geom = _geometry(p)
    bc = _bc(p)
    grid = build_grid(geom, p["cells"])
    cal = _calibration(rc, run, bc, grid)
    cfg = calibrated_loop(cal, inner_iterations=p["inner"], control_steps=p["steps"], bc=bc)
    if p.get("error_scale") is not None:
        cfg = replace(cfg, rcac=replace(cfg.rcac, error_scale=p["error_scale"]))
    if p["backend"] == "engine":
        plant = PlantSpec("engine", bc, p["cells"], p["inner"], cfg.map.w_bar)
    else:
        plant = surrogate_from_calibration(cal, p["backend"])
    return cal, cfg, plant, _profile(rc, cal)


def cmd_regulate(rc: RunConfig, run: Run):
    from .harness import regulate
    p = rc.params
    cal, cfg, plant, prof = _loop_setup(rc, run)
    cfg = cfg.with_hyper(p["n"], p["p"])
    lg = regulate(prof, cfg, plant.build(), meta=dict(seed=rc.seed, plant_spec=plant.to_dict()))
    lg.write(run.stem("regulate"))
    run.results = lg.summary(p["band"])
    s = run.results
    print(f"status={s['status']}  steps={s['steps']}  settling_step({p['band']:g})="
          f"{s['settling_step']}  final |z|/r={s['final_rel_error']:.3e}  "
          f"overshoot={s['overshoot']:.4f}  gains={s['final_gains']}")
    if lg.status != "ok":
        return EXIT_SOLVER, lg.message
    if p["gate"] and lg.settling_step(p["band"]) is None:
        return EXIT_GATE, f"did not settle into the {p['band']:g} band"
    return EXIT_OK, ""


def cmd_sweep(rc: RunConfig, run: Run):
    from .harness import hyperparameter_sweep
    p = rc.params
    cal, cfg, plant, prof = _loop_setup(rc, run)
    hs = hyperparameter_sweep(p["n"], p["p"], prof, cfg, plant, p["band"], rc.threads)
    for c in hs.cells:
        c.log.write(run.stem(f"sweep_n{c.n:g}_p{c.p:g}"))
    write_rows(run.path("sweep_table.csv"), hs.table())
    order = {str(k): v for k, v in hs.orderings().items()}
    write_json(run.path("ordering_report.json"), order)
    run.results = dict(table=hs.table(), orderings=order)
    for c in hs.table():
        print(f"n={c['n']:<6g} p={c['p']:<8g} settling={c['settling']}  "
              f"overshoot={c['overshoot']:.4f}  status={c['status']}")
    for n, o in order.items():
        print(f"n={n}: settling non-increasing in p: {o['settling_ok']}; "
              f"overshoot non-decreasing in p: {o['overshoot_ok']}")
    if any(c.log.status != "ok" for c in hs.cells):
        return EXIT_SOLVER, "one or more runs diverged"
    if p["gate"] and not hs.ok():
        return EXIT_GATE, "ordering check failed"
    return EXIT_OK, ""


def cmd_montecarlo(rc: RunConfig, run: Run):
    from .envelope import EnvelopeTable
    from .harness import monte_carlo_envelope, monte_carlo_inlet
    p = rc.params
    if p["mode"] == "envelope":
        if not p.get("table"):
            raise ConfigError("montecarlo --mode envelope needs an envelope table: run "
                              "'sfrjlab envelope' first and pass --table <out>/envelope.json")
        f = Path(p["table"])
        if not f.is_file():
            raise ConfigError(f"--table: {f} not found; run 'sfrjlab envelope' to create it")
        try:
            table = EnvelopeTable.load(f)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise ConfigError(f"{f}: not an envelope table ({e})") from None
        for key, grid in (("altitude_range", table.altitudes), ("velocity_range", table.velocities)):
            lo, hi = p[key][0], p[key][-1]
            if lo < grid.min() or hi > grid.max():
                raise ConfigError(f"--{key.replace('_', '-')}: [{lo:g}, {hi:g}] leaves the table "
                                  f"span [{grid.min():g}, {grid.max():g}]")
    cal, cfg, plant, prof = _loop_setup(rc, run)
    backend = "engine" if p["backend"] == "engine" else "table"
    if p["mode"] == "inlet":
        res = monte_carlo_inlet(p["samples"], command=_level(p["target"], cal), seed=rc.seed,
                                cfg=cfg, backend=backend, feasibility=p["feasibility"],
                                n_cells=p["cells"], workers=rc.threads)
    else:
        res = monte_carlo_envelope(table, p["samples"], tuple(p["altitude_range"]),
                                   tuple(p["velocity_range"]), tuple(p["thrust_range"]),
                                   rc.seed, cfg, backend, p["cells"], rc.threads)
    for s in res.samples:
        s.log.write(run.stem(f"mc_{s.index:03d}"))
    rows = res.table()
    write_rows(run.path("montecarlo.csv"), rows)
    run.results = dict(samples=rows, rejections=res.rejections, all_settled=res.all_settled())
    for r in rows:
        print(f"#{r['index']:02d} command={r['command']:.1f} N  rejections={r['rejections']}  "
              f"settling={r['settling_step']}  K_P={r['K_P']:.4g}  K_I={r['K_I']:.4g}")
    print(f"total rejections={res.rejections}  all settled={res.all_settled()}")
    if any(s.log.status != "ok" for s in res.samples):
        return EXIT_SOLVER, "one or more runs diverged"
    if p["gate"] and not res.all_settled():
        return EXIT_GATE, "not every sample settled"
    return EXIT_OK, ""


def cmd_engage(rc: RunConfig, run: Run):
    from .engagement import EngagementConfig, run_engagement
    from .envelope import EnvelopeTable
    p = rc.params
    table = None
    if p.get("table"):
        f = Path(p["table"])
        if not f.is_file():
            raise ConfigError(f"--table: {f} not found")
        table = EnvelopeTable.load(f)
    try:
        cfg = EngagementConfig(thrust_command=p["thrust_command"], nav_gain=p["nav_gain"],
                               g_limit=p["g_limit"], dt=p["dt"], engine_dt=p["engine_dt"],
                               capture_radius=p["capture_radius"], t_max=p["t_max"],
                               backend=p["backend"], n_cells=p["cells"],
                               inner_iterations=p["inner"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    lg = run_engagement(cfg, table)
    lg.write(run.stem("engagement"))
    t = lg.column("t")
    band = lg.thrust_band_after(1.0)
    run.results = dict(lg.summary(), thrust_band_after_1s=band,
                       scale=lg.meta["scaled_engine"]["scale"])
    print(f"status={lg.status}  miss={lg.miss_distance:.3f} m  t_intercept={lg.intercept_time}  "
          f"max |tau-tau_c|/tau_c after 1 s={band:.4f}  duration={t[-1]:.2f} s")
    if p["gate"] and not (lg.status == "intercept" and band < 0.05):
        return EXIT_GATE, "no intercept or thrust outside 5% band"
    return EXIT_OK, ""


def cmd_convergence(rc: RunConfig, run: Run):
    from .engine import grid_convergence_study
    p = rc.params
    bc, geom, limits = _bc(p), _geometry(p), _limits(dict(p, order=2, cfl=0.3))
    try:
        tab = grid_convergence_study(p["cells"], p["fluxes"], bc, geom, limits, p["tolerance"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    rows = list(tab.rows())
    write_rows(run.path("convergence.csv"), rows)
    run.results = dict(rel_change=tab.rel_change.tolist(), converged_cells=tab.converged_cells)
    for i, n in enumerate(tab.cells[:-1]):
        print(f"{n:6d} -> {tab.cells[i + 1]:6d} cells: max relative change "
              f"{tab.rel_change[i]:.3e}")
    print(f"converged resolution: {tab.converged_cells}")
    return EXIT_OK, ""


COMMANDS = {
    "open-loop": cmd_open_loop, "envelope": cmd_envelope, "regulate": cmd_regulate,
    "sweep": cmd_sweep, "montecarlo": cmd_montecarlo, "engage": cmd_engage,
    "convergence": cmd_convergence,
}


def main(argv=None) -> int:
    from .engine import SolverError
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        rc = resolve_run_config(ns)
    except ConfigError as e:
        print(f"sfrjlab: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(rc.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(rc)
    try:
        code, msg = COMMANDS[rc.subcommand](rc, run)
    except ConfigError as e:
        print(f"sfrjlab: error: {e}", file=sys.stderr)
        if run.artifacts:
            run.manifest("config_error", str(e))
        return EXIT_CONFIG
    except SolverError as e:
        print(f"sfrjlab: solver failure: {e}", file=sys.stderr)
        run.manifest("solver_failure", str(e))
        return EXIT_SOLVER
    status = {EXIT_OK: "ok", EXIT_SOLVER: "solver_failure", EXIT_GATE: "gate_missed"}[code]
    run.manifest(status, msg)
    if msg:
        print(f"sfrjlab: {status}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
