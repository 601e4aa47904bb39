"""Axisymmetric engine geometry and the 1D finite-volume grid built on it.

The geometry is a contiguous chain of segments, each with a linear or
half-cosine diameter law. A diameter jump between neighbouring segments is a
sudden expansion; the grid builder smears it linearly over a short distance
downstream, since quasi-1D flow has no meaning at a true discontinuity.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

LINEAR = "linear"
COSINE = "cosine"

DEFAULTS = dict(
    inlet_length=0.2,
    inlet_diameter=0.080,
    combustor_length=0.838,
    combustor_diameter=0.140,
    nozzle_length=0.140,
    throat_diameter=0.130,
    exit_diameter=0.140,
    scale=1.0,
)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    x0: float
    x1: float
    d0: float
    d1: float
    shape: str = LINEAR
    name: str = ""

    def diameter(self, x):
        t = (np.asarray(x, dtype=float) - self.x0) / (self.x1 - self.x0)
        if self.shape == LINEAR:
            return self.d0 + (self.d1 - self.d0) * t
        # half cosine: zero slope at both ends
        return self.d1 + (self.d0 - self.d1) * 0.5 * (1.0 + np.cos(np.pi * t))


@dataclass(frozen=True)
class EngineGeometry:
    segments: tuple
    heated_span: tuple
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise GeometryError("geometry needs at least one segment")
        for s in segs:
            if not s.x1 > s.x0:
                raise GeometryError(f"segment {s.name!r} has non-positive length")
            if not (s.d0 > 0 and s.d1 > 0):
                raise GeometryError(f"segment {s.name!r} has non-positive diameter")
            if s.shape not in (LINEAR, COSINE):
                raise GeometryError(f"unknown segment shape {s.shape!r}")
        for a, b in zip(segs[:-1], segs[1:]):
            if abs(a.x1 - b.x0) > 1e-12:
                raise GeometryError(f"segments {a.name!r} and {b.name!r} are not contiguous")
        h0, h1 = self.heated_span
        if not (segs[0].x0 <= h0 <= h1 <= segs[-1].x1):
            raise GeometryError(f"heated span {self.heated_span} outside the engine")

    @property
    def length(self) -> float:
        return self.segments[-1].x1 - self.segments[0].x0

    @property
    def x0(self) -> float:
        return self.segments[0].x0

    @property
    def x1(self) -> float:
        return self.segments[-1].x1

    def segment(self, name: str) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def jumps(self):
        """Locations and diameters of sudden area changes: (x, d_up, d_down)."""
        out = []
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if abs(a.d1 - b.d0) > 1e-12:
                out.append((a.x1, a.d1, b.d0))
        return out

    def breakpoints(self, smear: float = 0.0):
        pts = [s.x0 for s in self.segments] + [self.x1]
        pts += list(self.heated_span)
        pts += [x + smear for x, _, _ in self.jumps()]
        return np.unique(np.array(pts, dtype=float))

    def diameter(self, x, smear: float = 0.0):
        """Diameter at ``x`` with sudden expansions ramped over ``smear`` m."""
        x = np.clip(np.asarray(x, dtype=float), self.x0, self.x1)
        d = np.empty_like(x)
        for i, s in enumerate(self.segments):
            last = i == len(self.segments) - 1
            m = (x >= s.x0) & ((x <= s.x1) if last else (x < s.x1))
            d[m] = s.diameter(x[m])
        if smear > 0.0:
            for xj, dup, _ in self.jumps():
                m = (x >= xj) & (x < xj + smear)
                if np.any(m):
                    t = (x[m] - xj) / smear
                    dn = self.diameter(np.full(m.sum(), xj + smear))
                    d[m] = dup + (dn - dup) * t
        return d

    def area(self, x, smear: float = 0.0):
        return 0.25 * np.pi * self.diameter(x, smear) ** 2

    def wetted_perimeter(self, x, smear: float = 0.0):
        return np.pi * self.diameter(x, smear)

    def heated_wall_area(self, smear: float = 0.0) -> float:
        """Exact-for-piecewise-linear integral of the perimeter over the span."""
        h0, h1 = self.heated_span
        pts = self.breakpoints(smear)
        pts = np.unique(np.clip(pts, h0, h1))
        tot = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            tot += _simpson(lambda z: self.wetted_perimeter(z, smear), a, b, 16)
        return tot

    def to_dict(self) -> dict:
        return dict(
            segments=[asdict(s) for s in self.segments],
            heated_span=list(self.heated_span),
            params=dict(self.params),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _simpson(f, a, b, n=2):
    """Composite Simpson on n (even) panels."""
    if b <= a:
        return 0.0
    xs = np.linspace(a, b, n + 1)
    ys = f(xs)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3 * n) * np.dot(w, ys))


def build_geometry(overrides: dict | None = None) -> EngineGeometry:
    """Default solid-fuel ramjet geometry, optionally with parameter overrides.

    Recognised keys are those in ``DEFAULTS`` plus ``heated_span`` as a
    two-element sequence. ``scale`` multiplies every length and diameter.
    """
    p = dict(DEFAULTS)
    overrides = dict(overrides or {})
    span = overrides.pop("heated_span", None)
    unknown = set(overrides) - set(DEFAULTS)
    if unknown:
        raise GeometryError(f"unknown geometry keys: {sorted(unknown)}")
    for k, v in overrides.items():
        try:
            p[k] = float(v)
        except (TypeError, ValueError):
            raise GeometryError(f"geometry key {k!r} must be numeric, got {v!r}") from None
    for k, v in p.items():
        if not v > 0:
            raise GeometryError(f"geometry value {k}={v} must be positive")

    s = p["scale"]
    Li, Lc, Ln = (p[k] * s for k in ("inlet_length", "combustor_length", "nozzle_length"))
    di, dc, dt, de = (p[k] * s for k in
                      ("inlet_diameter", "combustor_diameter", "throat_diameter", "exit_diameter"))
    xc0, xn0 = Li, Li + Lc
    xm = xn0 + 0.5 * Ln
    segs = (
        Segment(0.0, Li, di, di, LINEAR, "inlet"),
        Segment(xc0, xn0, dc, dc, LINEAR, "combustor"),
        Segment(xn0, xm, dc, dt, COSINE, "nozzle_converging"),
        Segment(xm, xn0 + Ln, dt, de, COSINE, "nozzle_diverging"),
    )
    if span is None:
        span = (xc0, xn0)
    else:
        span = tuple(float(v) * s for v in span)
        if len(span) != 2 or not span[0] < span[1]:
            raise GeometryError(f"bad heated span {span}")
        if not (xc0 - 1e-12 <= span[0] and span[1] <= xn0 + 1e-12):
            raise GeometryError("heated span must lie within the combustor")
    if p["throat_diameter"] > min(p["combustor_diameter"], p["exit_diameter"]):
        raise GeometryError("throat diameter exceeds combustor or exit diameter")
    return EngineGeometry(segs, span, params=p)


def constant_area_duct(length: float = 1.0, diameter: float = 0.1,
                       heated_span: tuple | None = None) -> EngineGeometry:
    """Straight duct, heated over ``heated_span`` (default: whole length)."""
    if not (length > 0 and diameter > 0):
        raise GeometryError("duct length and diameter must be positive")
    seg = Segment(0.0, length, diameter, diameter, LINEAR, "duct")
    span = tuple(heated_span) if heated_span is not None else (0.0, length)
    return EngineGeometry((seg,), span, params=dict(length=length, diameter=diameter))


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid.

    ``heated_area`` holds the heated wall area inside each cell (m^2), so
    the energy source of cell i is ``q_wall * heated_area[i]``.
    """

    geometry: EngineGeometry
    n_cells: int
    x_faces: np.ndarray
    x: np.ndarray
    dx: np.ndarray
    A_faces: np.ndarray
    A: np.ndarray
    heated_area: np.ndarray
    smear_length: float

    @property
    def total_heated_area(self) -> float:
        return float(self.heated_area.sum())

    def mask_between(self, a: float, b: float) -> np.ndarray:
        return (self.x >= a) & (self.x <= b)

    def inlet_mask(self) -> np.ndarray:
        """Cells whose centre sits in the constant-area inlet channel."""
        try:
            s = self.geometry.segment("inlet")
        except KeyError:
            return np.zeros(self.n_cells, bool)
        return (self.x >= s.x0) & (self.x < s.x1)

    def combustor_mask(self) -> np.ndarray:
        try:
            s = self.geometry.segment("combustor")
        except KeyError:
            return np.ones(self.n_cells, bool)
        return (self.x >= s.x0) & (self.x < s.x1)

    def index_at(self, x: float) -> int:
        return int(np.argmin(np.abs(self.x - x)))


def build_grid(geometry: EngineGeometry, n_cells: int = 500,
               smear_cells: float = 3.0, smear_length: float | None = None) -> Grid:
    """Discretize ``geometry`` into ``n_cells`` uniform cells.

    Cell areas are volume averages and the heated wall area is integrated
    piecewise between geometry breakpoints, so both are exact for linear
    diameter laws.
    """
    n = int(n_cells)
    if n < 50:
        raise GeometryError(f"need at least 50 cells, got {n}")
    xf = np.linspace(geometry.x0, geometry.x1, n + 1)
    dx = np.diff(xf)
    smear = float(smear_length) if smear_length is not None else smear_cells * geometry.length / n
    if smear < 0:
        raise GeometryError("smear length must be non-negative")
    Af = geometry.area(xf, smear)

    h0, h1 = geometry.heated_span
    brk = geometry.breakpoints(smear)
    A = np.empty(n)
    H = np.zeros(n)
    for i in range(n):
        a, b = xf[i], xf[i + 1]
        inner = brk[(brk > a) & (brk < b)]
        pts = np.concatenate(([a], inner, [b]))
        vol = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            vol += _simpson(lambda z: geometry.area(z, smear), lo, hi)
            clo, chi = max(lo, h0), min(hi, h1)
            if chi > clo:
                H[i] += _simpson(lambda z: geometry.wetted_perimeter(z, smear), clo, chi)
        A[i] = vol / (b - a)
    xc = 0.5 * (xf[:-1] + xf[1:])
    return Grid(geometry, n, xf, xc, dx, Af, A, H, smear)


def default_grid(n_cells: int = 500, overrides: dict | None = None) -> Grid:
    return build_grid(build_geometry(overrides), n_cells)


def geometry_from_dict(d: dict) -> EngineGeometry:
    segs = tuple(Segment(**s) for s in d["segments"])
    return EngineGeometry(segs, tuple(d["heated_span"]), params=d.get("params", {}))


def circle_area(d: float) -> float:
    return 0.25 * math.pi * d * d


def with_heated_span(geometry: EngineGeometry, span) -> EngineGeometry:
    return replace(geometry, heated_span=tuple(span))
