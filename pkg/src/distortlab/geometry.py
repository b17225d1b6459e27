"""Planar primitives: polylines, polygonal domains, grids, star-shapedness
certificates and the cusp-domain boundary constructions.

Points are plain Python/numpy complex numbers throughout.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import shapely

from .errors import BranchError, InvalidDomainError, ParameterError

GEOM_TOL = 1e-9
MAX_GRID_CELLS = 4_200_000


def make_rng(seed: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator: identical streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


def as_points(values) -> np.ndarray:
    """Coerce to a 1-D complex array and reject NaN/Inf components."""
    pts = np.asarray(values)
    if pts.ndim == 2 and pts.shape[-1] == 2 and not np.iscomplexobj(pts):
        pts = pts[:, 0] + 1j * pts[:, 1]
    pts = np.atleast_1d(pts).astype(complex).ravel()
    if not np.all(np.isfinite(pts)):
        raise ParameterError("points must have finite components")
    return pts


def cross(u, v):
    """z-component of the planar cross product of complex vectors."""
    return (np.conj(u) * v).imag


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=complex)
    return 0.5 * float(np.sum(cross(v, np.roll(v, -1))))


@dataclass(frozen=True)
class Polyline:
    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        v = as_points(self.vertices)
        if self.closed and len(v) > 2 and v[0] == v[-1]:
            v = v[:-1]
        object.__setattr__(self, "vertices", v)
        if len(v) < 2:
            raise ParameterError("a polyline needs at least 2 vertices")
        steps = np.abs(np.diff(v))
        if np.any(steps == 0.0):
            raise ParameterError("consecutive polyline vertices coincide")
        if self.closed:
            if len(v) < 3:
                raise InvalidDomainError("closed polyline needs 3 vertices")
            ring = shapely.LinearRing(np.column_stack([v.real, v.imag]))
            if not ring.is_simple:
                raise InvalidDomainError("closed polyline self-intersects")

    @property
    def segments(self):
        """(start, end) complex arrays of every segment."""
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1)
        return v[:-1], v[1:]

    @property
    def length(self) -> float:
        a, b = self.segments
        return float(np.sum(np.abs(b - a)))

    def sample(self, n: int) -> np.ndarray:
        """``n`` points equally spaced in arc length (closed: no repeat)."""
        a, b = self.segments
        seg_len = np.abs(b - a)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = cum[-1]
        if self.closed:
            s = np.arange(n) * total / n
        else:
            s = np.linspace(0.0, total, n)
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(a) - 1)
        t = (s - cum[k]) / seg_len[k]
        return a[k] + t * (b[k] - a[k])

    def to_json(self) -> dict:
        return {"vertices": [[float(z.real), float(z.imag)] for z in self.vertices],
                "closed": bool(self.closed)}

    @classmethod
    def from_json(cls, data) -> "Polyline":
        if isinstance(data, str):
            data = json.loads(data)
        verts = np.asarray(data["vertices"], dtype=float).reshape(-1, 2)
        return cls(verts[:, 0] + 1j * verts[:, 1], bool(data["closed"]))


@dataclass(frozen=True)
class PolygonalDomain:
    """Simple polygon, counterclockwise, positive area."""

    outer: Polyline

    def __post_init__(self):
        if not self.outer.closed:
            raise InvalidDomainError("domain boundary must be closed")
        area = signed_area(self.outer.vertices)
        if abs(area) <= GEOM_TOL:
            raise InvalidDomainError(f"degenerate polygon (area {area:.3g})")
        if area < 0:
            raise InvalidDomainError("domain boundary must be counterclockwise")
        object.__setattr__(self, "_shape", shapely.Polygon(
            np.column_stack([self.outer.vertices.real, self.outer.vertices.imag])))

    @classmethod
    def from_vertices(cls, vertices, orient: bool = False) -> "PolygonalDomain":
        v = as_points(vertices)
        if orient and signed_area(v) < 0:
            v = v[::-1]
        return cls(Polyline(v, closed=True))

    @property
    def vertices(self) -> np.ndarray:
        return self.outer.vertices

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def centroid(self) -> complex:
        v = self.vertices
        w = np.roll(v, -1)
        c = cross(v, w)
        return complex(np.sum((v + w) * c) / (3.0 * np.sum(c)))

    @property
    def bounds(self):
        v = self.vertices
        return v.real.min(), v.imag.min(), v.real.max(), v.imag.max()

    def contains(self, points, tol: float = GEOM_TOL) -> np.ndarray:
        """Membership in the closed domain, with a distance tolerance."""
        z = np.asarray(points, dtype=complex)
        flat = z.ravel()
        inside = shapely.intersects_xy(self._shape, flat.real, flat.imag)
        if tol > 0 and not inside.all():
            rest = ~inside
            pts = shapely.points(flat.real[rest], flat.imag[rest])
            inside[rest] = shapely.distance(self._shape, pts) <= tol
        return inside.reshape(z.shape)

    def to_json(self) -> dict:
        return self.outer.to_json()

    @classmethod
    def from_json(cls, data) -> "PolygonalDomain":
        return cls(Polyline.from_json(data))


def regular_polygon(n: int, radius: float = 1.0, center: complex = 0.0) -> PolygonalDomain:
    t = 2 * np.pi * np.arange(n) / n
    return PolygonalDomain(Polyline(center + radius * np.exp(1j * t), closed=True))


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    origin: complex
    cell: float
    nx: int
    ny: int

    def __post_init__(self):
        object.__setattr__(self, "origin", complex(self.origin))
        if not (self.cell > 0 and math.isfinite(self.cell)):
            raise ParameterError("grid cell size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ParameterError("grid needs at least one cell per axis")
        if self.nx * self.ny > MAX_GRID_CELLS:
            raise ParameterError(
                f"grid {self.nx}x{self.ny} exceeds {MAX_GRID_CELLS} cells")

    @classmethod
    def covering(cls, xmin, ymin, xmax, ymax, n: int, pad: float = 0.0) -> "GridSpec":
        """Square-celled grid with ``n`` cells along the longer side."""
        w, h = xmax - xmin, ymax - ymin
        side = max(w, h) * (1 + 2 * pad)
        cell = side / n
        nx = max(1, int(math.ceil(w * (1 + 2 * pad) / cell - 1e-9)))
        ny = max(1, int(math.ceil(h * (1 + 2 * pad) / cell - 1e-9)))
        cx, cy = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
        origin = complex(cx - 0.5 * nx * cell, cy - 0.5 * ny * cell)
        return cls(origin, cell, nx, ny)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.cell * self.cell

    def centers(self) -> np.ndarray:
        """Cell centres, shape (ny, nx), row-major from the origin."""
        x = self.origin.real + (np.arange(self.nx) + 0.5) * self.cell
        y = self.origin.imag + (np.arange(self.ny) + 0.5) * self.cell
        return x[None, :] + 1j * y[:, None]

    def to_json(self) -> dict:
        return {"origin": [self.origin.real, self.origin.imag], "cell": self.cell,
                "nx": self.nx, "ny": self.ny}

    @classmethod
    def from_json(cls, data) -> "GridSpec":
        return cls(complex(*data["origin"]), float(data["cell"]), int(data["nx"]), int(data["ny"]))


@dataclass
class GridField:
    """Scalar field sampled per grid cell; ``values`` has shape (ny, nx)."""

    grid: GridSpec
    values: np.ndarray
    mask: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ParameterError("field shape does not match grid")
        if self.mask is None:
            self.mask = np.ones_like(self.values, dtype=bool)

    @classmethod
    def constant(cls, grid: GridSpec, value: float = 1.0) -> "GridField":
        return cls(grid, np.full((grid.ny, grid.nx), float(value)))

    def to_csv(self) -> str:
        g = self.grid
        lines = [f"# origin_re={g.origin.real!r} origin_im={g.origin.imag!r} "
                 f"cell={g.cell!r} nx={g.nx} ny={g.ny}"]
        for row in self.values:
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# star-shapedness


@dataclass
class StarCertificate:
    kind: str  # "starlike" | "weak-starlike" | "neither"
    center: Optional[complex] = None
    witnesses: list = field(default_factory=list)
    failure: Optional[tuple] = None
    kernel: Optional[np.ndarray] = None


def _clip_halfplane(poly: np.ndarray, a: complex, b: complex, tol: float) -> np.ndarray:
    if len(poly) == 0:
        return poly
    d = b - a
    side = cross(d, poly - a) + tol * abs(d)
    keep = side >= 0
    if keep.all():
        return poly
    if not keep.any():
        return poly[:0]
    nxt = np.roll(poly, -1)
    side_n = np.roll(side, -1)
    keep_n = np.roll(keep, -1)
    out = []
    for p, q, sp, sq, kp, kq in zip(poly, nxt, side, side_n, keep, keep_n):
        if kp:
            out.append(p)
        if kp != kq:
            out.append(p + (q - p) * (sp / (sp - sq)))
    return np.asarray(out, dtype=complex)


def polygon_kernel(domain: PolygonalDomain, tol: float = GEOM_TOL) -> np.ndarray:
    """Vertices of the kernel (points seeing the whole boundary).

    The kernel is the intersection of the inner half-planes of all edges;
    an empty array means the domain is not starlike.
    """
    xmin, ymin, xmax, ymax = domain.bounds
    poly = np.array([xmin + 1j * ymin, xmax + 1j * ymin, xmax + 1j * ymax, xmin + 1j * ymax])
    a, b = domain.outer.segments
    for p, q in zip(a, b):
        poly = _clip_halfplane(poly, p, q, tol)
        if len(poly) == 0:
            break
    if len(poly) >= 3 and signed_area(poly) <= 0:
        return poly[:0]
    return poly


def _segments_inside(domain: PolygonalDomain, starts: np.ndarray, ends: np.ndarray,
                     tol: float) -> np.ndarray:
    """Whether each segment [start, end] stays in the closed domain."""
    ea, eb = domain.outer.segments
    ed = eb - ea
    sd = ends - starts
    scale = max(1.0, float(np.max(np.abs(domain.vertices))))
    t_eps = tol * scale
    # proper crossings against every edge
    o1 = cross(sd[:, None], ea[None, :] - starts[:, None])
    o2 = cross(sd[:, None], eb[None, :] - starts[:, None])
    o3 = cross(ed[None, :], starts[:, None] - ea[None, :])
    o4 = cross(ed[None, :], ends[:, None] - ea[None, :])
    hit = ((o1 > t_eps) & (o2 < -t_eps) | (o1 < -t_eps) & (o2 > t_eps)) & \
          ((o3 > t_eps) & (o4 < -t_eps) | (o3 < -t_eps) & (o4 > t_eps))
    ok = ~hit.any(axis=1)
    for t in (0.5, 0.9, 0.999):
        ok &= domain.contains(starts + t * sd, tol=t_eps)
    return ok


def is_weak_starlike(domain: PolygonalDomain, n_boundary_samples: int = 256,
                     witness_grid: int = 128, tol: float = GEOM_TOL) -> StarCertificate:
    """Sampled weak-starlike test.

    A nonempty kernel short-circuits to ``starlike``. Otherwise every pair of
    boundary samples needs a common interior witness from a square grid.
    """
    if n_boundary_samples < 3:
        raise ParameterError("need at least 3 boundary samples")
    kernel = polygon_kernel(domain, tol)
    if len(kernel) >= 3:
        center = complex(np.mean(kernel))
        return StarCertificate("starlike", center=center, kernel=kernel)

    bpts = domain.outer.sample(n_boundary_samples)
    xmin, ymin, xmax, ymax = domain.bounds
    gx = np.linspace(xmin, xmax, witness_grid + 2)[1:-1]
    gy = np.linspace(ymin, ymax, witness_grid + 2)[1:-1]
    cand = (gx[None, :] + 1j * gy[:, None]).ravel()
    cand = cand[domain.contains(cand, tol=0.0)]
    if len(cand) == 0:
        raise InvalidDomainError("witness grid has no interior point")

    visible = np.zeros((len(bpts), len(cand)), dtype=bool)
    chunk = max(1, 2_000_000 // max(1, len(domain.vertices) * len(cand)))
    for i0 in range(0, len(bpts), chunk):
        for i in range(i0, min(len(bpts), i0 + chunk)):
            visible[i] = _segments_inside(domain, cand, np.full(len(cand), bpts[i]), tol)

    common = (visible.astype(np.int32) @ visible.T.astype(np.int32)) > 0
    iu, ju = np.triu_indices(len(bpts), k=1)
    bad = ~common[iu, ju]
    if bad.any():
        k = int(np.argmax(bad))
        pair = (complex(bpts[iu[k]]), complex(bpts[ju[k]]))
        return StarCertificate("neither", failure=pair)
    witnesses = []
    for i, j in zip(iu, ju):
        w = int(np.argmax(visible[i] & visible[j]))
        witnesses.append(((complex(bpts[i]), complex(bpts[j])), complex(cand[w])))
    return StarCertificate("weak-starlike", witnesses=witnesses)


# --------------------------------------------------------------------------
# cusp domains


def _check_s(s: float):
    if not (1.0 < s <= 2.0):
        raise ParameterError(f"cusp exponent s must lie in (1, 2], got {s}")


def cusp_curve(s: float, x):
    """Height (-x)**s of the upper cusp arc over x in [-1, 0]."""
    return np.power(-np.asarray(x, dtype=float), s)


@dataclass(frozen=True)
class ClosingArc:
    """Circle (centre on the real axis) in the square-root plane whose
    square closes the cusp domain with a C^1 joint at -1 +/- i."""

    center: float
    radius: float
    start_angle: float  # angle about center of sqrt(-1+i)
    residual: float     # tangent-direction mismatch in radians


def closing_arc(s: float) -> ClosingArc:
    _check_s(s)
    p = np.sqrt(-1 + 1j)
    # cusp-arc tangent at -1+i is 1 - i s; square root divides by 2 sqrt(z)
    tangent = (1 - 1j * s) / p
    # normal of the circle at p is p - c with c real: require (p - c) . T = 0
    c = float((p.real * tangent.real + p.imag * tangent.imag) / tangent.real)
    radius = abs(p - c)
    start = float(np.angle(p - c))
    circ_tangent = 1j * (p - c)
    mism = abs(np.angle(circ_tangent / tangent))
    residual = float(min(mism, abs(np.pi - mism)))
    return ClosingArc(c, radius, start, residual)


def cusp_boundary(s: float, n_nodes: int = 3072, grading: float = 3.0,
                  arc_fraction: float = 1 / 3) -> PolygonalDomain:
    """Polygon approximating the cusp domain with boundary exponent ``s``.

    Nodes on each cusp arc sit at x_k = -(k/n)**grading so that the cusp at
    the origin is resolved. Vertex order: origin, lower arc, closing arc,
    upper arc (counterclockwise).
    """
    _check_s(s)
    if n_nodes < 16:
        raise ParameterError("cusp_boundary needs n_nodes >= 16")
    if grading < 1:
        raise ParameterError("grading exponent must be >= 1")
    n_arc = max(4, int(round(n_nodes * arc_fraction)))
    n_cusp = max(4, (n_nodes - n_arc) // 2)

    x = -np.power(np.arange(n_cusp + 1) / n_cusp, grading)
    upper = x + 1j * cusp_curve(s, x)          # 0 -> -1+i
    upper[-1] = -1 + 1j
    lower = np.conj(upper)                      # 0 -> -1-i

    arc = closing_arc(s)
    half = arc.start_angle * np.arange(1, n_arc // 2 + 1) / (n_arc // 2 + 1)
    top = (arc.center + arc.radius * np.exp(1j * half[::-1])) ** 2   # from near -1+i down to the axis
    mid = np.array([(arc.center + arc.radius) ** 2 + 0j])
    closing = np.concatenate([np.conj(top), mid, top[::-1]])
    verts = np.concatenate([lower, closing, upper[::-1][:-1]])
    return PolygonalDomain(Polyline(verts, closed=True))


def sqrt_boundary(delta_s: PolygonalDomain, tol: float = 0.25) -> PolygonalDomain:
    """Continuous square root of a cusp-domain boundary, vertex by vertex.

    Tracking starts at the vertex of largest positive real part (mapped by
    the principal branch, so 1 maps near 1) and continues with the root
    closest to a linear predictor. A continuous branch obeys
    |sqrt(a) - sqrt(b)| <= sqrt|a - b|; steps exceeding that by more than
    the relative ``tol`` are reported as branch jumps.
    """
    v = delta_s.vertices
    n = len(v)
    k0 = int(np.argmax(v.real))
    if v[k0].real <= 0:
        raise BranchError("no boundary vertex on the positive real side")
    order = (np.arange(n) + k0) % n
    out = np.empty(n, dtype=complex)
    out[0] = np.sqrt(v[order[0]])
    for j in range(1, n):
        r = np.sqrt(v[order[j]])
        pred = out[j - 1] if j == 1 else 2 * out[j - 1] - out[j - 2]
        root = r if abs(r - pred) <= abs(-r - pred) else -r
        step = abs(root - out[j - 1])
        if step > (1 + tol) * math.sqrt(abs(v[order[j]] - v[order[j - 1]])):
            raise BranchError(f"square-root branch jump at vertex {order[j]}")
        out[j] = root
    close = abs(out[0] - out[-1])
    if abs(-out[0] - out[-1]) < close:
        raise BranchError("square-root tracking did not close up")
    result = np.empty(n, dtype=complex)
    result[order] = out
    return PolygonalDomain(Polyline(result, closed=True))
