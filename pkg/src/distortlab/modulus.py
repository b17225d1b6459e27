"""Discrete (weighted, q-) modulus of sampled path families on grids.

A family is a finite list of polylines. A density is piecewise constant on
the cells of a :class:`GridSpec`; the line integral of a density along a
polyline is exact, using per-cell clipped arc lengths. The modulus

    min  sum_c w_c rho_c^q |cell|   s.t.   int_gamma rho ds >= 1

is solved through its concave dual in the per-path multipliers lambda:
stationarity gives rho_c = (u_c / (q w_c))^(1/(q-1)) with u = A^T lambda.
The dual is maximised with a bound-constrained quasi-Newton method and the
reported value is the objective of a rescaled, exactly admissible rho, so
the duality gap certifies it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph
from scipy.spatial.distance import directed_hausdorff

from .errors import (DegenerateFamilyError, ParameterError, ResolutionError,
                     SolverError)
from .geometry import GridField, GridSpec, Polyline, make_rng

log = logging.getLogger(__name__)

GAP_TOL = 1e-4
MAX_ITER = 10_000
INEQ_SLACK = 1.15


# --------------------------------------------------------------------------
# analytic oracles


def annulus_q_modulus(r: float, R: float, q: float = 2.0) -> float:
    """q-modulus of the curves joining the boundary circles of r < |z| < R.

    The extremal density is radial, rho(t) ~ t^(-1/(q-1)).
    """
    if not (0 < r < R):
        raise ParameterError("annulus radii must satisfy 0 < r < R")
    if not q > 1:
        raise ParameterError("q must exceed 1")
    if q == 2:
        return 2 * math.pi / math.log(R / r)
    beta = (q - 2) / (q - 1)
    return 2 * math.pi * (beta / (R ** beta - r ** beta)) ** (q - 1)


def rectangle_modulus(width: float, height: float) -> float:
    """2-modulus of the curves joining the two sides of length ``width``."""
    if not (width > 0 and height > 0):
        raise ParameterError("rectangle dimensions must be positive")
    return width / height


# --------------------------------------------------------------------------
# regions used as path endpoints


class Region:
    """Closed planar set with membership and sampling."""

    def contains(self, z, tol: float = 1e-12) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def outline(self, n: int) -> np.ndarray:
        """Points on the boundary (used for overlap tests)."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Disk(Region):
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("disk radius must be positive")

    def contains(self, z, tol=1e-12):
        return np.abs(np.asarray(z) - self.center) <= self.radius * (1 + tol)

    def sample(self, n, rng):
        rad = self.radius * np.sqrt(rng.uniform(0, 1, n))
        return self.center + rad * np.exp(2j * np.pi * rng.uniform(0, 1, n))

    def outline(self, n):
        return self.center + self.radius * np.exp(2j * np.pi * np.arange(n) / n)

    def to_json(self):
        return {"kind": "disk", "center": [self.center.real, self.center.imag],
                "radius": self.radius}


@dataclass(frozen=True)
class Circle(Region):
    center: complex
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("circle radius must be positive")

    def contains(self, z, tol=1e-9):
        return np.abs(np.abs(np.asarray(z) - self.center) - self.radius) <= tol * max(1, self.radius)

    def sample(self, n, rng):
        return self.center + self.radius * np.exp(2j * np.pi * rng.uniform(0, 1, n))

    def outline(self, n):
        return self.center + self.radius * np.exp(2j * np.pi * np.arange(n) / n)

    def to_json(self):
        return {"kind": "circle", "center": [self.center.real, self.center.imag],
                "radius": self.radius}


@dataclass(frozen=True)
class Segment(Region):
    a: complex
    b: complex

    def contains(self, z, tol=1e-9):
        z = np.asarray(z, dtype=complex)
        d = self.b - self.a
        t = np.clip(((z - self.a) * np.conj(d)).real / abs(d) ** 2, 0, 1)
        return np.abs(z - (self.a + t * d)) <= tol * max(1, abs(d))

    def sample(self, n, rng):
        return self.a + rng.uniform(0, 1, n) * (self.b - self.a)

    def outline(self, n):
        return self.a + np.linspace(0, 1, n) * (self.b - self.a)

    def to_json(self):
        return {"kind": "segment", "a": [self.a.real, self.a.imag], "b": [self.b.real, self.b.imag]}


@dataclass(frozen=True)
class ClosedUnitDiskCap(Region):
    """``base`` intersected with the closed unit disk."""
    base: Region

    def contains(self, z, tol=1e-12):
        z = np.asarray(z)
        return self.base.contains(z, tol) & (np.abs(z) <= 1 + tol)

    def sample(self, n, rng):
        out = []
        got = 0
        for _ in range(200):
            pts = self.base.sample(4 * n, rng)
            pts = pts[np.abs(pts) <= 1]
            out.append(pts)
            got += len(pts)
            if got >= n:
                break
        pts = np.concatenate(out)[:n]
        if len(pts) < n:
            raise ResolutionError("region barely meets the closed disk")
        return pts

    def outline(self, n):
        pts = self.base.outline(n)
        inside = np.abs(pts) <= 1
        circ = np.exp(2j * np.pi * np.arange(4 * n) / (4 * n))
        return np.concatenate([pts[inside], circ[self.base.contains(circ)]])

    def to_json(self):
        return {"kind": "disk_cap", "base": self.base.to_json()}


@dataclass(frozen=True)
class RegionUnion(Region):
    parts: tuple

    def contains(self, z, tol=1e-12):
        z = np.asarray(z)
        out = np.zeros(z.shape, dtype=bool)
        for p in self.parts:
            out |= p.contains(z, tol)
        return out

    def sample(self, n, rng):
        idx = rng.integers(0, len(self.parts), n)
        pts = np.empty(n, dtype=complex)
        for k, p in enumerate(self.parts):
            sel = idx == k
            if sel.any():
                pts[sel] = p.sample(int(sel.sum()), rng)
        return pts

    def outline(self, n):
        return np.concatenate([p.outline(n) for p in self.parts])

    def to_json(self):
        return {"kind": "union", "parts": [p.to_json() for p in self.parts]}


def regions_overlap(E: Region, F: Region, n: int = 2048, seed: int = 0) -> bool:
    rng = make_rng(seed)
    pe = np.concatenate([E.outline(n), E.sample(n, rng)])
    pf = np.concatenate([F.outline(n), F.sample(n, rng)])
    return bool(F.contains(pe, 0).any() or E.contains(pf, 0).any())


# --------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class PathFamily:
    paths: tuple
    label: str = "family"
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.paths) == 0:
            raise ParameterError("path family must be nonempty")
        object.__setattr__(self, "paths", tuple(self.paths))
        for p in self.paths:
            if not np.isfinite(p.length):
                raise ParameterError("paths must have finite length")

    def __len__(self):
        return len(self.paths)

    def bounds(self):
        v = np.concatenate([p.vertices for p in self.paths])
        return v.real.min(), v.imag.min(), v.real.max(), v.imag.max()

    def mapped(self, f: Callable, max_step: Optional[float] = None, label=None) -> "PathFamily":
        """Image family; source polylines are refined until consecutive
        image vertices are at most ``max_step`` apart."""
        out = [Polyline(_map_polyline(p.vertices, f, max_step), False) for p in self.paths]
        return PathFamily(tuple(out), label or f"image({self.label})", dict(self.generator))

    def union(self, other: "PathFamily") -> "PathFamily":
        return PathFamily(self.paths + other.paths, f"{self.label}+{other.label}",
                          {"kind": "union"})

    def to_json(self) -> dict:
        return {"label": self.label, "generator": self.generator,
                "paths": [p.to_json() for p in self.paths]}

    @classmethod
    def from_json(cls, data) -> "PathFamily":
        return cls(tuple(Polyline.from_json(p) for p in data["paths"]), data.get("label", "family"),
                   data.get("generator", {}))


def _map_polyline(v: np.ndarray, f: Callable, max_step: Optional[float]) -> np.ndarray:
    w = f(v)
    if max_step is None:
        return _dedupe(w)
    for _ in range(30):
        gaps = np.abs(np.diff(w))
        bad = np.nonzero(gaps > max_step)[0]
        if len(bad) == 0:
            break
        n_ins = np.minimum(np.ceil(gaps[bad] / max_step).astype(int), 64)
        new_v, new_w = [v[:1]], [w[:1]]
        prev = 0
        for i, k in zip(bad, n_ins):
            new_v.append(v[prev + 1:i + 1])
            new_w.append(w[prev + 1:i + 1])
            t = np.arange(1, k) / k
            ins = v[i] + t * (v[i + 1] - v[i])
            new_v.append(ins)
            new_w.append(f(ins))
            prev = i
        new_v.append(v[prev + 1:])
        new_w.append(w[prev + 1:])
        v = np.concatenate(new_v)
        w = np.concatenate(new_w)
    return _dedupe(w)


def _dedupe(w: np.ndarray) -> np.ndarray:
    keep = np.ones(len(w), dtype=bool)
    keep[1:] = np.abs(np.diff(w)) > 0
    w = w[keep]
    if len(w) < 2:
        raise ResolutionError("image path collapsed to a point")
    return w


def family_grid(family: PathFamily, n: int, pad: float = 0.02) -> GridSpec:
    """Square-cell grid covering the family with ``n`` cells along the
    longer side (plus relative padding)."""
    xmin, ymin, xmax, ymax = family.bounds()
    return GridSpec.covering(xmin, ymin, xmax, ymax, n, pad)


def radial_family(center: complex, r: float, R: float, n_paths: int) -> PathFamily:
    ang = 2 * np.pi * np.arange(n_paths) / n_paths
    u = np.exp(1j * ang)
    paths = tuple(Polyline(np.array([center + r * e, center + R * e]), False) for e in u)
    return PathFamily(paths, f"radial({r:g},{R:g})",
                      {"kind": "radial", "center": [center.real, center.imag], "r": r, "R": R,
                       "n_paths": n_paths})


def crossing_family(a: Segment, b: Segment, n_paths: int) -> PathFamily:
    """Straight segments between two parallel sides, evenly spaced."""
    da, db = a.b - a.a, b.b - b.a
    if abs(cross_c(da, db)) > 1e-12 * abs(da) * abs(db):
        raise ParameterError("straight generator needs parallel sides")
    if np.dot([da.real, da.imag], [db.real, db.imag]) < 0:
        b = Segment(b.b, b.a)
    t = (np.arange(n_paths) + 0.5) / n_paths
    normal = 1j * da / abs(da)
    paths = []
    for ti in t:
        p = a.a + ti * da
        # foot of p on the line through b
        s = ((p - b.a) * np.conj(db)).real / abs(db) ** 2
        q = b.a + s * db
        if abs(((q - p) * np.conj(normal)).imag) > 1e-9 * abs(q - p):
            raise ParameterError("sides are not facing each other")
        paths.append(Polyline(np.array([p, q]), False))
    return PathFamily(tuple(paths), "straight", {"kind": "straight", "n_paths": n_paths})


def cross_c(u: complex, v: complex) -> float:
    return (np.conj(u) * v).imag


def _inside_domain(domain, pts) -> np.ndarray:
    if domain is None:
        return np.ones(np.shape(pts), dtype=bool)
    if domain == "disk":
        return np.abs(pts) <= 1 + 1e-12
    return np.asarray(domain(pts), dtype=bool)


def _arc(a: complex, b: complex, bulge: float, n: int) -> np.ndarray:
    """Circular arc from a to b whose sagitta is ``bulge`` * |b - a|."""
    if abs(bulge) < 1e-9:
        return a + np.linspace(0, 1, n) * (b - a)
    d = b - a
    L = abs(d)
    sag = bulge * L
    rad = (L * L / 4 + sag * sag) / (2 * abs(sag))
    mid = (a + b) / 2
    nrm = 1j * d / L * np.sign(sag)
    c = mid + nrm * (abs(sag) - rad)
    a0 = np.angle(a - c)
    a1 = np.angle(b - c)
    sweep = np.angle(np.exp(1j * (a1 - a0)))
    # choose the sweep that passes through the bulge point
    peak = mid + nrm * abs(sag)
    mid_ang = np.angle(np.exp(1j * (np.angle(peak - c) - a0)))
    if np.sign(mid_ang) != np.sign(sweep) or abs(mid_ang) > abs(sweep):
        sweep = sweep - np.sign(sweep) * 2 * np.pi
    return c + rad * np.exp(1j * (a0 + sweep * np.linspace(0, 1, n)))


def _grid_paths(E: Region, F: Region, grid: GridSpec, n: int, rng, domain) -> list:
    """Shortest 8-neighbour grid paths from E to F under random positive
    edge weights; each weighting contributes a handful of paths."""
    centers = grid.centers().ravel()
    ok = _inside_domain(domain, centers)
    in_e = ok & E.contains(centers, 0)
    in_f = ok & F.contains(centers, 0)
    if not in_e.any() or not in_f.any():
        return []
    nx, ny = grid.nx, grid.ny
    idx = np.arange(grid.n_cells).reshape(ny, nx)
    rows, cols, lens = [], [], []
    for dj, di in ((0, 1), (1, 0), (1, 1), (1, -1)):
        # cell (j, i) linked to (j + dj, i + di)
        a = idx[:ny - dj, max(0, -di):nx - max(0, di)]
        b = idx[dj:, max(0, di):nx + min(0, di)]
        rows.append(a.ravel())
        cols.append(b.ravel())
        lens.append(np.full(a.size, math.hypot(di, dj)))
    rows, cols, lens = map(np.concatenate, (rows, cols, lens))
    good = ok[rows] & ok[cols]
    rows, cols, lens = rows[good], cols[good], lens[good]
    src = np.nonzero(in_e)[0]
    tgt = np.nonzero(in_f)[0]
    out = []
    per = max(1, min(4, n))
    while len(out) < n:
        wts = lens * rng.lognormal(0.0, 0.6, len(lens))
        G = sparse.coo_matrix((np.concatenate([wts, wts]),
                               (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
                              shape=(grid.n_cells, grid.n_cells)).tocsr()
        dist, pred, _ = csgraph.dijkstra(G, indices=src, min_only=True,
                                         return_predecessors=True)
        reach = tgt[np.isfinite(dist[tgt])]
        if len(reach) == 0:
            break
        for t in rng.choice(reach, size=min(per, len(reach)), replace=False):
            chain = [t]
            while pred[chain[-1]] >= 0:
                chain.append(pred[chain[-1]])
            v = centers[np.array(chain[::-1])]
            if len(v) >= 2:
                out.append(v)
            if len(out) >= n:
                break
    return out


def family_diversity(family: PathFamily, max_paths: int = 48, n_bins: int = 8) -> dict:
    """Histogram of pairwise Hausdorff distances over a subset of paths."""
    paths = family.paths[:max_paths]
    pts = [np.column_stack([p.sample(32).real, p.sample(32).imag]) for p in paths]
    d = []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d.append(max(directed_hausdorff(pts[i], pts[j])[0],
                         directed_hausdorff(pts[j], pts[i])[0]))
    if not d:
        return {"counts": [], "edges": []}
    counts, edges = np.histogram(d, bins=n_bins)
    return {"counts": counts.tolist(), "edges": [float(e) for e in edges]}


def sample_connecting_family(E: Region, F: Region, grid: GridSpec, n_paths: int,
                             seed: int = 0, domain=None, generator: str = "auto",
                             n_arc_vertices: int = 24) -> PathFamily:
    """Paths from E to F, all vertices inside ``domain``.

    generator "auto" picks "radial" for concentric circles and "straight"
    for parallel segments; otherwise the family mixes straight segments,
    circular arcs of random bulge and shortest grid paths under random edge
    weightings ("mixed").
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be positive")
    if regions_overlap(E, F):
        raise DegenerateFamilyError("E and F intersect; the modulus is infinite")
    if generator == "auto":
        if isinstance(E, Circle) and isinstance(F, Circle) and E.center == F.center:
            generator = "radial"
        elif isinstance(E, Segment) and isinstance(F, Segment):
            generator = "straight"
        else:
            generator = "mixed"
    if generator == "radial":
        r, R = sorted((E.radius, F.radius))
        fam = radial_family(E.center, r, R, n_paths)
    elif generator == "straight":
        fam = crossing_family(E, F, n_paths)
    elif generator == "mixed":
        fam = _mixed_family(E, F, grid, n_paths, seed, domain, n_arc_vertices)
    else:
        raise ParameterError(f"unknown generator {generator!r}")
    gen = dict(fam.generator)
    gen.update({"E": E.to_json(), "F": F.to_json(), "seed": seed,
                "diversity": family_diversity(fam)})
    return PathFamily(fam.paths, fam.label, gen)


def _mixed_family(E, F, grid, n_paths, seed, domain, n_arc_vertices) -> PathFamily:
    rng = make_rng(seed)
    n_grid = n_paths // 3
    n_geo = n_paths - n_grid
    paths, kinds = [], []
    tries = 0
    while len(paths) < n_geo and tries < 50:
        tries += 1
        m = 2 * (n_geo - len(paths))
        a = E.sample(m, rng)
        b = F.sample(m, rng)
        bulge = np.where(rng.uniform(size=m) < 0.5, 0.0, rng.uniform(-0.4, 0.4, m))
        for ai, bi, bu in zip(a, b, bulge):
            if abs(bi - ai) == 0:
                continue
            v = _arc(ai, bi, bu, n_arc_vertices if bu else 2)
            dense = v if bu else ai + np.linspace(0, 1, 16) * (bi - ai)
            if _inside_domain(domain, dense).all():
                paths.append(v)
                kinds.append("arc" if bu else "straight")
            if len(paths) >= n_geo:
                break
    for v in _grid_paths(E, F, grid, n_paths - len(paths), rng, domain):
        paths.append(v)
        kinds.append("grid")
    if not paths:
        raise ResolutionError("no connecting path found inside the domain")
    polys = []
    for v in paths:
        keep = np.ones(len(v), dtype=bool)
        keep[1:] = np.abs(np.diff(v)) > 0
        if keep.sum() >= 2:
            polys.append(Polyline(v[keep], False))
    counts = {k: kinds.count(k) for k in ("straight", "arc", "grid")}
    return PathFamily(tuple(polys), "mixed", {"kind": "mixed", "n_paths": len(polys),
                                              "counts": counts})


# --------------------------------------------------------------------------
# path / cell incidence


def segment_cell_lengths(a: np.ndarray, b: np.ndarray, grid: GridSpec):
    """Clip each segment [a_k, b_k] against the grid.

    Returns (segment index, flat cell index, length) arrays for the pieces
    inside the grid, the per-segment length falling outside it and the
    (t0, t1) parameter interval of each returned piece.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    m = len(a)
    h = grid.cell
    pa = (a - grid.origin) / h
    pb = (b - grid.origin) / h
    x0, y0, x1, y1 = pa.real, pa.imag, pb.real, pb.imag
    dx, dy = x1 - x0, y1 - y0
    seglen = np.abs(b - a)

    def crossings(c0, c1, dc):
        i0, i1 = np.floor(c0), np.floor(c1)
        nc = np.abs(i1 - i0).astype(np.int64)
        seg = np.repeat(np.arange(m), nc)
        k = np.arange(nc.sum()) - np.repeat(np.cumsum(nc) - nc, nc)
        line = np.where(dc[seg] > 0, i0[seg] + 1 + k, i0[seg] - k)
        return seg, (line - c0[seg]) / dc[seg]

    sx, tx = crossings(x0, x1, dx)
    sy, ty = crossings(y0, y1, dy)
    ar = np.arange(m)
    seg = np.concatenate([ar, ar, sx, sy])
    t = np.concatenate([np.zeros(m), np.ones(m), tx, ty])
    order = np.lexsort((t, seg))
    seg, t = seg[order], t[order]
    same = seg[1:] == seg[:-1]
    t0, t1, sg = t[:-1][same], t[1:][same], seg[:-1][same]
    dt = t1 - t0
    pos = dt > 0
    t0, dt, sg = t0[pos], dt[pos], sg[pos]
    tm = t0 + 0.5 * dt
    ci = np.floor(x0[sg] + tm * dx[sg]).astype(np.int64)
    cj = np.floor(y0[sg] + tm * dy[sg]).astype(np.int64)
    length = dt * seglen[sg]
    inside = (ci >= 0) & (ci < grid.nx) & (cj >= 0) & (cj < grid.ny)
    outside = np.bincount(sg[~inside], weights=length[~inside], minlength=m)
    return (sg[inside], (cj * grid.nx + ci)[inside], length[inside], outside,
            (t0[inside], (t0 + dt)[inside]))


def _family_segments(family: PathFamily):
    starts, ends, owner = [], [], []
    for k, p in enumerate(family.paths):
        v = p.vertices
        starts.append(v[:-1])
        ends.append(v[1:])
        owner.append(np.full(len(v) - 1, k))
    return np.concatenate(starts), np.concatenate(ends), np.concatenate(owner)


def incidence_matrix(family: PathFamily, grid: GridSpec):
    """Sparse (paths x cells) matrix of clipped arc lengths, plus each
    path's length outside the grid."""
    a, b, owner = _family_segments(family)
    sg, cell, length, outside, _ = segment_cell_lengths(a, b, grid)
    A = sparse.coo_matrix((length, (owner[sg], cell)),
                          shape=(len(family), grid.n_cells)).tocsr()
    A.sum_duplicates()
    out = np.bincount(owner, weights=outside, minlength=len(family))
    return A, out


# --------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class ModulusProblem:
    family: PathFamily
    grid: GridSpec
    weight: Optional[GridField] = None
    exponent_q: float = 2.0

    def __post_init__(self):
        if not self.exponent_q > 1:
            raise ParameterError("exponent_q must exceed 1")
        if self.weight is not None:
            w = np.asarray(self.weight.values, dtype=float)
            if w.shape != (self.grid.ny, self.grid.nx):
                raise ParameterError("weight grid does not match problem grid")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ParameterError("weights must be finite and nonnegative")

    def weight_array(self) -> np.ndarray:
        if self.weight is None:
            return np.ones(self.grid.n_cells)
        return np.asarray(self.weight.values, dtype=float).ravel()

    def to_json(self) -> dict:
        return {"family": self.family.to_json(), "grid": self.grid.to_json(),
                "weight": None if self.weight is None else
                np.asarray(self.weight.values).tolist(),
                "exponent_q": self.exponent_q}

    @classmethod
    def from_json(cls, data) -> "ModulusProblem":
        grid = GridSpec.from_json(data["grid"])
        w = data.get("weight")
        weight = None if w is None else GridField(grid, np.array(w, dtype=float))
        return cls(PathFamily.from_json(data["family"]), grid, weight,
                   float(data.get("exponent_q", 2.0)))


@dataclass
class ModulusResult:
    value: float
    rho: GridField
    admissibility_slack: float
    iterations: int
    dual_value: float = float("nan")
    gap: float = float("nan")
    n_paths_used: int = 0
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"value": self.value, "dual_value": self.dual_value, "gap": self.gap,
                "admissibility_slack": self.admissibility_slack,
                "iterations": self.iterations, "n_paths_used": self.n_paths_used,
                "warnings": list(self.warnings)}


def _check_incidence(A, outside, family: PathFamily) -> list:
    total = np.array([p.length for p in family.paths])
    if np.any(outside > 1e-9 * total):
        bad = int(np.sum(outside > 1e-9 * total))
        raise ResolutionError(f"{bad} paths leave the grid")
    per_path = np.diff(A.indptr)
    if np.any(per_path < 1):
        raise ResolutionError("a path does not cross any grid cell")
    if np.any(per_path < 2):
        return [f"{int(np.sum(per_path < 2))} paths lie within one cell"]
    return []


def _solve(A, cost: np.ndarray, q: float, gap_tol: float, max_iter: int):
    """min sum cost_c rho_c^q subject to A rho >= 1 by dual maximisation.

    ``cost`` must be positive on every column. Returns (primal, dual, rho,
    iterations).
    """
    qc = q * cost
    expo = 1.0 / (q - 1.0)
    At = A.T.tocsr()

    def rho_of(lam):
        return (At @ lam / qc) ** expo

    def negdual(lam):
        u = At @ lam
        rho = (u / qc) ** expo
        g = lam.sum() - (1 - 1 / q) * float(u @ rho)
        return -g, (A @ rho) - 1.0

    lam = np.ones(A.shape[0])
    lam *= float(np.mean(A @ rho_of(lam))) ** -(q - 1)
    history = []
    iters = 0
    best = None
    while iters < max_iter:
        res = optimize.minimize(negdual, lam, jac=True, method="L-BFGS-B",
                                bounds=[(0, None)] * len(lam),
                                options={"maxiter": min(2000, max_iter - iters), "ftol": 0.0,
                                         "gtol": 1e-14, "maxcor": 30})
        iters += max(int(res.nit), 1)
        lam = res.x
        rho = rho_of(lam)
        lo = float((A @ rho).min())
        dual = -float(res.fun)
        if lo <= 0:
            history.append(math.inf)
            break
        rho_hat = rho / lo
        primal = float(np.sum(cost * rho_hat ** q))
        history.append((primal - dual) / primal)
        if best is None or primal < best[0]:
            best = (primal, dual, rho_hat)
        if primal - dual <= gap_tol * primal:
            break
        if res.nit == 0 or (len(history) > 1 and history[-1] >= 0.999 * history[-2]):
            break
    if best is None or best[0] - best[1] > gap_tol * best[0]:
        raise SolverError("modulus dual ascent did not converge "
                          f"(relative gap {history[-1] if history else float('nan'):.3g})",
                          history)
    return best[0], best[1], best[2], iters


def _solve_cells(A, area: np.ndarray, weight: np.ndarray, q: float, grid: GridSpec,
                 gap_tol: float, max_iter: int, warnings: list) -> ModulusResult:
    """Shared driver: drops free paths, normalises units, solves and packs
    the density back onto ``grid``. ``area`` and ``weight`` are per cell."""
    # paths crossing a zero-cost cell with positive length cost nothing
    cost_full = area * weight
    free = (A @ (cost_full <= 0).astype(float)) > 0
    if free.all():
        warnings.append("every path crosses a zero-weight cell; modulus is 0")
        log.warning("discrete_modulus: weight degenerate, value 0")
        return ModulusResult(0.0, GridField(grid, np.zeros((grid.ny, grid.nx))), math.inf, 0,
                             0.0, 0.0, 0, warnings)
    if free.any():
        warnings.append(f"{int(free.sum())} paths cross zero-weight cells and were dropped")
    A = A[~free]
    used = np.unique(A.indices)
    A = A[:, used].tocsr()
    # unit length L0 and unit cost c0 keep the scaled problem near 1
    L0 = float(np.sqrt(np.median(area[used])))
    c0 = float(np.max(weight[used]))
    An = A / L0
    cost = (area[used] / L0 ** 2) * (weight[used] / c0)
    primal, dual, rho_n, iters = _solve(An, cost, q, gap_tol, max_iter)
    unit = c0 * L0 ** (2 - q)
    rho_full = np.zeros(grid.n_cells)
    rho_full[used] = rho_n / L0
    slack = float((An @ rho_n).min()) - 1.0
    return ModulusResult(primal * unit, GridField(grid, rho_full.reshape(grid.ny, grid.nx)),
                         slack, iters, dual * unit, (primal - dual) * unit, int(A.shape[0]),
                         warnings)


def discrete_modulus(problem: ModulusProblem, gap_tol: float = GAP_TOL,
                     max_iter: int = MAX_ITER) -> ModulusResult:
    """Weighted q-modulus of the sampled family on the problem grid."""
    grid = problem.grid
    A, outside = incidence_matrix(problem.family, grid)
    warnings = _check_incidence(A, outside, problem.family)
    area = np.full(grid.n_cells, grid.cell_area)
    return _solve_cells(A, area, problem.weight_array(), problem.exponent_q, grid, gap_tol,
                        max_iter, warnings)


def pushforward_modulus(m, family: PathFamily, grid: GridSpec, q: float = 2.0,
                        n_sub: int = 4, quad: int = 4, gap_tol: float = GAP_TOL,
                        max_iter: int = MAX_ITER) -> ModulusResult:
    """Unweighted q-modulus of the image family f(Gamma) on the image mesh
    {f(Q)} of the source grid cells.

    The length of f(gamma) inside f(Q) is the image length of gamma
    inside Q (f is a homeomorphism), measured along ``n_sub`` sub-pieces;
    the area of f(Q) is the integral of the Jacobian over Q (restricted to
    the map's domain) by a ``quad`` x ``quad`` midpoint rule. The returned
    density lives on the source cells and means rho on f(Q).
    """
    from .maps import complex_derivatives

    a, b, owner = _family_segments(family)
    sg, cell, _, outside, (t0, t1) = segment_cell_lengths(a, b, grid)
    total = np.array([p.length for p in family.paths])
    out_path = np.bincount(owner, weights=outside, minlength=len(family))
    if np.any(out_path > 1e-9 * total):
        raise ResolutionError(f"{int(np.sum(out_path > 1e-9 * total))} paths leave the grid")
    tt = t0[:, None] + (t1 - t0)[:, None] * (np.arange(n_sub + 1) / n_sub)[None, :]
    pts = a[sg][:, None] + tt * (b - a)[sg][:, None]
    img = m(pts.ravel()).reshape(pts.shape)
    ilen = np.abs(np.diff(img, axis=1)).sum(axis=1)
    A = sparse.coo_matrix((ilen, (owner[sg], cell)), shape=(len(family), grid.n_cells)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    if np.any(np.diff(A.indptr) < 1):
        raise ResolutionError("image path collapsed below resolution")
    warnings = []

    used = np.unique(A.indices)
    h = grid.cell
    off = (np.arange(quad) + 0.5) / quad
    sub = ((off[None, :] + 1j * off[:, None]).ravel()) * h
    corner = grid.origin + (used % grid.nx) * h + 1j * (used // grid.nx) * h
    qp = corner[:, None] + sub[None, :]
    inside = m.in_domain(qp)
    if m.domain == "disk":
        margin = 4 * m.fd_step
        r = np.abs(qp)
        qp = np.where(r > 1 - margin, qp / np.maximum(r, 1e-300) * (1 - margin), qp)
    dz, dzb = complex_derivatives(m, qp.ravel())
    J = (np.abs(dz) ** 2 - np.abs(dzb) ** 2).reshape(qp.shape)
    n_bad = int(np.sum(inside & (J <= 0)))
    if n_bad:
        warnings.append(f"{n_bad} quadrature points with nonpositive Jacobian")
    J = np.where(inside, np.maximum(J, 0.0), 0.0)
    area = np.zeros(grid.n_cells)
    area[used] = J.mean(axis=1) * grid.cell_area
    # a crossed cell whose quadrature missed the domain keeps a positive area
    missing = used[area[used] <= 0]
    if len(missing):
        warnings.append(f"{len(missing)} crossed cells had no quadrature point inside the domain")
        cen = grid.centers().ravel()[missing]
        if m.domain == "disk":
            cen = np.where(np.abs(cen) > 1 - 4 * m.fd_step,
                           cen / np.abs(cen) * (1 - 4 * m.fd_step), cen)
        dz, dzb = complex_derivatives(m, cen)
        area[missing] = np.maximum(np.abs(dz) ** 2 - np.abs(dzb) ** 2, 0.0) * grid.cell_area / quad ** 2
    return _solve_cells(A, area, np.ones(grid.n_cells), q, grid, gap_tol, max_iter, warnings)


def objective_of(problem: ModulusProblem, rho: GridField) -> float:
    """sum w rho^q |cell| for a density on the problem grid."""
    r = np.asarray(rho.values, dtype=float).ravel()
    return float(np.sum(problem.weight_array() * r ** problem.exponent_q) * problem.grid.cell_area)


def path_integrals(family: PathFamily, rho: GridField) -> np.ndarray:
    A, _ = incidence_matrix(family, rho.grid)
    return A @ np.asarray(rho.values, dtype=float).ravel()


# --------------------------------------------------------------------------
# modulus inequality


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    ratio: float
    slack: float
    passed: bool
    lhs_result: ModulusResult
    rhs_result: ModulusResult
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "slack": self.slack,
                "passed": self.passed, "lhs_result": self.lhs_result.to_json(),
                "rhs_result": self.rhs_result.to_json(), "notes": list(self.notes)}


def distortion_weight(m, problem: ModulusProblem) -> GridField:
    """Problem weight multiplied by the pointwise distortion of ``m`` on
    the cells crossed by the family."""
    from .maps import distortion_field

    A, _ = incidence_matrix(problem.family, problem.grid)
    cells = np.unique(A.indices)
    fld = distortion_field(m, problem.grid, None, None, cells=cells)
    K = np.asarray(fld.values, dtype=float).ravel()
    base = problem.weight_array()
    w = np.where(np.isfinite(K), K, 1.0) * base
    notes = {"degenerate": fld.meta["degenerate"]}
    return GridField(problem.grid, w.reshape(problem.grid.ny, problem.grid.nx), None, notes)


def modulus_inequality_check(m, problem: ModulusProblem, slack: float = INEQ_SLACK,
                             image_mesh: str = "pushforward", image_n: Optional[int] = None,
                             gap_tol: float = GAP_TOL) -> InequalityReport:
    """Compare M(f(Gamma)) with the distortion-weighted M_{K_f}(Gamma).

    image_mesh "pushforward" solves the image problem on the cells f(Q) of
    the source grid, which follows the local scale of f. "uniform" maps
    the paths vertex-wise (refined until image steps are below half a
    cell) onto a square grid with as many cells along its longer side as
    the source grid (or ``image_n``); there, image paths shorter than two
    cells overstate lhs and are counted in the notes.
    """
    notes = []
    grid = problem.grid
    if image_mesh == "pushforward":
        lhs_res = pushforward_modulus(m, problem.family, grid, problem.exponent_q,
                                      gap_tol=gap_tol)
    elif image_mesh == "uniform":
        img0 = problem.family.mapped(m)
        xmin, ymin, xmax, ymax = img0.bounds()
        ext = max(xmax - xmin, ymax - ymin)
        if ext <= 0 or not np.isfinite(ext):
            raise ResolutionError("image family collapsed")
        n_src = max(grid.nx, grid.ny)
        n = image_n or n_src
        image = problem.family.mapped(m, max_step=0.5 * ext / n)
        if n == n_src and np.allclose(image.bounds(), problem.family.bounds(), rtol=0,
                                      atol=1e-12 * ext):
            igrid = grid
        else:
            igrid = family_grid(image, n)
        if igrid.cell < 1e-13 * max(1.0, abs(igrid.origin)):
            raise ResolutionError("image family collapsed below grid resolution")
        lhs_res = discrete_modulus(ModulusProblem(image, igrid, None, problem.exponent_q),
                                   gap_tol)
        notes.append(f"image grid {igrid.nx}x{igrid.ny}")
        n_short = sum(pth.length < 2 * igrid.cell for pth in image.paths)
        if n_short:
            notes.append(f"{n_short} image paths shorter than two image cells")
    else:
        raise ParameterError(f"unknown image mesh {image_mesh!r}")
    wfield = distortion_weight(m, problem)
    rhs_res = discrete_modulus(ModulusProblem(problem.family, grid, wfield, problem.exponent_q),
                               gap_tol)
    lhs, rhs = lhs_res.value, rhs_res.value
    ratio = lhs / rhs if rhs > 0 else math.inf
    if wfield.meta.get("degenerate"):
        notes.append(f"{wfield.meta['degenerate']} cells had a degenerate Jacobian (weight 1)")
    notes.extend(lhs_res.warnings)
    return InequalityReport(lhs, rhs, ratio, slack, bool(lhs <= rhs * slack), lhs_res, rhs_res,
                            notes)


def boundary_pair_regions(x: complex, r: float):
    """E = B(x, r/3) and F = B(z, r/3), both cut to the closed disk, where
    z is the boundary point counter-clockwise from x with |z - x| = r."""
    if not (0 < r < 2):
        raise ParameterError("r must lie in (0, 2)")
    x = complex(x) / abs(x)
    z = x * np.exp(2j * math.asin(r / 2))
    return (ClosedUnitDiskCap(Disk(x, r / 3)), ClosedUnitDiskCap(Disk(complex(z), r / 3)),
            complex(z))
