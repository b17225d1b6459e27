"""Box-counting dimension, disjoint ball selection, dyadic bands and the
compression set of a map on the unit circle.

Dyadic band m is L_m = (2^-m, 2^-m+1], m = 1, 2, ..., a partition of (0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ParameterError, PrecisionError
from .maps import PlanarMap

EPS = np.finfo(float).eps
BALL_FACTOR = 5.0
DIM_TOL = 0.1


@dataclass(frozen=True)
class BallCover:
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.centers, dtype=complex))
        r = np.atleast_1d(np.asarray(self.radii, dtype=float))
        if c.shape != r.shape:
            raise ParameterError("centers and radii differ in length")
        if np.any(r <= 0):
            raise ParameterError("radii must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    def __len__(self):
        return len(self.radii)

    def pairwise_disjoint(self) -> bool:
        d = np.abs(self.centers[:, None] - self.centers[None, :])
        s = self.radii[:, None] + self.radii[None, :]
        iu = np.triu_indices(len(self), 1)
        return bool(np.all(d[iu] > s[iu]))


@dataclass(frozen=True)
class DyadicScale:
    m: int
    count: int
    disjoint: BallCover
    members: tuple = ()

    def __post_init__(self):
        if self.m < 1 or self.count < 0:
            raise ParameterError("invalid dyadic scale")

    @property
    def band(self) -> tuple:
        return (2.0 ** -self.m, 2.0 ** (-self.m + 1))

    @property
    def n_disjoint(self) -> int:
        return len(self.disjoint)


@dataclass(frozen=True)
class DimensionEstimate:
    s_hat: float
    scales: np.ndarray
    counts: np.ndarray
    fit_stderr: float
    intercept: float = 0.0
    warnings: tuple = ()

    def to_json(self) -> dict:
        return {"s_hat": self.s_hat, "fit_stderr": self.fit_stderr,
                "scales": self.scales.tolist(), "counts": self.counts.tolist(),
                "warnings": list(self.warnings)}


# --------------------------------------------------------------------------
# box counting


def box_counts(points, scales, n_offsets: int = 4) -> np.ndarray:
    """Occupied boxes per scale, minimised over n_offsets^2 grid shifts."""
    pts = np.asarray(points, dtype=complex)
    x, y = pts.real, pts.imag
    out = []
    for d in scales:
        best = None
        for i in range(n_offsets):
            for j in range(n_offsets):
                kx = np.floor((x - x.min()) / d + i / n_offsets).astype(np.int64)
                ky = np.floor((y - y.min()) / d + j / n_offsets).astype(np.int64)
                n = len(np.unique(kx * (ky.max() + 2) + ky))
                best = n if best is None else min(best, n)
        out.append(best)
    return np.array(out)


def box_dimension(points, scales, n_offsets: int = 4) -> DimensionEstimate:
    """Slope of log(occupied boxes) against log(1/scale)."""
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if len(pts) == 0:
        raise ParameterError("box_dimension needs points")
    if len(scales) < 4 or scales[0] / scales[-1] < 100 * (1 - 1e-12) or np.any(scales <= 0):
        raise ParameterError("need at least 4 positive scales spanning two decades")
    warnings = []
    if len(np.unique(pts)) < 10:
        warnings.append(f"only {len(np.unique(pts))} distinct points")
    counts = box_counts(pts, scales, n_offsets)
    diam = float(np.max(np.abs(pts - pts[0])))
    if diam > 0 and counts[0] < 2:
        raise ParameterError(f"scale range error: one box at the largest scale {scales[0]:g}; "
                             "use smaller scales")
    if np.all(counts == counts[0]):
        return DimensionEstimate(0.0, scales, counts, 0.0, float(np.log(counts[0])),
                                 tuple(warnings))
    fit = stats.linregress(np.log(1 / scales), np.log(counts))
    s_hat = float(np.clip(fit.slope, 0.0, 2.0))
    return DimensionEstimate(s_hat, scales, counts, float(fit.stderr), float(fit.intercept),
                             tuple(warnings))


def cantor_points(level: int, kind: str = "endpoints") -> np.ndarray:
    """Middle-thirds Cantor intervals of the given level: their left ends
    ("left") or both ends ("endpoints"), as points on the real axis."""
    left = np.array([0.0])
    for k in range(level):
        left = np.concatenate([left, left + 2 * 3.0 ** -(k + 1)])
    left = np.sort(left)
    if kind == "left":
        return left + 0j
    if kind == "endpoints":
        return np.sort(np.concatenate([left, left + 3.0 ** -level])) + 0j
    raise ParameterError(f"unknown Cantor point kind {kind!r}")


# --------------------------------------------------------------------------
# balls and dyadic bands


def greedy_disjoint_balls(cover: BallCover) -> BallCover:
    """Process balls by decreasing radius (ties by input order) and keep
    each one that is disjoint from every ball kept so far."""
    if len(cover) == 0:
        raise ParameterError("cover must be nonempty")
    order = np.argsort(-cover.radii, kind="stable")
    kc = np.empty(len(cover), dtype=complex)
    kr = np.empty(len(cover))
    n = 0
    for i in order:
        c, r = cover.centers[i], cover.radii[i]
        if n == 0 or np.all(np.abs(kc[:n] - c) > kr[:n] + r):
            kc[n], kr[n] = c, r
            n += 1
    return BallCover(kc[:n].copy(), kr[:n].copy())


def dyadic_band(r: float) -> int:
    """The m with 2^-m < r <= 2^-m+1, for r in (0, 1]."""
    if not (0 < r <= 1):
        raise ParameterError("radius must lie in (0, 1]")
    f, e = math.frexp(r)  # r = f 2^e, f in [1/2, 1)
    return 2 - e if f == 0.5 else 1 - e


def dyadic_scale_selection(per_point_radii: dict, epsilon: float = 0.05,
                           factor: float = BALL_FACTOR, min_points: int = 2) -> list:
    """Bin each point's radii into dyadic bands; within a band each point
    contributes its largest radius there. Bands holding at least
    ``min_points`` points are returned, sorted by the size of the greedy disjoint subfamily of
    {B(z, factor r_z)} and then by point count. An empty list is the
    selection-empty outcome.

    ``epsilon`` is recorded only: the selection keeps every qualifying band
    and leaves the count threshold to the caller.
    """
    bands: dict = {}
    for z, radii in per_point_radii.items():
        best: dict = {}
        for r in radii:
            m = dyadic_band(float(r))
            best[m] = max(best.get(m, 0.0), float(r))
        for m, r in best.items():
            bands.setdefault(m, []).append((complex(z), r))
    out = []
    for m, items in bands.items():
        if len(items) < min_points:
            continue
        c = np.array([it[0] for it in items])
        r = np.array([it[1] for it in items])
        dis = greedy_disjoint_balls(BallCover(c, factor * r))
        out.append(DyadicScale(m, len(items), dis, tuple(items)))
    out.sort(key=lambda d: (-d.n_disjoint, -d.count, d.m))
    return out


# --------------------------------------------------------------------------
# compression set


@dataclass
class CompressionSet:
    points: np.ndarray
    radii: dict
    exponents: dict
    partners: dict
    threshold: float
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def to_rows(self) -> list:
        rows = []
        for z in self.points:
            for lam, a in zip(self.radii[complex(z)], self.exponents[complex(z)]):
                rows.append([z.real, z.imag, lam, a])
        return rows


def threshold_exponent(K: float, p: float, s: float, epsilon: float) -> float:
    """2K + (2 - s + epsilon)/p."""
    return 2 * K + (0.0 if math.isinf(p) else (2 - s + epsilon) / p)


def compression_set(m: PlanarMap, K: float, p: float, s: float, epsilon: float = 0.05,
                    boundary_samples: int = 4096, scale_floor: float = 1e-7,
                    max_scale: float = 2.0 ** -6, min_witness: int = 3) -> CompressionSet:
    """Boundary points z where |f(z) - f(w)| <= |z - w|^theta for at least
    ``min_witness`` dyadic separations in [scale_floor, max_scale], with
    theta = 2K + (2 - s + epsilon)/p and w from either the tangential rule
    (w on the circle at chord |z - w|) or the conjugate-pair rule (a pair
    on the circle straddling z). The recorded partner of each witness is
    the tangential point at chord equal to the separation.
    """
    if not (0 < s < 2):
        raise ParameterError("s must be in (0,2)")
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if scale_floor < 1e-8:
        raise ParameterError("scale_floor must be >= 1e-8")
    if K < 1 or p < 1:
        raise ParameterError("K and p must be >= 1")
    theta = threshold_exponent(K, p, s, epsilon)
    k_lo = max(1, int(math.ceil(-math.log2(max_scale) - 1e-12)))
    k_hi = int(math.floor(-math.log2(scale_floor) + 1e-12))
    lam = 2.0 ** -np.arange(k_lo, k_hi + 1)
    z = np.exp(2j * np.pi * np.arange(boundary_samples) / boundary_samples)
    ok = np.zeros((boundary_samples, len(lam)), dtype=bool)
    best_d = np.full((boundary_samples, len(lam)), np.inf)
    partner = np.zeros((boundary_samples, len(lam)), dtype=complex)
    fz = m(z)
    for j, l in enumerate(lam):
        dt = 2 * math.asin(l / 2)
        w = z * np.exp(1j * dt)
        d_tan = np.abs(m(w) - fz)
        dc = math.asin(l / 2)
        a, b = z * np.exp(1j * dc), z * np.exp(-1j * dc)
        fa, fb = m(a), m(b)
        d_conj = np.abs(fa - fb)
        floor = 1e3 * EPS * np.maximum.reduce([np.abs(fz), np.abs(fa), np.abs(fb),
                                               np.abs(m(w))])
        if np.any((d_tan <= floor) & (d_conj <= floor)):
            raise PrecisionError(f"distances at separation {l:g} are below double precision "
                                 "resolution; raise scale_floor")
        thr = l ** theta
        use_tan = d_tan <= d_conj
        best_d[:, j] = np.where(use_tan, d_tan, d_conj)
        partner[:, j] = w
        ok[:, j] = best_d[:, j] <= thr
    hit = ok.sum(axis=1) >= min_witness
    pts = z[hit]
    radii, expo, partners = {}, {}, {}
    for i in np.nonzero(hit)[0]:
        key = complex(z[i])
        js = np.nonzero(ok[i])[0]
        radii[key] = [float(lam[j]) for j in js]
        expo[key] = [float(np.log(best_d[i, j]) / np.log(lam[j])) for j in js]
        partners[key] = [complex(partner[i, j]) for j in js]
    return CompressionSet(pts, radii, expo, partners, theta,
                          {"K": K, "p": p, "s": s, "epsilon": epsilon,
                           "boundary_samples": boundary_samples, "scale_floor": scale_floor,
                           "max_scale": max_scale, "min_witness": min_witness})


# --------------------------------------------------------------------------
# dimension bound for compression sets


@dataclass
class Theorem2Report:
    s: float
    s_hat: float
    tol: float
    passed: bool
    n_points: int
    threshold: float
    dimension: Optional[DimensionEstimate]
    band: Optional[DyadicScale]
    chain: Optional[dict]
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"s": self.s, "s_hat": self.s_hat, "tol": self.tol, "passed": self.passed,
                "n_points": self.n_points, "threshold_exponent": self.threshold,
                "dimension": None if self.dimension is None else self.dimension.to_json(),
                "band": None if self.band is None else
                {"m": self.band.m, "count": self.band.count, "n_disjoint": self.band.n_disjoint,
                 "interval": list(self.band.band)},
                "chain": self.chain, "notes": list(self.notes)}


def box_scales_for(boundary_samples: int, n: int = 8) -> np.ndarray:
    """Dyadic box sizes from 1/2 down to the smallest power of two that is
    at least twice the boundary sample spacing."""
    spacing = 2 * math.pi / boundary_samples
    k_max = int(math.floor(-math.log2(2 * spacing)))
    k = np.arange(1, max(k_max, 4) + 1)
    return 2.0 ** -k


def modulus_chain(m: PlanarMap, band: DyadicScale, radii: dict, partners: dict,
                  n_paths: int = 120,
                  grid_n: int = 96, seed: int = 0, slack: float = 1.15) -> dict:
    """Per disjoint ball B(z, 5 r_z) of the band: E_z = B(z, r_z/3),
    F_z = B(w_z, r_z/3) union the circle |. - z| = 5 r_z, both in the closed
    disk, with w_z the witnessing partner at separation r_z. The families
    live in disjoint balls, so moduli add; lhs and rhs are summed."""
    from .modulus import (Circle, ClosedUnitDiskCap, Disk, ModulusProblem, RegionUnion,
                          family_grid, modulus_inequality_check, sample_connecting_family)
    from .geometry import GridSpec

    lhs = rhs = 0.0
    balls = []
    lookup = {c: r for c, r in band.members}
    for k, (c, R5) in enumerate(zip(band.disjoint.centers, band.disjoint.radii)):
        c = complex(c)
        r = lookup[c]
        w = partners[c][radii[c].index(r)]
        E = ClosedUnitDiskCap(Disk(c, r / 3))
        F = RegionUnion((ClosedUnitDiskCap(Disk(w, r / 3)),
                         ClosedUnitDiskCap(Circle(c, 5 * r))))
        dom = lambda pts, c=c, r=r: (np.abs(pts) <= 1 + 1e-12) & (np.abs(pts - c) <= 5 * r * (1 + 1e-9))
        span = GridSpec.covering(c.real - 5 * r, c.imag - 5 * r, c.real + 5 * r,
                                 c.imag + 5 * r, grid_n, 0.02)
        fam = sample_connecting_family(E, F, span, n_paths, seed=seed + k, domain=dom)
        rep = modulus_inequality_check(m, ModulusProblem(fam, family_grid(fam, grid_n)), slack)
        lhs += rep.lhs
        rhs += rep.rhs
        balls.append({"center": [c.real, c.imag], "r": r, "lhs": rep.lhs, "rhs": rep.rhs})
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else math.inf,
            "slack": slack, "passed": bool(lhs <= rhs * slack), "balls": balls}


def theorem2_check(m: PlanarMap, K: float, p: float, s: float, epsilon: float = 0.05,
                   boundary_samples: int = 4096, scale_floor: float = 1e-7,
                   max_scale: float = 2.0 ** -6, dim_tol: float = DIM_TOL, chain: bool = True,
                   n_paths: int = 120, grid_n: int = 96, seed: int = 0) -> Theorem2Report:
    """Compression set, its box dimension against s + dim_tol and the
    modulus chain at the leading dyadic band."""
    cs = compression_set(m, K, p, s, epsilon, boundary_samples, scale_floor, max_scale)
    notes = []
    if len(cs) == 0:
        notes.append("empty compression set: trivial pass")
        return Theorem2Report(s, 0.0, dim_tol, True, 0, cs.threshold, None, None, None, notes)
    est = box_dimension(cs.points, box_scales_for(boundary_samples))
    passed = est.s_hat <= s + dim_tol
    bands = dyadic_scale_selection(cs.radii, epsilon)
    if not bands:
        notes.append("selection-empty: no dyadic band holds two points")
        if chain:
            bands = dyadic_scale_selection(cs.radii, epsilon, min_points=1)
            notes.append("chain replayed at the leading single-point band")
    band = bands[0] if bands else None
    chain_rep = None
    if band is not None and chain:
        chain_rep = modulus_chain(m, band, cs.radii, cs.partners, n_paths, grid_n, seed)
        passed = passed and chain_rep["passed"]
    return Theorem2Report(s, est.s_hat, dim_tol, bool(passed), len(cs), cs.threshold, est,
                          band, chain_rep, notes)
