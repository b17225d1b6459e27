"""Evaluable planar maps, finite-difference differentials and distortion.

Every map is a vectorised callable on complex arrays wrapped in
:class:`PlanarMap`, which carries the declared quasiconformality constant
``K`` on the disk and the integrability exponent ``p`` of its distortion.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import CompositionDomainError, DomainError, ParameterError
from .geometry import GridField, GridSpec, PolygonalDomain, make_rng

log = logging.getLogger(__name__)

FD_STEP = 1e-6
DISK_TOL = 1e-12


@dataclass(frozen=True)
class PlanarMap:
    func: Callable[[np.ndarray], np.ndarray]
    label: str
    declared_K: Optional[float] = None
    declared_p: Optional[float] = None
    fd_step: float = FD_STEP
    domain: str = "plane"  # "plane" or "disk" (closed unit disk)
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.declared_K is not None and not self.declared_K >= 1:
            raise ParameterError(f"declared_K must be >= 1, got {self.declared_K}")
        if self.declared_p is not None and not self.declared_p >= 1:
            raise ParameterError(f"declared_p must be >= 1, got {self.declared_p}")
        if not self.fd_step > 0:
            raise ParameterError("fd_step must be positive")
        if self.domain not in ("plane", "disk"):
            raise ParameterError(f"unknown map domain {self.domain!r}")

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if self.domain == "disk" and np.any(np.abs(z) > 1 + DISK_TOL):
            raise DomainError(f"{self.label} is only defined on the closed unit disk")
        return np.asarray(self.func(z), dtype=complex)

    def in_domain(self, z, margin: float = 0.0):
        z = np.asarray(z, dtype=complex)
        if self.domain == "plane":
            return np.ones(z.shape, dtype=bool)
        return np.abs(z) <= 1 + DISK_TOL - margin

    def with_declared(self, K=None, p=None) -> "PlanarMap":
        return replace(self, declared_K=self.declared_K if K is None else K,
                       declared_p=self.declared_p if p is None else p)


def identity() -> PlanarMap:
    return PlanarMap(lambda z: z.copy(), "identity", 1.0, math.inf,
                     descriptor={"kind": "identity", "params": {}})


def rotation(angle: float) -> PlanarMap:
    w = np.exp(1j * angle)
    return PlanarMap(lambda z: w * z, f"rot({angle:g})", 1.0, math.inf,
                     descriptor={"kind": "rotation", "params": {"angle": angle}})


def mobius_disk(a: complex, angle: float = 0.0) -> PlanarMap:
    """Disk automorphism z -> e^{i angle} (z - a) / (1 - conj(a) z)."""
    a = complex(a)
    if abs(a) >= 1:
        raise ParameterError("Mobius parameter must lie in the open disk")
    w = np.exp(1j * angle)
    return PlanarMap(lambda z: w * (z - a) / (1 - np.conj(a) * z), f"mobius({a:g})", 1.0,
                     math.inf, domain="disk",
                     descriptor={"kind": "mobius", "params": {"a": [a.real, a.imag], "angle": angle}})


def radial_power(beta: float) -> PlanarMap:
    """z -> (z/|z|) |z|**beta for any beta > 0; quasiconformal with
    constant max(beta, 1/beta)."""
    if not beta > 0:
        raise ParameterError("radial exponent must be positive")

    def f(z):
        r = np.abs(z)
        out = np.zeros_like(z)
        nz = r > 0
        out[nz] = z[nz] * r[nz] ** (beta - 1.0)
        return out

    return PlanarMap(f, f"S_{beta:g}", max(beta, 1 / beta), math.inf,
                     descriptor={"kind": "radial_stretch", "params": {"K": beta}})


def radial_stretch(K: float) -> PlanarMap:
    """The standard radial stretch S_K; its distortion is bounded, so
    declared_p is infinite."""
    if not K >= 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    return radial_power(K)


def explicit_cardioid(declared_p: float = 1.9) -> PlanarMap:
    """c(z) = (1 + z)^2: conformal from the disk onto the cardioid
    r < 2(1 + cos theta), with a boundary cusp at c(-1) = 0."""
    return PlanarMap(lambda z: (1 + z) ** 2, "cardioid", 1.0, declared_p,
                     descriptor={"kind": "cardioid", "params": {"declared_p": declared_p}})


def cusp_map(s: float, n_modes: int = 2048, declared_p: Optional[float] = None,
             n_nodes: int = 24576, solution=None, cache_dir=None) -> PlanarMap:
    """h_s = g_s**2 with g_s the numerical conformal map onto the square
    root of the cusp domain, symmetrised so that h(conj z) = conj h(z).

    ``declared_p`` defaults to 1/(s - 1 + 0.01), clamped to >= 1, i.e. a
    value below the 1/(s-1) integrability threshold.
    """
    from .conformal import cusp_solution

    if not (1.0 < s <= 2.0):
        raise ParameterError(f"cusp exponent s must lie in (1, 2], got {s}")
    sol = solution if solution is not None else cusp_solution(s, n_modes, n_nodes=n_nodes,
                                                               cache_dir=cache_dir)
    if declared_p is None:
        declared_p = max(1.0, 1.0 / (s - 1.0 + 0.01))

    def h(z):
        g = sol(z)
        g_conj = sol(np.conj(z))
        return 0.5 * (g * g + np.conj(g_conj * g_conj))

    return PlanarMap(h, f"h_{s:g}", 1.0, declared_p, domain="disk",
                     descriptor={"kind": "cusp", "params": {
                         "s": s, "n_modes": n_modes, "n_nodes": n_nodes,
                         "declared_p": declared_p}})


def _domain_samples(m: PlanarMap, n: int = 512, seed: int = 0) -> np.ndarray:
    rng = make_rng(seed)
    r = np.sqrt(rng.uniform(0, 1, n))
    th = rng.uniform(-np.pi, np.pi, n)
    pts = r * np.exp(1j * th)
    ring = np.exp(2j * np.pi * np.arange(64) / 64)
    pts = np.concatenate([pts, ring])
    if m.domain == "plane":
        pts = np.concatenate([pts, 2 * pts])
    return pts


def compose(outer: PlanarMap, inner: PlanarMap, n_check: int = 512) -> PlanarMap:
    """outer o inner; the image of sampled inner-domain points must lie in
    the outer domain. Declared K multiply; declared p is the smaller one."""
    if outer.domain == "disk":
        img = inner(_domain_samples(inner, n_check))
        if not np.all(outer.in_domain(img)):
            raise CompositionDomainError(
                f"image of {inner.label} escapes the domain of {outer.label}")
    K = outer.declared_K * inner.declared_K if (outer.declared_K and inner.declared_K) else None
    ps = [p for p in (outer.declared_p, inner.declared_p) if p is not None]
    p = min(ps) if ps else None
    return PlanarMap(lambda z: outer.func(inner.func(z)), f"{outer.label}o{inner.label}", K, p,
                     min(outer.fd_step, inner.fd_step), inner.domain,
                     {"kind": "compose", "params": {"outer": outer.descriptor,
                                                     "inner": inner.descriptor}})


# --------------------------------------------------------------------------
# bi-Lipschitz maps


@dataclass(frozen=True)
class BiLipschitzMap:
    func: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    L: float
    label: str = "bilip"

    def __post_init__(self):
        if not self.L >= 1:
            raise ParameterError("bi-Lipschitz constant must be >= 1")

    def __call__(self, z):
        return self.func(np.asarray(z, dtype=complex))

    def as_planar_map(self) -> PlanarMap:
        return PlanarMap(self.func, self.label, self.L ** 2, math.inf,
                         descriptor={"kind": "bilipschitz", "params": {"label": self.label}})

    def check(self, n_pairs: int = 2000, seed: int = 0, radius: float = 2.0,
              tol: float = 1e-9) -> bool:
        rng = make_rng(seed)
        a = radius * (rng.uniform(-1, 1, n_pairs) + 1j * rng.uniform(-1, 1, n_pairs))
        b = a + 10 ** rng.uniform(-4, 0, n_pairs) * np.exp(2j * np.pi * rng.uniform(size=n_pairs))
        q = np.abs(self(a) - self(b)) / np.abs(a - b)
        return bool(np.all(q <= self.L * (1 + tol)) and np.all(q >= (1 - tol) / self.L))


def linear_bilipschitz(sx: float, sy: float) -> BiLipschitzMap:
    """(x, y) -> (sx x, sy y)."""
    if sx <= 0 or sy <= 0:
        raise ParameterError("axis scalings must be positive")
    L = max(sx, sy, 1 / sx, 1 / sy)
    return BiLipschitzMap(lambda z: sx * z.real + 1j * sy * z.imag,
                          lambda w: w.real / sx + 1j * w.imag / sy, L, f"lin({sx:g},{sy:g})")


def spiral_map(c: float) -> BiLipschitzMap:
    """Logarithmic spiral z -> z |z|^{i c}; singular values of its
    differential are sqrt(1 + c^2/4) +/- |c|/2."""
    L = (math.sqrt(4 + c * c) + abs(c)) / 2

    def fwd(z):
        r = np.abs(z)
        out = np.zeros_like(z)
        nz = r > 0
        out[nz] = z[nz] * np.exp(1j * c * np.log(r[nz]))
        return out

    def inv(w):
        r = np.abs(w)
        out = np.zeros_like(w)
        nz = r > 0
        out[nz] = w[nz] * np.exp(-1j * c * np.log(r[nz]))
        return out

    return BiLipschitzMap(fwd, inv, L, f"spiral({c:g})")


# --------------------------------------------------------------------------
# differentials


@dataclass(frozen=True)
class DerivativeSample:
    Df: np.ndarray
    J: float
    opnorm: float
    K_pointwise: Optional[float]
    degenerate: bool = False


def _steps(m: PlanarMap, z: np.ndarray) -> np.ndarray:
    r = np.abs(z)
    return m.fd_step * np.where(r > 0, np.minimum(1.0, r), 1.0)


def complex_derivatives(m: PlanarMap, z):
    """Central-difference (d/dz, d/dzbar) at each point of ``z``."""
    z = np.asarray(z, dtype=complex)
    h = _steps(m, z)
    fx = (m(z + h) - m(z - h)) / (2 * h)
    fy = (m(z + 1j * h) - m(z - 1j * h)) / (2 * h)
    return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)


def distortion_values(m: PlanarMap, z):
    """(K_pointwise, J) arrays; K is NaN where J <= 0."""
    a, b = complex_derivatives(m, z)
    aa, bb = np.abs(a), np.abs(b)
    J = aa * aa - bb * bb
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.where(J > 0, (aa + bb) / (aa - bb), np.nan)
    return K, J


def distortion_sample(m: PlanarMap, z: complex) -> DerivativeSample:
    z = complex(z)
    h = float(_steps(m, np.array([z]))[0])
    if m.domain == "disk" and abs(z) > 1 - 2 * h:
        raise ParameterError("sample point within 2*fd_step of the disk boundary")
    zz = np.array([z])
    fx = ((m(zz + h) - m(zz - h)) / (2 * h))[0]
    fy = ((m(zz + 1j * h) - m(zz - 1j * h)) / (2 * h))[0]
    Df = np.array([[fx.real, fy.real], [fx.imag, fy.imag]])
    J = float(np.linalg.det(Df))
    opnorm = float(np.linalg.norm(Df, 2))
    if J <= 0:
        return DerivativeSample(Df, J, opnorm, None, degenerate=True)
    return DerivativeSample(Df, J, opnorm, opnorm ** 2 / J)


def _mask_membership(mask, pts):
    if mask is None:
        return np.ones(pts.shape, dtype=bool)
    if isinstance(mask, str):
        if mask == "disk":
            return np.abs(pts) <= 1.0
        raise ParameterError(f"unknown mask {mask!r}")
    if isinstance(mask, PolygonalDomain):
        return mask.contains(pts, tol=0.0)
    return np.asarray(mask(pts), dtype=bool)


def distortion_field(m: PlanarMap, grid: GridSpec, mask=None, p: Optional[float] = None,
                     subsamples: int = 4, cells=None) -> GridField:
    """Pointwise distortion per grid cell plus the p-energy over ``mask``.

    ``mask`` is None (whole grid), "disk", a PolygonalDomain or a
    membership callable. Cell coverage is estimated with ``subsamples``^2
    points per cell. K is evaluated at the centroid of the covered
    subsamples, pulled into the map's domain when necessary. ``cells``
    optionally restricts evaluation to the given flat cell indices.
    meta keys: p_energy, area, degenerate, evaluated, warning.
    """
    h = grid.cell
    off = (np.arange(subsamples) + 0.5) / subsamples
    sub = (off[None, :] + 1j * off[:, None]).ravel() * h
    base = grid.origin + (np.arange(grid.nx)[None, :] * h + 1j * np.arange(grid.ny)[:, None] * h)
    flat_base = base.ravel()
    if cells is None:
        cells = np.arange(grid.n_cells)
    cells = np.asarray(cells, dtype=int)
    pts = flat_base[cells][:, None] + sub[None, :]
    inside = _mask_membership(mask, pts)
    coverage = inside.mean(axis=1)
    use = coverage > 0
    if mask is None:
        use[:] = True
    cen = np.where(coverage > 0,
                   (pts * inside).sum(axis=1) / np.maximum(inside.sum(axis=1), 1),
                   flat_base[cells] + 0.5 * h * (1 + 1j))
    if m.domain == "disk":
        margin = 4 * m.fd_step
        r = np.abs(cen)
        pull = r > 1 - margin
        cen[pull] = cen[pull] / r[pull] * (1 - margin)

    K = np.full(len(cells), np.nan)
    if use.any():
        K[use], _ = distortion_values(m, cen[use])
    degenerate = use & ~np.isfinite(K)
    values = np.full(grid.n_cells, np.nan)
    values[cells] = K
    mask_grid = np.zeros(grid.n_cells, dtype=bool)
    mask_grid[cells] = use & np.isfinite(K)

    meta = {"degenerate": int(degenerate.sum()), "evaluated": int(use.sum()), "warning": None}
    if use.sum() and degenerate.sum() > 0.1 * use.sum():
        meta["warning"] = (f"{degenerate.sum()} of {use.sum()} cells have a degenerate "
                           f"Jacobian")
        log.warning("distortion_field: %s", meta["warning"])
    good = use & np.isfinite(K)
    area = coverage[good] * grid.cell_area
    meta["area"] = float(area.sum())
    if p is not None:
        if math.isinf(p):
            meta["p_energy"] = float(np.max(K[good])) if good.any() else 0.0
        else:
            meta["p_energy"] = float(np.sum(K[good] ** p * area) ** (1.0 / p))
    return GridField(grid, values.reshape(grid.ny, grid.nx), mask_grid.reshape(grid.ny, grid.nx),
                     meta)


def p_energy(m: PlanarMap, grid: GridSpec, mask, p: float, subsamples: int = 4) -> float:
    return distortion_field(m, grid, mask, p, subsamples).meta["p_energy"]


def check_homeomorphism(m: PlanarMap, n: int = 400, seed: int = 0, margin: float = 1e-3):
    """Spot checks: fraction of sampled pairs mapped to distinct points and
    fraction of interior points with positive Jacobian."""
    rng = make_rng(seed)
    r = np.sqrt(rng.uniform(0, (1 - margin) ** 2, n))
    pts = r * np.exp(1j * rng.uniform(-np.pi, np.pi, n))
    img = m(pts)
    d_img = np.abs(img[:, None] - img[None, :])
    d_src = np.abs(pts[:, None] - pts[None, :])
    iu = np.triu_indices(n, 1)
    injective = float(np.mean(d_img[iu] > 1e-14 * np.maximum(1, d_src[iu])))
    _, J = distortion_values(m, pts[np.abs(pts) > 1e-3])
    return {"injective_fraction": injective, "orientation_fraction": float(np.mean(J > 0))}


# --------------------------------------------------------------------------
# descriptors


def map_from_descriptor(desc: dict, cache_dir=None) -> PlanarMap:
    """Rebuild a map from {"kind": ..., "params": {...}}."""
    kind = desc.get("kind")
    params = dict(desc.get("params", {}))
    if kind == "identity":
        return identity()
    if kind == "rotation":
        return rotation(float(params["angle"]))
    if kind == "mobius":
        a = params.get("a", [0.0, 0.0])
        return mobius_disk(complex(*a) if isinstance(a, (list, tuple)) else complex(a),
                           float(params.get("angle", 0.0)))
    if kind == "radial_stretch":
        return radial_stretch(float(params["K"]))
    if kind == "cardioid":
        return explicit_cardioid(float(params.get("declared_p", 1.9)))
    if kind == "cusp":
        return cusp_map(float(params["s"]), int(params.get("n_modes", 2048)),
                        params.get("declared_p"), int(params.get("n_nodes", 24576)),
                        cache_dir=cache_dir)
    if kind == "compose":
        return compose(map_from_descriptor(params["outer"], cache_dir),
                       map_from_descriptor(params["inner"], cache_dir))
    raise ParameterError(f"unknown map kind {kind!r}")
