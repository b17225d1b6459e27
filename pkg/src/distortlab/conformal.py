"""Numerical conformal map of the unit disk onto a star-shaped domain.

Theodorsen's method: with the target written in polar form about an
anchor ``a`` as ``a + R(phi) e^{i phi}``, the boundary correspondence
``phi(t)`` of the map normalised by ``g(0) = a, g'(0) > 0`` is the fixed
point of ``phi = t + C[log R(phi)]`` where ``C`` is the periodic conjugate
function operator, applied here with the FFT. Interior values come from
the barycentric form of the Cauchy integral over the boundary nodes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, ParameterError, ReanchorError, SolverError
from .geometry import PolygonalDomain, cross, make_rng, polygon_kernel

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
MAX_ITER = 500
_CHUNK = 2048


@dataclass(frozen=True)
class RadialBoundary:
    """Star-shaped Jordan curve ``anchor + radius(phi) e^{i phi}``."""

    anchor: complex
    radius: Callable[[np.ndarray], np.ndarray]
    label: str = "radial"
    descriptor: dict = field(default_factory=dict)

    def point(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.anchor + self.radius(phi) * np.exp(1j * phi)


def circle_boundary(radius: float = 1.0, center: complex = 0.0) -> RadialBoundary:
    return RadialBoundary(complex(center), lambda phi: np.full(np.shape(phi), float(radius)),
                          "circle", {"kind": "circle", "radius": radius,
                                     "center": [complex(center).real, complex(center).imag]})


def ellipse_boundary(a: float, b: float) -> RadialBoundary:
    """Centred ellipse with semi-axes ``a`` (real) and ``b`` (imaginary)."""
    def radius(phi):
        return a * b / np.hypot(b * np.cos(phi), a * np.sin(phi))
    return RadialBoundary(0j, radius, f"ellipse({a},{b})", {"kind": "ellipse", "a": a, "b": b})


def polygon_radial(domain: PolygonalDomain, anchor: complex) -> RadialBoundary:
    """Polar representation of a polygon about ``anchor``.

    Raises ReanchorError unless every ray from the anchor meets the
    boundary exactly once (vertex angles strictly increasing).
    """
    v = domain.vertices
    ang = np.unwrap(np.angle(v - anchor))
    if not domain.contains(np.array([anchor]), tol=0.0)[0]:
        raise ReanchorError(f"anchor {anchor} outside target")
    steps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    total = ang[-1] - ang[0] + steps[-1]
    if np.any(steps <= 0) or abs(total - 2 * np.pi) > 1e-9:
        raise ReanchorError(f"target not star-shaped about {anchor}")
    ang0 = ang[0]
    rel = ang - ang0
    w = np.roll(v, -1)
    edge = w - v
    numer = cross(v - anchor, edge)

    def radius(phi):
        phi = np.asarray(phi, dtype=float)
        p = np.mod(phi - ang0, 2 * np.pi)
        k = np.clip(np.searchsorted(rel, p, side="right") - 1, 0, len(v) - 1)
        d = np.exp(1j * (p + ang0))
        return numer[k] / cross(d, edge[k])

    return RadialBoundary(complex(anchor), radius, "polygon")


def _conjugate(values: np.ndarray) -> np.ndarray:
    """Periodic conjugate function of equispaced samples."""
    n = len(values)
    coef = np.fft.rfft(values)
    mult = -1j * np.ones(len(coef))
    mult[0] = 0.0
    if n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(coef * mult, n)


def theodorsen(boundary: RadialBoundary, n_modes: int, tol: float = DEFAULT_TOL,
               max_iter: int = MAX_ITER, relax: float = 1.0):
    """Fixed-point iteration for the boundary correspondence.

    Returns (phi at the nodes 2 pi j / n, final residual, residual history).
    Under-relaxes by halves when the residual grows.
    """
    t = 2 * np.pi * np.arange(n_modes) / n_modes
    phi = t.copy()
    history = []
    omega = relax
    for _ in range(max_iter):
        logr = np.log(boundary.radius(phi))
        if not np.all(np.isfinite(logr)):
            raise SolverError("radial function not finite during iteration", history)
        new = t + _conjugate(logr)
        res = float(np.max(np.abs(new - phi)))
        if history and res > history[-1] and omega > 1 / 64:
            omega *= 0.5
        history.append(res)
        phi = phi + omega * (new - phi)
        if res <= tol:
            break
    else:
        raise SolverError(f"Theodorsen iteration stalled at residual {history[-1]:.3g}", history)
    return phi, history[-1], history


@dataclass(frozen=True)
class BoundaryCorrespondence:
    theta: np.ndarray   # disk-boundary angles t_j (after normalisation rotation)
    phi: np.ndarray     # polar angle of the image about the anchor
    sigma: np.ndarray   # arc-length parameter of the image along the target
    residual: float


@dataclass
class ConformalSolution:
    """Converged disk map; evaluate with :func:`eval_disk_point` or call."""

    correspondence: BoundaryCorrespondence
    boundary: RadialBoundary
    rotation: float
    normalization: dict
    n_modes: int
    history: list = field(default_factory=list)
    target: Optional[PolygonalDomain] = None
    bilip_estimate: float = float("nan")

    def __post_init__(self):
        n = self.n_modes
        self._t = 2 * np.pi * np.arange(n) / n
        self._nodes = np.exp(1j * self._t)
        phi_nodes = self.correspondence.phi
        self._values = self.boundary.point(phi_nodes)
        self._coef = np.fft.rfft(phi_nodes - self._t) / n

    @property
    def residual(self) -> float:
        return self.correspondence.residual

    def phi_at(self, t):
        """Trigonometric interpolant of the unrotated correspondence."""
        t = np.asarray(t, dtype=float)
        n = self.n_modes
        c = self._coef
        out = np.empty(t.shape)
        flat_t = t.ravel()
        flat = out.ravel()
        k = np.arange(1, len(c))
        w = np.full(len(k), 2.0)
        if n % 2 == 0:
            w[-1] = 1.0
        for i0 in range(0, len(flat_t), _CHUNK):
            tt = flat_t[i0:i0 + _CHUNK]
            e = np.exp(1j * np.outer(tt, k))
            flat[i0:i0 + _CHUNK] = c[0].real + (e @ (w * c[1:])).real + tt
        return out

    def _interior(self, w):
        nodes, vals = self._nodes, self._values
        out = np.empty(w.shape, dtype=complex)
        for i0 in range(0, len(w), _CHUNK):
            ww = w[i0:i0 + _CHUNK]
            diff = nodes[None, :] - ww[:, None]
            exact = diff == 0
            diff[exact] = 1.0
            kern = nodes[None, :] / diff
            res = (kern @ vals) / kern.sum(axis=1)
            hit = exact.any(axis=1)
            if hit.any():
                res[hit] = vals[np.argmax(exact[hit], axis=1)]
            out[i0:i0 + _CHUNK] = res
        return out

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        r = np.abs(flat)
        if np.any(r > 1 + 1e-12):
            raise DomainError("conformal map evaluated outside the closed unit disk")
        w = flat * np.exp(1j * self.rotation)
        out = np.empty(flat.shape, dtype=complex)
        on = r >= 1 - 1e-14
        if on.any():
            out[on] = self.boundary.point(self.phi_at(np.angle(w[on])))
        if (~on).any():
            out[~on] = self._interior(w[~on])
        return out.reshape(z.shape)

    # -- serialisation ------------------------------------------------------
    def to_json(self) -> dict:
        rec = {
            "schema": "distortlab.conformal.v1",
            "n_modes": self.n_modes,
            "anchor": [self.boundary.anchor.real, self.boundary.anchor.imag],
            "rotation": self.rotation,
            "normalization": self.normalization,
            "residual": self.residual,
            "theta": self.correspondence.theta.tolist(),
            "phi": self.correspondence.phi.tolist(),
            "sigma": self.correspondence.sigma.tolist(),
            "bilip_estimate": self.bilip_estimate,
        }
        if self.target is not None:
            rec["target"] = self.target.to_json()
        else:
            rec["boundary"] = self.boundary.descriptor
        return rec

    @classmethod
    def from_json(cls, data) -> "ConformalSolution":
        if isinstance(data, str):
            data = json.loads(data)
        anchor = complex(*data["anchor"])
        target = None
        if "target" in data:
            target = PolygonalDomain.from_json(data["target"])
            boundary = polygon_radial(target, anchor)
        else:
            desc = data["boundary"]
            if desc["kind"] == "circle":
                boundary = circle_boundary(desc["radius"], complex(*desc["center"]))
            elif desc["kind"] == "ellipse":
                boundary = ellipse_boundary(desc["a"], desc["b"])
            else:
                raise ParameterError(f"unknown boundary kind {desc['kind']!r}")
        corr = BoundaryCorrespondence(np.asarray(data["theta"]), np.asarray(data["phi"]),
                                      np.asarray(data["sigma"]), float(data["residual"]))
        return cls(corr, boundary, float(data["rotation"]), dict(data["normalization"]),
                   int(data["n_modes"]), target=target,
                   bilip_estimate=float(data["bilip_estimate"]))


def _anchor_candidates(target: PolygonalDomain):
    yield target.centroid
    kern = polygon_kernel(target)
    if len(kern) >= 3:
        yield complex(np.mean(kern))
    xmin, ymin, xmax, ymax = target.bounds
    c = target.centroid
    for d in (0.1, -0.1, 0.2):
        yield c + d * (xmax - xmin)


def _arc_sigma(boundary: RadialBoundary, phi: np.ndarray) -> np.ndarray:
    fine = np.linspace(phi[0], phi[0] + 2 * np.pi, 8 * len(phi) + 1)
    pts = boundary.point(fine)
    cum = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(pts)))])
    return np.interp(phi, fine, cum)


def solve_correspondence(target: Union[PolygonalDomain, RadialBoundary], n_modes: int = 1024,
                         tol: float = DEFAULT_TOL, normalize_point: Optional[complex] = None,
                         max_iter: int = MAX_ITER, bilip_pairs: int = 2000) -> ConformalSolution:
    """Conformal map of the unit disk onto ``target``.

    With ``normalize_point`` (a boundary point of the target) the disk is
    rotated so that ``g(-1) = normalize_point``; otherwise ``g'(0) > 0``.
    """
    if n_modes < 64 or n_modes & (n_modes - 1):
        raise ParameterError("n_modes must be a power of two >= 64")
    if isinstance(target, PolygonalDomain):
        boundary = None
        errors = []
        for i, cand in enumerate(_anchor_candidates(target)):
            if i >= 5:
                break
            try:
                boundary = polygon_radial(target, cand)
                break
            except ReanchorError as exc:
                errors.append(str(exc))
        if boundary is None:
            raise ReanchorError("no star-shaped anchor found: " + "; ".join(errors))
        polygon = target
    else:
        boundary, polygon = target, None

    phi, residual, history = theodorsen(boundary, n_modes, tol, max_iter)
    t = 2 * np.pi * np.arange(n_modes) / n_modes

    rotation = 0.0
    norm = {"g(0)": [boundary.anchor.real, boundary.anchor.imag]}
    probe = ConformalSolution(BoundaryCorrespondence(t, phi, phi, residual), boundary, 0.0,
                              norm, n_modes)
    if normalize_point is not None:
        target_phi = float(np.angle(complex(normalize_point) - boundary.anchor))
        # phi(t) - t is periodic and phi increasing: find t with phi(t) = target (mod 2 pi)
        shift = np.floor((phi[0] - target_phi) / (2 * np.pi)) + 1
        goal = target_phi + 2 * np.pi * shift
        t_star = brentq(lambda s: probe.phi_at(np.array([s]))[0] - goal, -np.pi, 3 * np.pi,
                        xtol=1e-15)
        rotation = float(np.mod(t_star - np.pi + np.pi, 2 * np.pi) - np.pi)
        norm["g(-1)"] = [complex(normalize_point).real, complex(normalize_point).imag]

    theta = np.mod(t - rotation + np.pi, 2 * np.pi) - np.pi
    corr = BoundaryCorrespondence(theta, phi, _arc_sigma(boundary, phi), residual)
    sol = ConformalSolution(corr, boundary, rotation, norm, n_modes, history, polygon)
    if bilip_pairs:
        sol.bilip_estimate = bilip_constant(sol, bilip_pairs)[0]
    log.debug("conformal solve: %d modes, residual %.3g, %d iterations",
              n_modes, residual, len(history))
    return sol


def eval_disk_point(sol: ConformalSolution, z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) > 1 + 1e-12):
        raise DomainError("|z| > 1")
    return sol(z)


def bilip_constant(sol: ConformalSolution, n_pairs: int = 2000, seed: int = 0):
    """Empirical bi-Lipschitz constant over sampled pairs of the closed disk.

    Returns (L, (a, b)) with the pair attaining L. Pairs mix near-boundary
    close pairs (local stretching) with random far pairs.
    """
    rng = make_rng(seed)
    n_far = n_pairs // 2
    n_near = n_pairs - n_far
    r = np.sqrt(rng.uniform(0, 1, (n_far, 2)))
    th = rng.uniform(-np.pi, np.pi, (n_far, 2))
    a_far = r[:, 0] * np.exp(1j * th[:, 0])
    b_far = r[:, 1] * np.exp(1j * th[:, 1])
    th0 = rng.uniform(-np.pi, np.pi, n_near)
    gap = 10 ** rng.uniform(-4, -1, n_near)
    rad = np.where(rng.uniform(size=n_near) < 0.5, 1.0, 1 - 10 ** rng.uniform(-3, 0, n_near))
    a_near = rad * np.exp(1j * th0)
    b_near = rad * np.exp(1j * (th0 + gap))
    a = np.concatenate([a_far, a_near])
    b = np.concatenate([b_far, b_near])
    keep = np.abs(a - b) > 1e-12
    a, b = a[keep], b[keep]
    ga, gb = sol(a), sol(b)
    dz = np.abs(a - b)
    dg = np.abs(ga - gb)
    ratio = np.maximum(dg / dz, dz / np.maximum(dg, 1e-300))
    k = int(np.argmax(ratio))
    return float(ratio[k]), (complex(a[k]), complex(b[k]))


def conformality_defect(sol: ConformalSolution, points, step: float = 1e-6) -> np.ndarray:
    """|d g / d zbar| / |d g / d z| by central differences."""
    z = np.asarray(points, dtype=complex)
    gx = (sol(z + step) - sol(z - step)) / (2 * step)
    gy = (sol(z + 1j * step) - sol(z - 1j * step)) / (2 * step)
    dz = 0.5 * (gx - 1j * gy)
    dzbar = 0.5 * (gx + 1j * gy)
    return np.abs(dzbar) / np.abs(dz)


# -- cached cusp-domain solutions ------------------------------------------

_MEMO: dict = {}


def cusp_solution(s: float, n_modes: int = 2048, tol: float = DEFAULT_TOL,
                  n_nodes: int = 24576, cache_dir: Optional[Path] = None) -> ConformalSolution:
    """Solution g_s onto the square root of the cusp domain, g_s(-1) = 0.

    Memoised in-process and optionally cached as JSON keyed by
    (s, n_modes, tol).
    """
    from .geometry import cusp_boundary, sqrt_boundary

    key = (float(s), int(n_modes), float(tol), int(n_nodes))
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"cusp_s{s!r}_n{n_modes}_tol{tol!r}_v{n_nodes}.json"
    sol = _MEMO.get(key)
    if sol is None and path is not None and path.exists():
        sol = _MEMO[key] = ConformalSolution.from_json(path.read_text())
    if sol is None:
        target = sqrt_boundary(cusp_boundary(s, n_nodes))
        sol = solve_correspondence(target, n_modes, tol, normalize_point=0j)
        if sol.residual > tol:
            raise SolverError(f"cusp solution residual {sol.residual:.3g} > {tol}", sol.history)
        _MEMO[key] = sol
    if path is not None and not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(sol.to_json()))
    return sol


def ellipse_polynomial_oracle(a: float, b: float, degree: int = 301, n_samples: int = 4096):
    """Independent ellipse map: odd real polynomial fitted by nonlinear
    least squares so that the unit circle lands on the ellipse.

    Returns a callable p(z). Used only to validate the engine.
    """
    from scipy.optimize import least_squares

    powers = np.arange(1, degree + 1, 2)
    t = 2 * np.pi * (np.arange(n_samples) + 0.5) / n_samples
    zs = np.exp(1j * t)
    basis = zs[:, None] ** powers[None, :]

    def resid(c):
        w = basis @ c
        return (w.real / a) ** 2 + (w.imag / b) ** 2 - 1.0

    def jac(c):
        w = basis @ c
        return 2 * (w.real[:, None] * basis.real / a ** 2 + w.imag[:, None] * basis.imag / b ** 2)

    c0 = np.zeros(len(powers))
    c0[0] = 0.5 * (a + b)
    c0[1] = 0.5 * (a - b) * 0.5
    fit = least_squares(resid, c0, jac=jac, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    coef = fit.x

    def p(z):
        z = np.asarray(z, dtype=complex)
        return np.polynomial.polynomial.polyval(z, _odd_to_full(coef))

    p.coef = coef
    p.residual = float(np.max(np.abs(fit.fun)))
    return p


def _odd_to_full(coef):
    full = np.zeros(2 * len(coef))
    full[1::2] = coef
    return full
