"""Contraction exponents, the 2(K + 1/p) bound and the modulus replay.

A contraction exponent at an anchor z is the slope of log|f(z) - f(w)|
against log|z - w| as partners w approach z along a rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DistortLabError, ParameterError, PrecisionError, ResolutionError
from .maps import PlanarMap, compose, distortion_field, rotation

EPS = np.finfo(float).eps
STDERR_TARGET = 0.05
MIN_POINTS = 4
THEOREM1_TOL = 0.1
RULES = ("radial", "tangential", "conjugate-pair", "custom")


@dataclass(frozen=True)
class ExponentFit:
    anchor: complex
    scales: np.ndarray
    distances: np.ndarray
    alpha: float
    stderr: float
    window: tuple
    intercept: float = 0.0
    rule: str = "radial"

    def __post_init__(self):
        if np.any(np.diff(self.scales) >= 0):
            raise ParameterError("scales must be strictly decreasing")
        if np.any(self.distances <= 0):
            raise PrecisionError("nonpositive distance in exponent fit")
        if not math.isfinite(self.alpha):
            raise PrecisionError("exponent fit is not finite")

    @property
    def constant(self) -> float:
        """exp(intercept): the fitted C in distance ~ C scale^alpha."""
        return math.exp(self.intercept)

    def to_json(self) -> dict:
        return {"anchor": [self.anchor.real, self.anchor.imag], "rule": self.rule,
                "alpha": self.alpha, "stderr": self.stderr, "intercept": self.intercept,
                "window": list(self.window), "scales": self.scales.tolist(),
                "distances": self.distances.tolist()}


def _check_scales(scales) -> np.ndarray:
    s = np.sort(np.asarray(scales, dtype=float))[::-1]
    if len(s) < MIN_POINTS:
        raise ParameterError(f"need at least {MIN_POINTS} scales")
    if np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise ParameterError("scales must be positive and distinct")
    if s[0] / s[-1] < 100 * (1 - 1e-12):
        raise ParameterError("scales must span at least two decades")
    return s


def partner_pairs(anchor: complex, rule: str, scales: np.ndarray, partners=None):
    """Point pairs (p, q) whose separation is the given scale.

    radial: q = anchor, p = anchor moved towards the origin (or along +x
    from 0); tangential: p moves along the circle through the anchor (the
    unit circle for boundary anchors) at chord distance s; conjugate-pair:
    p, q symmetric about the anchor on its circle, |p - q| = s.
    """
    a = complex(anchor)
    r = abs(a)
    if rule == "radial":
        u = -a / r if r > 0 else 1.0
        return a + scales * u, np.full(len(scales), a)
    if rule == "tangential":
        if r == 0:
            return a + 1j * scales, np.full(len(scales), a)
        delta = 2 * np.arcsin(np.clip(scales / (2 * r), -1, 1))
        return a * np.exp(1j * delta), np.full(len(scales), a)
    if rule == "conjugate-pair":
        if r == 0:
            raise ParameterError("conjugate-pair rule needs a nonzero anchor")
        delta = np.arcsin(np.clip(scales / (2 * r), -1, 1))
        return a * np.exp(1j * delta), a * np.exp(-1j * delta)
    if rule == "custom":
        if partners is None:
            raise ParameterError("custom rule needs explicit partners")
        p = np.asarray(partners, dtype=complex)
        return p, np.full(len(p), a)
    raise ParameterError(f"unknown partner rule {rule!r}")


def fit_loglog(x, y, min_points: int = MIN_POINTS, target: float = STDERR_TARGET):
    """Slope fit of log y on log x for decreasing x; drops the largest x
    until the slope stderr is below ``target`` or ``min_points`` remain.

    Returns (slope, stderr, intercept, start index).
    """
    lx, ly = np.log(x), np.log(y)
    start = 0
    while True:
        fit = stats.linregress(lx[start:], ly[start:])
        if fit.stderr < target or len(lx) - start <= min_points:
            return float(fit.slope), float(fit.stderr), float(fit.intercept), start
        start += 1


def fit_exponent(m: PlanarMap, anchor: complex, partner_rule: str = "radial", scales=None,
                 partners=None) -> ExponentFit:
    """Log-log slope of |f(p) - f(q)| against |p - q| along a partner rule."""
    if partner_rule == "custom":
        p = np.asarray(partners, dtype=complex)
        scales = np.abs(p - complex(anchor))
        order = np.argsort(-scales)
        p, scales = p[order], scales[order]
        _check_scales(scales)
        pa, pb = partner_pairs(anchor, "custom", scales, p)
    else:
        scales = _check_scales(scales if scales is not None else np.logspace(-1, -5, 9))
        pa, pb = partner_pairs(anchor, partner_rule, scales)
    if m.domain == "disk" and (np.any(np.abs(pa) > 1 + 1e-12) or np.any(np.abs(pb) > 1 + 1e-12)):
        raise ParameterError("partners leave the closed unit disk")
    fa, fb = m(pa), m(pb)
    d = np.abs(fa - fb)
    floor = 1e3 * EPS * np.maximum(np.abs(fa), np.abs(fb))
    if np.any(d <= floor) or np.any(d == 0):
        k = int(np.argmax((d <= floor) | (d == 0)))
        raise PrecisionError(f"distance {d[k]:.3g} at scale {scales[k]:.3g} is below double "
                             f"precision resolution; use a larger minimum scale")
    sep = np.abs(pa - pb)
    alpha, se, b, start = fit_loglog(sep, d)
    return ExponentFit(complex(anchor), sep, d, alpha, se, (float(sep[-1]), float(sep[start])),
                       b, partner_rule)


# --------------------------------------------------------------------------
# contraction bound check


def theorem1_bound(K: float, p: float) -> float:
    """2(K + 1/p); p may be infinite (bounded distortion)."""
    if not K >= 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    return 2.0 * (K + (0.0 if math.isinf(p) else 1.0 / p))


@dataclass
class Theorem1Report:
    K: float
    p: float
    bound: float
    fits: list
    verdicts: list
    errors: list = field(default_factory=list)
    tol: float = THEOREM1_TOL

    @property
    def passed(self) -> bool:
        return bool(self.fits) and all(self.verdicts)

    def to_json(self) -> dict:
        return {"K": self.K, "p": _finite(self.p), "bound": self.bound, "tol": self.tol,
                "passed": self.passed, "fits": [f.to_json() for f in self.fits],
                "verdicts": list(self.verdicts), "errors": list(self.errors)}

    def to_rows(self) -> list:
        rows = []
        for f, v in zip(self.fits, self.verdicts):
            for s, d in zip(f.scales, f.distances):
                rows.append([f.anchor.real, f.anchor.imag, s, d, f.alpha, self.bound,
                             "pass" if v else "fail"])
        return rows


def _finite(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def check_theorem1(m: PlanarMap, anchors: Sequence[complex], scales=None,
                   K: Optional[float] = None, p: Optional[float] = None,
                   tol: float = THEOREM1_TOL) -> Theorem1Report:
    """Fit exponents at each anchor (conjugate pairs on the unit circle,
    radial partners inside) and compare with 2(K + 1/p) + tol."""
    K = m.declared_K if K is None else K
    p = m.declared_p if p is None else p
    if K is None or p is None:
        raise ParameterError("map must declare K and p (or pass them)")
    bound = theorem1_bound(K, p)
    fits, verdicts, errors = [], [], []
    for a in anchors:
        a = complex(a)
        rule = "conjugate-pair" if abs(abs(a) - 1) < 1e-12 else "radial"
        try:
            f = fit_exponent(m, a, rule, scales)
        except DistortLabError as exc:
            errors.append({"anchor": [a.real, a.imag], "error": str(exc)})
            continue
        fits.append(f)
        verdicts.append(bool(f.alpha <= bound + tol))
    return Theorem1Report(K, p, bound, fits, verdicts, errors, tol)


# --------------------------------------------------------------------------
# Beurling-type diameter estimate


def invert_point(m: PlanarMap, w: complex, n_radial: int = 256, n_angular: int = 512,
                 tol: float = 1e-11, max_newton: int = 50) -> complex:
    """Preimage of w in the closed disk: nearest of a dense polar sample,
    then damped Newton steps with a finite-difference Jacobian."""
    w = complex(w)
    r = np.concatenate([[0.0], np.linspace(1.0 / n_radial, 1.0, n_radial)])
    th = 2 * np.pi * np.arange(n_angular) / n_angular
    pts = np.concatenate([[0j], (r[1:, None] * np.exp(1j * th[None, :])).ravel()])
    vals = m(pts)
    z = pts[int(np.argmin(np.abs(vals - w)))]
    scale = max(1.0, abs(w))
    fz = complex(m(np.array([z]))[0])
    for _ in range(max_newton):
        err = fz - w
        if abs(err) <= tol * scale:
            return z
        h = m.fd_step * max(1e-3, min(1.0, abs(z)))
        zs = np.array([z + h, z - h, z + 1j * h, z - 1j * h])
        if m.domain == "disk":
            zs = np.where(np.abs(zs) > 1, zs / np.abs(zs), zs)
        fv = m(zs)
        fx = (fv[0] - fv[1]) / (zs[0] - zs[1]).real
        fy = (fv[2] - fv[3]) / (zs[2] - zs[3]).imag
        J = np.array([[fx.real, fy.real], [fx.imag, fy.imag]])
        try:
            step = np.linalg.solve(J, [-err.real, -err.imag])
        except np.linalg.LinAlgError:
            break
        dz = complex(step[0], step[1])
        t = 1.0
        for _ in range(30):
            zn = z + t * dz
            if m.domain == "disk" and abs(zn) > 1:
                zn = zn / abs(zn)
            fn = complex(m(np.array([zn]))[0])
            if abs(fn - w) < abs(err):
                break
            t *= 0.5
        else:
            break
        z, fz = zn, fn
    if abs(fz - w) <= tol * scale:
        return z
    raise ResolutionError(f"could not invert {w}: residual {abs(fz - w):.3g}")


@dataclass
class BeurlingReport:
    exponent: float
    threshold: float
    passed: bool
    diameters: np.ndarray
    separations: np.ndarray
    stderr: float
    tol: float

    def to_json(self) -> dict:
        return {"exponent": self.exponent, "threshold": self.threshold, "passed": self.passed,
                "stderr": self.stderr, "tol": self.tol, "diameters": self.diameters.tolist(),
                "separations": self.separations.tolist()}


def beurling_check(m: PlanarMap, continua, K: Optional[float] = None,
                   tol: float = THEOREM1_TOL) -> BeurlingReport:
    """Exponent of |a - b| against diam(A), where a, b are the preimages of
    the end points of each image continuum A; checked against 1/(2K)."""
    K = m.declared_K if K is None else K
    if K is None:
        raise ParameterError("declared_K required")
    diam, sep = [], []
    for c in continua:
        v = c.vertices
        d = np.abs(v[:, None] - v[None, :]).max()
        a = invert_point(m, v[0])
        b = invert_point(m, v[-1])
        diam.append(d)
        sep.append(abs(a - b))
    diam, sep = np.array(diam), np.array(sep)
    order = np.argsort(-diam)
    diam, sep = diam[order], sep[order]
    if np.any(sep <= 0):
        raise ResolutionError("continuum end points share a preimage")
    slope, se, _, _ = fit_loglog(diam, sep)
    thr = 1.0 / (2.0 * K)
    return BeurlingReport(slope, thr, bool(slope >= thr - tol), diam, sep, se, tol)


# --------------------------------------------------------------------------
# modulus replay at a boundary point


@dataclass
class ReplayRecord:
    r: float
    z: complex
    lhs_est: float
    rhs_est: float
    lower_proxy: float
    rhs_proxy: float
    local_energy: float
    passed: bool
    slack: float
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"r": self.r, "z": [self.z.real, self.z.imag], "lhs_est": self.lhs_est,
                "rhs_est": self.rhs_est, "lower_proxy": self.lower_proxy,
                "rhs_proxy": self.rhs_proxy, "local_energy": self.local_energy,
                "passed": self.passed, "slack": self.slack, "notes": list(self.notes)}


def proof_replay(m: PlanarMap, x: complex = 1.0, r: float = 0.1, p: Optional[float] = None,
                 K: Optional[float] = None, n_paths: int = 300, grid_n: int = 128,
                 seed: int = 0, slack: float = 1.15) -> ReplayRecord:
    """Replay the modulus argument at the boundary point ``x``.

    Coordinates are rotated so that x becomes 1. With z on the circle at
    |z - 1| = r, E = B(1, r/3) and F = B(z, r/3) cut to the closed disk:
    lhs_est = M(f(Gamma)), rhs_est = M_{K_f}(Gamma) for a sampled family
    Gamma joining E to F inside the disk, the lower proxy is
    r^(2K)/|f(z) - f(1)| and the upper proxy is r^(-2/p) times the local
    p-energy of K_f over B(1, 2r) in the disk.
    """
    from .modulus import (ModulusProblem, boundary_pair_regions, family_grid,
                          modulus_inequality_check, sample_connecting_family)
    from .geometry import GridSpec

    if not (0 < r < 0.5):
        raise ParameterError("r must lie in (0, 1/2)")
    K = m.declared_K if K is None else K
    p = m.declared_p if p is None else p
    if K is None or p is None:
        raise ParameterError("declared K and p required")
    x = complex(x)
    g = m if x == 1 else compose(m, rotation(math.atan2(x.imag, x.real)))
    E, F, z = boundary_pair_regions(1.0, r)
    span = GridSpec.covering(1 - 2 * r, -2 * r, 1 + r / 3, 2 * r, grid_n, 0.05)
    fam = sample_connecting_family(E, F, span, n_paths, seed=seed, domain="disk")
    problem = ModulusProblem(fam, family_grid(fam, grid_n))
    rep = modulus_inequality_check(g, problem, slack)
    fz, f1 = g(np.array([z, 1.0 + 0j]))
    dist = abs(fz - f1)
    if dist == 0:
        raise ResolutionError("f(z) = f(1) at this resolution")
    lower = r ** (2 * K) / dist
    local = GridSpec.covering(1 - 2 * r, -2 * r, 1, 2 * r, 64)
    mask = lambda pts: (np.abs(pts) <= 1) & (np.abs(pts - 1) <= 2 * r)
    energy = distortion_field(g, local, mask, p).meta["p_energy"]
    upper = energy * (1.0 if math.isinf(p) else r ** (-2.0 / p))
    notes = ["bi-Lipschitz factor taken as the identity"] + rep.notes
    return ReplayRecord(r, z * x, rep.lhs, rep.rhs, lower, upper, energy, rep.passed, slack,
                        notes)


@dataclass
class ReplaySeries:
    records: list
    proxy_slope: float
    proxy_stderr: float

    @property
    def passed(self) -> bool:
        return all(rec.passed for rec in self.records)

    def to_json(self) -> dict:
        return {"passed": self.passed, "proxy_slope": self.proxy_slope,
                "proxy_stderr": self.proxy_stderr,
                "records": [rec.to_json() for rec in self.records]}


def proof_replay_series(m: PlanarMap, anchor: complex, r_values, p: Optional[float] = None,
                        K: Optional[float] = None, symmetric: bool = False,
                        **kw) -> ReplaySeries:
    """proof_replay over several r plus the slope of log(lower proxy)
    against log r, which tends to 2K - a for a local exponent a.

    With ``symmetric`` the pair (x, z) straddles ``anchor``:
    x = anchor e^{-i delta}, z = anchor e^{i delta}, |z - x| = r.
    Otherwise x = anchor.
    """
    recs = []
    for r in sorted(r_values, reverse=True):
        r = float(r)
        x = complex(anchor) / abs(anchor)
        if symmetric:
            x = x * np.exp(-1j * math.asin(r / 2))
        recs.append(proof_replay(m, x, r, p, K, **kw))
    rs = np.array([rec.r for rec in recs])
    lp = np.array([rec.lower_proxy for rec in recs])
    if len(recs) >= 2:
        fit = stats.linregress(np.log(rs), np.log(lp))
        slope, se = float(fit.slope), float(fit.stderr) if len(recs) > 2 else 0.0
    else:
        slope, se = float("nan"), float("nan")
    return ReplaySeries(recs, slope, se)
