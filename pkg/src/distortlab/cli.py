"""Config-driven experiment runner.

Usage::

    distortlab <command> --config run.toml [--out DIR] [--seed N]

Each run writes results.json, results.csv and plot.svg (plus optional
extra CSV files) into the output directory once, at the end. Exit status
is 0 when every verdict passes, 2 when a verdict fails and 1 on errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, DistortLabError
from .plots import Plot, heatmap_svg

SCHEMA = "distortlab.results.v1"
THREADS_ENV = "DISTORTLAB_THREADS"
COMMANDS = ("modulus", "exponent", "theorem1", "sharpness", "spectrum",
            "conformal-validate", "replay")

# --------------------------------------------------------------------------
# config schema: per command, key -> (kind, default)

_COMMON = {"command": ("str", None), "seed": ("int", 0)}

SCHEMAS = {
    "modulus": {
        "map": ("map", "identity"),
        "fixture": ("str", "rectangle"),
        "width": ("float", 1.0),
        "height": ("float", 1.0),
        "r_inner": ("float", 1.0),
        "r_outer": ("float", 2.0),
        "x": ("point", [1.0, 0.0]),
        "r": ("float", 0.1),
        "q": ("float", 2.0),
        "grid_n": ("int", 257),
        "n_paths": ("int", 257),
        "inequality": ("bool", False),
        "slack": ("float", 1.15),
        "tol": ("float", 0.02),
        "gap_tol": ("float", 1e-4),
        "write_rho": ("bool", False),
    },
    "exponent": {
        "map": ("map", "S_2"),
        "anchor": ("point", [0.0, 0.0]),
        "rule": ("str", "radial"),
        "scale_max": ("float", 1e-2),
        "scale_min": ("float", 1e-6),
        "n_scales": ("int", 9),
        "expected": ("float?", None),
        "tol": ("float", 1e-3),
    },
    "theorem1": {
        "map": ("map", "identity"),
        "K": ("float?", None),
        "p": ("p?", None),
        "anchors": ("points", [[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]),
        "scale_max": ("float", 1e-2),
        "scale_min": ("float", 1e-6),
        "n_scales": ("int", 9),
        "tol": ("float", 0.1),
    },
    "sharpness": {
        "s": ("floats", [1.2, 1.35, 1.5]),
        "K": ("floats", [1.0]),
        "p": ("p?", None),
        "n_modes": ("int", 2048),
        "n_nodes": ("int", 24576),
        "scale_max": ("float", 1e-2),
        "scale_min": ("float", 1e-5),
        "n_scales": ("int", 7),
        "tol": ("float", 0.05),
        "residual_tol": ("float", 1e-8),
    },
    "spectrum": {
        "map": ("map", "cardioid"),
        "K": ("float?", None),
        "p": ("p?", None),
        "s": ("floats", [0.1]),
        "epsilon": ("float", 0.05),
        "boundary_samples": ("int", 4096),
        "scale_floor": ("float", 1e-7),
        "chain": ("bool", True),
        "n_paths": ("int", 120),
        "grid_n": ("int", 96),
        "dim_tol": ("float", 0.1),
    },
    "conformal-validate": {
        "checks": ("strs", ["disk", "ellipse", "cusp"]),
        "ellipse_a": ("float", 1.0),
        "ellipse_b": ("float", 0.5),
        "n_modes": ("int", 512),
        "oracle_degree": ("int", 301),
        "cusp_s": ("float", 1.5),
        "cusp_modes": ("ints", [2048, 4096]),
        "tol_disk": ("float", 1e-9),
        "tol_ellipse": ("float", 1e-6),
        "tol_cauchy": ("float", 1e-6),
        "residual_tol": ("float", 1e-8),
    },
    "replay": {
        "map": ("map", "cardioid"),
        "K": ("float?", None),
        "p": ("p?", None),
        "anchor": ("point", [1.0, 0.0]),
        "r": ("floats", [0.2, 0.1, 0.05]),
        "symmetric": ("bool", False),
        "n_paths": ("int", 300),
        "grid_n": ("int", 128),
        "slack": ("float", 1.15),
    },
}


@dataclass
class ExperimentConfig:
    command: str
    params: dict
    seed: int = 0
    out_dir: Path = Path("out")

    def echo(self) -> dict:
        return {"command": self.command, "seed": self.seed, **self.params}


@dataclass
class RunRecord:
    config: dict
    version: str
    payload: dict
    verdict: bool
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_json(self) -> dict:
        # wall time is left out so records are byte-reproducible
        return {"schema": SCHEMA, "version": self.version, "config": self.config,
                "verdict": "pass" if self.verdict else "fail", "results": self.payload,
                "warnings": list(self.warnings)}


# --------------------------------------------------------------------------
# map shorthand

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_map(text: str) -> dict:
    """Map shorthand to a descriptor.

    Accepts identity, cardioid, S_<K>, cusp_<s>, rotation_<angle> and
    compose(<outer>, <inner>) with nesting.
    """
    t = text.strip()
    if t.startswith("compose(") and t.endswith(")"):
        inner = t[len("compose("):-1]
        depth = 0
        for i, ch in enumerate(inner):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                return {"kind": "compose", "params": {"outer": parse_map(inner[:i]),
                                                      "inner": parse_map(inner[i + 1:])}}
        raise ValueError(f"compose needs two arguments: {text!r}")
    if t == "identity":
        return {"kind": "identity", "params": {}}
    if t == "cardioid":
        return {"kind": "cardioid", "params": {}}
    m = re.fullmatch(rf"S_({_NUM})", t)
    if m:
        return {"kind": "radial_stretch", "params": {"K": float(m.group(1))}}
    m = re.fullmatch(rf"cusp_({_NUM})", t)
    if m:
        return {"kind": "cusp", "params": {"s": float(m.group(1))}}
    m = re.fullmatch(rf"rotation_({_NUM})", t)
    if m:
        return {"kind": "rotation", "params": {"angle": float(m.group(1))}}
    raise ValueError(f"unknown map {text!r}")


_MAP_KINDS = {"identity": (), "rotation": ("angle",), "mobius": ("a", "angle"),
              "radial_stretch": ("K",), "cardioid": ("declared_p",),
              "cusp": ("s", "n_modes", "declared_p", "n_nodes"), "compose": ("outer", "inner")}


def _check_descriptor(desc, path: str, violations: list):
    if not isinstance(desc, dict) or set(desc) - {"kind", "params"}:
        violations.append(f"{path}: descriptor must be a table with kind and params")
        return
    kind = desc.get("kind")
    if kind not in _MAP_KINDS:
        violations.append(f"{path}.kind: unknown map kind {kind!r}")
        return
    params = desc.get("params", {})
    extra = set(params) - set(_MAP_KINDS[kind])
    if extra:
        violations.append(f"{path}.params: unknown keys {sorted(extra)}")
    if kind == "radial_stretch":
        K = params.get("K")
        if not isinstance(K, (int, float)) or not K >= 1:
            violations.append(f"{path}.params.K: K must be ≥ 1")
    if kind == "cusp":
        s = params.get("s")
        if not isinstance(s, (int, float)) or not (1 < s <= 2):
            violations.append(f"{path}.params.s: s must be in (1,2]")
    if kind == "compose":
        for part in ("outer", "inner"):
            if part not in params:
                violations.append(f"{path}.params.{part}: missing")
            else:
                _check_descriptor(params[part], f"{path}.params.{part}", violations)


# --------------------------------------------------------------------------
# validation


def _coerce(kind: str, value, key: str, violations: list):
    def num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    base = kind.rstrip("?")
    if kind.endswith("?") and value is None:
        return None
    if base == "str":
        if isinstance(value, str):
            return value
    elif base == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif base == "bool":
        if isinstance(value, bool):
            return value
    elif base == "float":
        if num(value):
            return float(value)
    elif base == "p":
        if value == "inf":
            return math.inf
        if num(value):
            return float(value)
    elif base == "floats":
        if num(value):
            return [float(value)]
        if isinstance(value, list) and value and all(num(v) for v in value):
            return [float(v) for v in value]
    elif base == "ints":
        if isinstance(value, list) and value and all(isinstance(v, int) for v in value):
            return list(value)
    elif base == "strs":
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return list(value)
    elif base == "point":
        if isinstance(value, list) and len(value) == 2 and all(num(v) for v in value):
            return [float(value[0]), float(value[1])]
    elif base == "points":
        if (isinstance(value, list) and value and all(isinstance(v, list) and len(v) == 2
                                                      and all(num(c) for c in v)
                                                      for v in value)):
            return [[float(a), float(b)] for a, b in value]
    elif base == "map":
        if isinstance(value, str):
            try:
                return parse_map(value)
            except ValueError as exc:
                violations.append(f"map: {exc}")
                return None
        if isinstance(value, dict):
            return value
    violations.append(f"{key}: expected {base}, got {value!r}")
    return None


def _range_checks(cmd: str, p: dict, violations: list):
    def need(cond, msg):
        if not cond:
            violations.append(msg)

    if "map" in p and p["map"] is not None:
        _check_descriptor(p["map"], "map", violations)
    for key in ("K",):
        if key in p and p[key] is not None:
            vals = p[key] if isinstance(p[key], list) else [p[key]]
            need(all(v >= 1 for v in vals), "K: K must be ≥ 1")
    if p.get("p") is not None:
        need(p["p"] >= 1, "p: p must be ≥ 1")
    for key in ("grid_n", "n_paths", "n_scales", "n_modes", "boundary_samples", "n_nodes",
                "oracle_degree"):
        if key in p and p[key] is not None:
            need(p[key] > 0, f"{key}: {key} must be positive")
    for key in ("tol", "slack", "gap_tol", "epsilon", "residual_tol", "dim_tol", "scale_floor",
                "tol_disk", "tol_ellipse", "tol_cauchy"):
        if key in p and p[key] is not None:
            need(p[key] > 0, f"{key}: {key} must be positive")
    if "scale_max" in p:
        need(0 < p["scale_min"] < p["scale_max"] <= 0.5,
             "scale_min, scale_max: need 0 < scale_min < scale_max ≤ 0.5")
        need(p["scale_max"] / p["scale_min"] >= 100 * (1 - 1e-12),
             "scale_min, scale_max: scales must span at least two decades")
        need(p["n_scales"] >= 4, "n_scales: n_scales must be ≥ 4")
    if cmd == "modulus":
        need(p["fixture"] in ("rectangle", "annulus", "boundary-pair"),
             "fixture: fixture must be rectangle, annulus or boundary-pair")
        need(p["width"] > 0 and p["height"] > 0, "width, height: must be positive")
        need(0 < p["r_inner"] < p["r_outer"], "r_inner, r_outer: need 0 < r_inner < r_outer")
        need(p["q"] > 1, "q: q must exceed 1")
        need(0 < p["r"] < 0.5, "r: r must be in (0,1/2)")
        need(abs(complex(*p["x"])) > 0, "x: x must be nonzero")
    if cmd == "exponent":
        need(p["rule"] in ("radial", "tangential", "conjugate-pair"),
             "rule: rule must be radial, tangential or conjugate-pair")
    if cmd == "sharpness":
        need(all(1 < s <= 2 for s in p["s"]), "s: s must be in (1,2]")
        need(p["n_modes"] >= 64 and not p["n_modes"] & (p["n_modes"] - 1),
             "n_modes: n_modes must be a power of two ≥ 64")
    if cmd == "spectrum":
        need(all(0 < s < 2 for s in p["s"]), "s: s must be in (0,2)")
        need(p["scale_floor"] >= 1e-8, "scale_floor: scale_floor must be ≥ 1e-8")
    if cmd == "conformal-validate":
        unknown = set(p["checks"]) - {"disk", "ellipse", "cusp"}
        need(not unknown, f"checks: unknown checks {sorted(unknown)}")
        need(p["ellipse_a"] > 0 and p["ellipse_b"] > 0, "ellipse_a, ellipse_b: must be positive")
        need(1 < p["cusp_s"] <= 2, "cusp_s: s must be in (1,2]")
        need(all(n >= 64 and not n & (n - 1) for n in p["cusp_modes"] + [p["n_modes"]]),
             "n_modes, cusp_modes: mode counts must be powers of two ≥ 64")
        need(len(p["cusp_modes"]) >= 2, "cusp_modes: need at least two mode counts")
    if cmd == "replay":
        need(all(0 < r < 0.5 for r in p["r"]), "r: r must be in (0,1/2)")
        need(abs(complex(*p["anchor"])) > 0, "anchor: anchor must be nonzero")


def validate_config(raw: str, command: str | None = None) -> ExperimentConfig:
    """Parse a TOML document into a range-checked config.

    Unknown keys are rejected. Raises ConfigError listing every violation.
    """
    try:
        doc = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config is not valid TOML: {exc}"]) from exc
    cmd = command or doc.get("command")
    violations = []
    if cmd not in SCHEMAS:
        raise ConfigError([f"command: unknown command {cmd!r}, must be one of {COMMANDS}"])
    if doc.get("command") not in (None, cmd):
        violations.append(f"command: config says {doc['command']!r} but {cmd!r} was requested")
    schema = {**_COMMON, **SCHEMAS[cmd]}
    params = {}
    for key, (kind, default) in SCHEMAS[cmd].items():
        params[key] = _coerce(kind, doc[key], key, violations) if key in doc else default
        if key == "map" and key not in doc:
            params[key] = parse_map(default)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        violations.append("seed: seed must be a nonnegative integer")
    if not violations:
        _range_checks(cmd, params, violations)
    for key in sorted(set(doc) - set(schema)):
        violations.append(f"{key}: unknown key for command {cmd}")
    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(cmd, params, int(seed))


# --------------------------------------------------------------------------
# helpers


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{THREADS_ENV} must be a positive integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError([f"{THREADS_ENV} must be a positive integer, got {raw!r}"])
    return n


def _ordered_map(fn, items):
    """Apply fn to items, in parallel when configured; results keep input order."""
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _scales(p: dict) -> np.ndarray:
    return np.logspace(math.log10(p["scale_max"]), math.log10(p["scale_min"]), p["n_scales"])


def _build_map(desc: dict):
    from .maps import map_from_descriptor

    return map_from_descriptor(desc)


def _declared(m, p: dict):
    K = p.get("K") if p.get("K") is not None else m.declared_K
    pp = p.get("p") if p.get("p") is not None else m.declared_p
    if K is None or pp is None:
        raise ConfigError(["K, p: required because the map declares none"])
    return K, pp


def to_plain(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values,
    complex numbers become [re, im] and non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_plain(float(obj.real)), to_plain(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


@dataclass
class Outcome:
    payload: dict
    verdict: bool
    csv_header: list
    csv_rows: list
    plot: str
    extra: dict = field(default_factory=dict)   # file name -> text
    warnings: list = field(default_factory=list)


# --------------------------------------------------------------------------
# commands


def run_modulus(cfg: ExperimentConfig) -> Outcome:
    from .modulus import (ModulusProblem, Segment, annulus_q_modulus, boundary_pair_regions,
                          crossing_family, discrete_modulus, family_grid,
                          modulus_inequality_check, radial_family, rectangle_modulus,
                          sample_connecting_family)
    from .geometry import GridSpec

    p = cfg.params
    fx = p["fixture"]
    oracle = None
    if fx == "rectangle":
        w, h = p["width"], p["height"]
        fam = crossing_family(Segment(0j, complex(w)), Segment(1j * h, w + 1j * h), p["n_paths"])
        grid = GridSpec.covering(0.0, 0.0, w, h, p["grid_n"])
        if p["q"] == 2:
            oracle = rectangle_modulus(w, h)
    elif fx == "annulus":
        r, R = p["r_inner"], p["r_outer"]
        fam = radial_family(0j, r, R, p["n_paths"])
        grid = family_grid(fam, p["grid_n"])
        oracle = annulus_q_modulus(r, R, p["q"])
    else:
        x = complex(*p["x"])
        E, F, _ = boundary_pair_regions(x, p["r"])
        r = p["r"]
        span = GridSpec.covering(x.real - 2 * r, x.imag - 2 * r, x.real + 2 * r,
                                 x.imag + 2 * r, p["grid_n"], 0.05)
        fam = sample_connecting_family(E, F, span, p["n_paths"], seed=cfg.seed, domain="disk")
        grid = family_grid(fam, p["grid_n"])
    problem = ModulusProblem(fam, grid, None, p["q"])
    res = discrete_modulus(problem, p["gap_tol"])
    payload = {"fixture": fx, "value": res.value, "result": res.to_json(),
               "grid": grid.to_json(), "n_paths": len(fam.paths)}
    rows = [[fx, "value", res.value, oracle if oracle is not None else math.nan]]
    verdict = True
    if oracle is not None:
        rel = abs(res.value - oracle) / oracle
        payload.update({"oracle": oracle, "rel_error": rel, "tol": p["tol"]})
        verdict = rel <= p["tol"]
    warnings = list(res.warnings)
    if p["inequality"] or fx == "boundary-pair":
        m = _build_map(p["map"])
        rep = modulus_inequality_check(m, problem, p["slack"], gap_tol=p["gap_tol"])
        payload["inequality"] = rep.to_json()
        ref_l = ref_r = math.nan
        if fx == "annulus" and p["map"]["kind"] == "radial_stretch" and p["q"] == 2:
            K = p["map"]["params"]["K"]
            log_ratio = math.log(p["r_outer"] / p["r_inner"])
            ref_l, ref_r = 2 * math.pi / (K * log_ratio), K * 2 * math.pi / log_ratio
            payload["inequality"]["analytic"] = {"lhs": ref_l, "rhs": ref_r}
        rows.append([fx, "lhs", rep.lhs, ref_l])
        rows.append([fx, "rhs", rep.rhs, ref_r])
        verdict = verdict and rep.passed
        warnings.extend(rep.notes)
    plot = heatmap_svg(np.asarray(res.rho.values), f"optimal density ({fx})")
    extra = {}
    if p["write_rho"]:
        extra["rho.csv"] = res.rho.to_csv()
    return Outcome(payload, verdict, ["fixture", "quantity", "value", "reference"], rows, plot,
                   extra, warnings)


def run_exponent(cfg: ExperimentConfig) -> Outcome:
    from .exponents import fit_exponent

    p = cfg.params
    m = _build_map(p["map"])
    fit = fit_exponent(m, complex(*p["anchor"]), p["rule"], _scales(p))
    payload = {"fit": fit.to_json()}
    verdict = True
    if p["expected"] is not None:
        payload["expected"] = p["expected"]
        verdict = abs(fit.alpha - p["expected"]) <= p["tol"]
    rows = [[fit.anchor.real, fit.anchor.imag, s, d, fit.alpha, fit.stderr]
            for s, d in zip(fit.scales, fit.distances)]
    plot = (Plot(f"exponent fit, alpha = {fit.alpha:.4f}", "separation", "image distance",
                 True, True)
            .add(fit.scales, fit.distances, "measured", "points")
            .add_slope(fit.scales, float(fit.distances[0]), fit.alpha, "fitted slope"))
    return Outcome(payload, verdict,
                   ["anchor_re", "anchor_im", "scale", "distance", "alpha", "stderr"], rows,
                   plot.to_svg())


def run_theorem1(cfg: ExperimentConfig) -> Outcome:
    from .exponents import check_theorem1

    p = cfg.params
    m = _build_map(p["map"])
    K, pp = _declared(m, p)
    rep = check_theorem1(m, [complex(*a) for a in p["anchors"]], _scales(p), K, pp, p["tol"])
    plot = Plot(f"bound {rep.bound:.4f}", "separation", "image distance", True, True)
    for f in rep.fits:
        plot.add(f.scales, f.distances, f"anchor {f.anchor.real:g}{f.anchor.imag:+g}i, "
                 f"alpha {f.alpha:.3f}", "both")
    if rep.fits:
        f0 = max(rep.fits, key=lambda f: f.alpha)
        plot.add_slope(f0.scales, float(f0.distances[0]), rep.bound, "bound slope")
    warnings = [f"anchor {e['anchor']}: {e['error']}" for e in rep.errors]
    return Outcome(rep.to_json(), rep.passed,
                   ["anchor_re", "anchor_im", "scale", "distance", "alpha", "bound", "verdict"],
                   rep.to_rows(), plot.to_svg(), warnings=warnings)


def run_sharpness(cfg: ExperimentConfig) -> Outcome:
    from .conformal import cusp_solution
    from .exponents import fit_exponent
    from .maps import compose, cusp_map, radial_stretch

    p = cfg.params
    scales = _scales(p)
    sols = dict(zip(p["s"], _ordered_map(
        lambda s: cusp_solution(s, p["n_modes"], p["residual_tol"], p["n_nodes"]), p["s"])))
    cases, rows, plot = [], [], Plot("boundary exponent at the cusp", "separation",
                                     "image distance", True, True)
    for s in p["s"]:
        sol = sols[s]
        h = cusp_map(s, p["n_modes"], n_nodes=p["n_nodes"], solution=sol)
        for K in p["K"]:
            m = h if K == 1 else compose(radial_stretch(K), h)
            expected = 2 * (K + s - 1)
            fit = fit_exponent(m, -1.0, "conjugate-pair", scales)
            rel = abs(fit.alpha - expected) / expected
            ok = bool(sol.residual <= p["residual_tol"] and rel <= p["tol"])
            cases.append({"s": s, "K": K, "alpha": fit.alpha, "expected": expected,
                          "rel_error": rel, "residual": sol.residual, "passed": ok,
                          "fit": fit.to_json()})
            rows.append([s, K, fit.alpha, expected, rel, sol.residual, ok])
            plot.add(fit.scales, fit.distances, f"s={s:g} K={K:g} alpha={fit.alpha:.3f}", "both")
    verdict = all(c["passed"] for c in cases)
    return Outcome({"cases": cases, "tol": p["tol"]}, verdict,
                   ["s", "K", "alpha", "expected", "rel_error", "residual", "verdict"], rows,
                   plot.to_svg())


def run_spectrum(cfg: ExperimentConfig) -> Outcome:
    from .dimension import compression_set, theorem2_check

    p = cfg.params
    m = _build_map(p["map"])
    K, pp = _declared(m, p)

    def one(s):
        rep = theorem2_check(m, K, pp, s, p["epsilon"], p["boundary_samples"],
                             p["scale_floor"], dim_tol=p["dim_tol"], chain=p["chain"],
                             n_paths=p["n_paths"], grid_n=p["grid_n"], seed=cfg.seed)
        cs = compression_set(m, K, pp, s, p["epsilon"], p["boundary_samples"], p["scale_floor"])
        return rep, cs

    out = _ordered_map(one, p["s"])
    reports, rows, comp_rows, warnings = [], [], [], []
    for s, (rep, cs) in zip(p["s"], out):
        reports.append(rep.to_json())
        ch = rep.chain or {}
        rows.append([s, rep.threshold, rep.n_points, rep.s_hat,
                     rep.band.m if rep.band is not None else "",
                     ch.get("lhs", math.nan), ch.get("rhs", math.nan), rep.passed])
        for z_re, z_im, lam, a in cs.to_rows():
            comp_rows.append([s, z_re, z_im, lam, a])
        warnings.extend(f"s={s:g}: {n}" for n in rep.notes if not n.startswith("empty"))
        if rep.dimension is not None:
            warnings.extend(f"s={s:g}: {w}" for w in rep.dimension.warnings)
    plot = (Plot("compression set dimension", "threshold exponent", "estimated dimension")
            .add([r["threshold_exponent"] for r in reports], [r["s_hat"] for r in reports],
                 "s_hat", "both")
            .add([r["threshold_exponent"] for r in reports], p["s"], "s", "both", dashed=True))
    verdict = all(r["passed"] for r in reports)
    extra = {"compression.csv": _csv_text(["s", "z_re", "z_im", "scale", "exponent"],
                                          comp_rows)}
    return Outcome({"K": K, "p": pp, "reports": reports}, verdict,
                   ["s", "threshold", "n_points", "s_hat", "band_m", "chain_lhs", "chain_rhs",
                    "verdict"], rows, plot.to_svg(), extra, warnings)


def run_conformal(cfg: ExperimentConfig) -> Outcome:
    from .conformal import (circle_boundary, cusp_solution, ellipse_boundary,
                            ellipse_polynomial_oracle, solve_correspondence)

    p = cfg.params
    th = 2 * np.pi * np.arange(64) / 64
    test_pts = np.concatenate([r * np.exp(1j * th) for r in (0.3, 0.6, 0.9, 1.0)] + [[0j]])
    checks, rows = {}, []
    plot = Plot("mode-doubling differences", "modes", "sup difference", True, True)
    if "disk" in p["checks"]:
        sol = solve_correspondence(circle_boundary(), p["n_modes"], p["residual_tol"])
        err = float(np.max(np.abs(sol(test_pts) - test_pts)))
        ok = err <= p["tol_disk"]
        checks["disk"] = {"sup_error": err, "bilip": sol.bilip_estimate, "passed": ok}
        rows.append(["disk", "sup_error", err, p["tol_disk"], ok])
    if "ellipse" in p["checks"]:
        a, b = p["ellipse_a"], p["ellipse_b"]
        sol = solve_correspondence(ellipse_boundary(a, b), p["n_modes"], p["residual_tol"])
        oracle = ellipse_polynomial_oracle(a, b, p["oracle_degree"])
        err = float(np.max(np.abs(sol(test_pts) - oracle(test_pts))))
        ok = err <= p["tol_ellipse"]
        checks["ellipse"] = {"sup_error": err, "oracle_residual": oracle.residual,
                             "residual": sol.residual, "bilip": sol.bilip_estimate, "passed": ok}
        rows.append(["ellipse", "sup_error", err, p["tol_ellipse"], ok])
    if "cusp" in p["checks"]:
        modes = sorted(p["cusp_modes"])
        sols = _ordered_map(lambda n: cusp_solution(p["cusp_s"], n, p["residual_tol"]), modes)
        # radii 0.3, 0.6, 0.9 and the origin; unit-circle points converge more slowly
        interior = np.concatenate([test_pts[:192], test_pts[-1:]])
        diffs = [float(np.max(np.abs(s1(interior) - s0(interior))))
                 for s0, s1 in zip(sols, sols[1:])]
        g_minus1 = abs(complex(sols[-1](np.array([-1.0 + 0j]))[0]))
        ok = diffs[-1] < p["tol_cauchy"]
        checks["cusp"] = {"s": p["cusp_s"], "modes": modes, "sup_differences": diffs,
                          "residuals": [s.residual for s in sols], "g(-1)": g_minus1,
                          "bilip": sols[-1].bilip_estimate, "passed": ok}
        for n, d in zip(modes, diffs):
            rows.append(["cusp", f"sup_diff_{n}_{2 * n}", d, p["tol_cauchy"], d < p["tol_cauchy"]])
        plot.add(modes[:-1], diffs, f"cusp s={p['cusp_s']:g}", "both")
    verdict = bool(checks) and all(c["passed"] for c in checks.values())
    return Outcome(checks, verdict, ["check", "metric", "value", "tolerance", "verdict"], rows,
                   plot.to_svg())


def run_replay(cfg: ExperimentConfig) -> Outcome:
    from .exponents import proof_replay_series

    p = cfg.params
    m = _build_map(p["map"])
    K, pp = _declared(m, p)
    ser = proof_replay_series(m, complex(*p["anchor"]), p["r"], pp, K, p["symmetric"],
                              n_paths=p["n_paths"], grid_n=p["grid_n"], seed=cfg.seed,
                              slack=p["slack"])
    rows = [[rec.r, rec.z.real, rec.z.imag, rec.lhs_est, rec.rhs_est,
             rec.lhs_est / rec.rhs_est if rec.rhs_est > 0 else math.inf, rec.lower_proxy,
             rec.rhs_proxy, rec.local_energy, rec.passed] for rec in ser.records]
    rs = [rec.r for rec in ser.records]
    plot = (Plot(f"replay, proxy slope {ser.proxy_slope:.3f}", "r", "estimate", True, True)
            .add(rs, [rec.lhs_est for rec in ser.records], "image modulus", "both")
            .add(rs, [rec.rhs_est for rec in ser.records], "weighted modulus", "both")
            .add(rs, [rec.lower_proxy for rec in ser.records], "lower proxy", "both"))
    warnings = sorted({n for rec in ser.records for n in rec.notes})
    return Outcome({"K": K, "p": pp, **ser.to_json()}, ser.passed,
                   ["r", "z_re", "z_im", "lhs", "rhs", "ratio", "lower_proxy", "rhs_proxy",
                    "local_energy", "verdict"], rows, plot.to_svg(), warnings=warnings)


RUNNERS = {"modulus": run_modulus, "exponent": run_exponent, "theorem1": run_theorem1,
           "sharpness": run_sharpness, "spectrum": run_spectrum,
           "conformal-validate": run_conformal, "replay": run_replay}


class _Collect(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def run(cfg: ExperimentConfig) -> RunRecord:
    """Dispatch, then write results.json, results.csv and plot.svg."""
    t0 = time.perf_counter()
    handler = _Collect()
    logger = logging.getLogger("distortlab")
    logger.addHandler(handler)
    try:
        out = RUNNERS[cfg.command](cfg)
    finally:
        logger.removeHandler(handler)
    warnings = list(dict.fromkeys(handler.messages + out.warnings))
    record = RunRecord(to_plain(cfg.echo()), __version__, to_plain(out.payload), out.verdict,
                       warnings, time.perf_counter() - t0)
    files = {"results.json": json.dumps(to_plain(record.to_json()), sort_keys=True, indent=2,
                                        ensure_ascii=False) + "\n",
             "results.csv": _csv_text(out.csv_header, out.csv_rows),
             "plot.svg": out.plot, **out.extra}
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (cfg.out_dir / name).write_text(text, encoding="utf-8")
    return record


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distortlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path, help="TOML config file")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = validate_config(args.config.read_text(encoding="utf-8"), args.command)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(["seed: seed must be ≥ 0"])
            cfg.seed = args.seed
        cfg.out_dir = args.out
        record = run(cfg)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 1
    except (DistortLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.command}: {'pass' if record.verdict else 'fail'} "
          f"({record.wall_time:.1f} s) -> {cfg.out_dir}", file=sys.stderr)
    return 0 if record.verdict else 2


if __name__ == "__main__":
    sys.exit(main())
