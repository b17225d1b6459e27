"""Minimal SVG writer: line/scatter plots with optional log axes and
reference-slope overlays, and a heat map for grid densities.

Output depends only on the input data (no timestamps), so repeated runs
produce identical files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=20, top=40, bottom=55)


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    style: str = "line"  # "line", "points" or "both"
    dashed: bool = False


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    series: list = field(default_factory=list)

    def add(self, x, y, label="", style="line", dashed=False) -> "Plot":
        self.series.append(Series(list(map(float, x)), list(map(float, y)), label, style, dashed))
        return self

    def add_slope(self, x, y0_at_x0: float, slope: float, label="") -> "Plot":
        """Reference line y = y0 (x/x0)^slope through the first x."""
        x = np.asarray(x, dtype=float)
        y = y0_at_x0 * (x / x[0]) ** slope
        return self.add(x, y, label, "line", dashed=True)

    def to_svg(self) -> str:
        return render(self)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float, log: bool) -> str:
    if log:
        e = int(round(math.log10(v)))
        return f"1e{e}"
    if v == 0:
        return "0"
    return f"{v:.3g}"


def _ticks(lo: float, hi: float, log: bool):
    if log:
        e0, e1 = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        step = max(1, (e1 - e0) // 8)
        return [10.0 ** e for e in range(e0, e1 + 1, step) if lo <= 10.0 ** e <= hi * (1 + 1e-12)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 6
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10)), key=lambda s: abs(s - raw))
    start = math.ceil(lo / step) * step
    n = int(math.floor((hi - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def render(plot: Plot) -> str:
    xs = [v for s in plot.series for v in s.x if _valid(v, plot.logx)]
    ys = [v for s in plot.series for v in s.y if _valid(v, plot.logy)]
    if not xs or not ys:
        xs, ys = [1.0, 10.0], [1.0, 10.0]
    x0, x1 = _range(xs, plot.logx)
    y0, y1 = _range(ys, plot.logy)
    L, R, T, B = MARGIN["left"], MARGIN["right"], MARGIN["top"], MARGIN["bottom"]
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def tx(v):
        a, b, c = (math.log10(v), math.log10(x0), math.log10(x1)) if plot.logx else (v, x0, x1)
        return L + (a - b) / (c - b) * pw

    def ty(v):
        a, b, c = (math.log10(v), math.log10(y0), math.log10(y1)) if plot.logy else (v, y0, y1)
        return T + ph - (a - b) / (c - b) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
    for v in _ticks(x0, x1, plot.logx):
        X = _fmt(tx(v))
        out.append(f'<line x1="{X}" y1="{T + ph}" x2="{X}" y2="{T + ph + 5}" stroke="#333"/>')
        out.append(f'<text x="{X}" y="{T + ph + 18}" text-anchor="middle">'
                   f'{_tick_label(v, plot.logx)}</text>')
    for v in _ticks(y0, y1, plot.logy):
        Y = _fmt(ty(v))
        out.append(f'<line x1="{L - 5}" y1="{Y}" x2="{L}" y2="{Y}" stroke="#333"/>')
        out.append(f'<text x="{L - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">'
                   f'{_tick_label(v, plot.logy)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">'
               f'{escape(plot.title)}</text>')
    out.append(f'<text x="{L + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(plot.xlabel)}</text>')
    out.append(f'<text x="16" y="{T + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {T + ph / 2})">{escape(plot.ylabel)}</text>')
    for k, s in enumerate(plot.series):
        color = PALETTE[k % len(PALETTE)]
        pts = [(tx(a), ty(b)) for a, b in zip(s.x, s.y)
               if _valid(a, plot.logx) and _valid(b, plot.logy)]
        if s.style in ("line", "both") and len(pts) > 1:
            d = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            dash = ' stroke-dasharray="6 4"' if s.dashed else ""
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"{dash}/>')
        if s.style in ("points", "both"):
            for a, b in pts:
                out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{color}"/>')
        if s.label:
            ly = T + 16 + 16 * k
            out.append(f'<line x1="{L + 10}" y1="{ly}" x2="{L + 30}" y2="{ly}" stroke="{color}" '
                       f'stroke-width="2"/>')
            out.append(f'<text x="{L + 36}" y="{ly}" dominant-baseline="middle">'
                       f'{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _valid(v: float, log: bool) -> bool:
    return math.isfinite(v) and (v > 0 if log else True)


def _range(vals, log: bool):
    lo, hi = min(vals), max(vals)
    if log:
        if lo == hi:
            return lo / 10, hi * 10
        return lo, hi
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def heatmap_svg(values: np.ndarray, title: str = "", max_cells: int = 160) -> str:
    """Row 0 of ``values`` is drawn at the bottom; large grids are block
    averaged down to at most ``max_cells`` per side."""
    v = np.asarray(values, dtype=float)
    v = np.where(np.isfinite(v), v, 0.0)
    f = max(1, int(math.ceil(max(v.shape) / max_cells)))
    if f > 1:
        ny, nx = (v.shape[0] // f) * f, (v.shape[1] // f) * f
        v = v[:ny, :nx].reshape(ny // f, f, nx // f, f).mean(axis=(1, 3))
    ny, nx = v.shape
    side = min(WIDTH - 40, HEIGHT - 70)
    cw = side / max(nx, ny)
    top = v.max() if v.max() > 0 else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>']
    x0, y0 = (WIDTH - nx * cw) / 2, 40
    for j in range(ny):
        for i in range(nx):
            t = v[j, i] / top
            if t <= 0:
                continue
            shade = int(round(255 * (1 - t)))
            out.append(f'<rect x="{_fmt(x0 + i * cw)}" y="{_fmt(y0 + (ny - 1 - j) * cw)}" '
                       f'width="{_fmt(cw)}" height="{_fmt(cw)}" '
                       f'fill="rgb({shade},{shade},255)"/>')
    out.append(f'<rect x="{_fmt(x0)}" y="{y0}" width="{_fmt(nx * cw)}" height="{_fmt(ny * cw)}" '
               f'fill="none" stroke="#333"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
