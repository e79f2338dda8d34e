"""A small self-contained SVG line plotter (axes, log scales, error bars)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    yerr: np.ndarray | None = None
    markers: bool = False


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**e for e in range(a, b + 1) if lo <= 10.0**e <= hi] or [lo, hi]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / 5)) if span > 0 else 1.0
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 1e-9, step))


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.0e}"
    return f"{v:.4g}"


def line_plot(series, title="", xlabel="", ylabel="", logx=False, logy=False, width=640, height=420) -> str:
    """Render ``series`` (list of :class:`Series`) to an SVG document string."""
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = [np.asarray(s.y, float) for s in series]
    lows = [y - (s.yerr if s.yerr is not None else 0) for s, y in zip(series, ys)]
    highs = [y + (s.yerr if s.yerr is not None else 0) for s, y in zip(series, ys)]
    ylo, yhi = float(np.min(np.concatenate(lows))), float(np.max(np.concatenate(highs)))
    xlo, xhi = float(xs.min()), float(xs.max())
    if logy:
        pos = np.concatenate(ys)
        ylo = float(np.min(pos[pos > 0])) / 1.2
        yhi *= 1.2
    if yhi == ylo:
        yhi, ylo = yhi + 1, ylo - 1
    if xhi == xlo:
        xhi, xlo = xhi + 1, xlo - 1

    def tx(v):
        v = np.asarray(v, float)
        if logx:
            return ml + pw * (np.log10(v) - math.log10(xlo)) / (math.log10(xhi) - math.log10(xlo))
        return ml + pw * (v - xlo) / (xhi - xlo)

    def ty(v):
        v = np.asarray(v, float)
        if logy:
            v = np.maximum(v, ylo)
            return mt + ph * (1 - (np.log10(v) - math.log10(ylo)) / (math.log10(yhi) - math.log10(ylo)))
        return mt + ph * (1 - (v - ylo) / (yhi - ylo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {mt + ph / 2})">{escape(ylabel)}</text>',
    ]
    for v in _ticks(xlo, xhi, logx):
        X = float(tx(v))
        out.append(f'<line x1="{X:.1f}" y1="{mt + ph}" x2="{X:.1f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{mt + ph + 18}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(ylo, yhi, logy):
        Y = float(ty(v))
        out.append(f'<line x1="{ml - 5}" y1="{Y:.1f}" x2="{ml}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{Y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    for k, s in enumerate(series):
        c = PALETTE[k % len(PALETTE)]
        X, Y = tx(s.x), ty(s.y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(X, Y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        if s.markers:
            out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{c}"/>' for a, b in zip(X, Y))
        if s.yerr is not None:
            lo, hi = ty(np.asarray(s.y) - s.yerr), ty(np.asarray(s.y) + s.yerr)
            out.extend(
                f'<line x1="{a:.2f}" y1="{l:.2f}" x2="{a:.2f}" y2="{h:.2f}" stroke="{c}"/>'
                for a, l, h in zip(X, lo, hi)
            )
        if s.label:
            ly = mt + 15 + 15 * k
            out.append(f'<line x1="{ml + pw - 120}" y1="{ly - 4}" x2="{ml + pw - 100}" y2="{ly - 4}" stroke="{c}" stroke-width="2"/>')
            out.append(f'<text x="{ml + pw - 95}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
