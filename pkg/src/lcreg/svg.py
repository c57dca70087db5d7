"""Minimal SVG charts: boxplots, grouped bars and line charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")
W, H = 640, 400
ML, MR, MT, MB = 70, 20, 40, 60


def _scale(lo, hi, a, b):
    if hi == lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _nice_ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= n:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def _frame(title, ylabel, desc, lo, hi):
    y = _scale(lo, hi, H - MB, MT)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f"<desc>{escape(desc)}</desc>",
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
           f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
           f'<text x="16" y="{(H - MB + MT) / 2}" transform="rotate(-90 16 {(H - MB + MT) / 2})" '
           f'text-anchor="middle">{escape(ylabel)}</text>']
    for t in _nice_ticks(lo, hi):
        out.append(f'<line x1="{ML - 4}" y1="{y(t):.1f}" x2="{ML}" y2="{y(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{y(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    return out, y


def _range(values):
    vals = np.concatenate([np.asarray(v, dtype=float).ravel() for v in values]) if values else np.zeros(0)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    return lo - pad, hi + pad


def boxplot(groups: dict, title: str = "", ylabel: str = "", desc: str = "") -> str:
    """Boxes at the quartiles, whiskers at 1.5 IQR, outliers as diamonds."""
    names = list(groups)
    lo, hi = _range([groups[k] for k in names])
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    out, y = _frame(title, ylabel, desc, lo, hi)
    out.append(f'<line x1="{ML}" y1="{y(0):.1f}" x2="{W - MR}" y2="{y(0):.1f}" stroke="#999" stroke-dasharray="4 3"/>')
    slot = (W - ML - MR) / max(len(names), 1)
    for k, name in enumerate(names):
        vals = np.asarray(groups[name], dtype=float)
        vals = vals[np.isfinite(vals)]
        cx = ML + slot * (k + 0.5)
        out.append(f'<text x="{cx:.1f}" y="{H - MB + 18}" text-anchor="middle">{escape(str(name))}</text>')
        if vals.size == 0:
            continue
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        iqr = q3 - q1
        inside = vals[(vals >= q1 - 1.5 * iqr) & (vals <= q3 + 1.5 * iqr)]
        wlo, whi = inside.min(), inside.max()
        bw = slot * 0.4
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<line x1="{cx:.1f}" y1="{y(wlo):.1f}" x2="{cx:.1f}" y2="{y(whi):.1f}" stroke="black"/>')
        out.append(f'<rect x="{cx - bw / 2:.1f}" y="{y(q3):.1f}" width="{bw:.1f}" height="{max(y(q1) - y(q3), 0.5):.1f}" '
                   f'fill="{color}" fill-opacity="0.6" stroke="black"/>')
        out.append(f'<line x1="{cx - bw / 2:.1f}" y1="{y(med):.1f}" x2="{cx + bw / 2:.1f}" y2="{y(med):.1f}" '
                   f'stroke="black" stroke-width="2"/>')
        for v in vals[(vals < wlo) | (vals > whi)]:
            yy = y(v)
            out.append(f'<path d="M{cx:.1f} {yy - 4:.1f} L{cx + 4:.1f} {yy:.1f} L{cx:.1f} {yy + 4:.1f} '
                       f'L{cx - 4:.1f} {yy:.1f} Z" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out)


def bar_chart(categories, series: dict, title: str = "", ylabel: str = "", desc: str = "") -> str:
    """Grouped bars: one group per category, one bar per series."""
    categories = list(categories)
    names = list(series)
    lo, hi = _range([series[k] for k in names])
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    out, y = _frame(title, ylabel, desc, lo, hi)
    slot = (W - ML - MR) / max(len(categories), 1)
    bw = slot * 0.8 / max(len(names), 1)
    for c, cat in enumerate(categories):
        x0 = ML + slot * c + slot * 0.1
        out.append(f'<text x="{ML + slot * (c + 0.5):.1f}" y="{H - MB + 18}" text-anchor="middle">{escape(str(cat))}</text>')
        for s, name in enumerate(names):
            v = float(series[name][c])
            if not math.isfinite(v):
                continue
            top, bot = y(max(v, 0.0)), y(min(v, 0.0))
            out.append(f'<rect x="{x0 + s * bw:.1f}" y="{top:.1f}" width="{bw * 0.9:.1f}" height="{max(bot - top, 0.5):.1f}" '
                       f'fill="{PALETTE[s % len(PALETTE)]}"/>')
    out.extend(_legend(names))
    out.append("</svg>")
    return "\n".join(out)


def line_chart(x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "", desc: str = "") -> str:
    x = np.asarray(x, dtype=float)
    names = list(series)
    lo, hi = _range([series[k] for k in names])
    out, y = _frame(title, ylabel, desc, lo, hi)
    xlo, xhi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    xs = _scale(xlo, xhi, ML + 10, W - MR - 10)
    for t in _nice_ticks(xlo, xhi):
        out.append(f'<text x="{xs(t):.1f}" y="{H - MB + 18}" text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{(ML + W - MR) / 2}" y="{H - 18}" text-anchor="middle">{escape(xlabel)}</text>')
    for s, name in enumerate(names):
        vals = np.asarray(series[name], dtype=float)
        pts = [(xs(a), y(b)) for a, b in zip(x, vals) if math.isfinite(b)]
        color = PALETTE[s % len(PALETTE)]
        if len(pts) > 1:
            d = " ".join(f"{px:.1f},{py:.1f}" for px, py in pts)
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="2"/>')
        for px, py in pts:
            out.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="3" fill="{color}"/>')
    out.extend(_legend(names))
    out.append("</svg>")
    return "\n".join(out)


def _legend(names):
    out = []
    for s, name in enumerate(names):
        yy = MT + 4 + 16 * s
        out.append(f'<rect x="{W - MR - 130}" y="{yy}" width="10" height="10" fill="{PALETTE[s % len(PALETTE)]}"/>')
        out.append(f'<text x="{W - MR - 115}" y="{yy + 9}">{escape(str(name))}</text>')
    return out


def save(path, svg: str) -> None:
    with open(path, "w") as fh:
        fh.write(svg)
