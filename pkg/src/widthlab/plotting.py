"""Minimal standalone SVG plots of the CSV outputs (no external references)."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

from . import csvio

__all__ = ["plot", "PLOT_KINDS"]

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=70, right=20, top=30, bottom=50)
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]

_REQUIRED = {
    "convergence": {"width", "seed", "mean_dist", "var_dist"},
    "predictive": {"x", "post_mean", "post_var", "prior_mean", "prior_var", "nngp_mean", "nngp_var"},
    "upcrossings": {"model", "width", "bin_lo", "bin_hi", "count"},
}
PLOT_KINDS = tuple(_REQUIRED)


class _Panel:
    """Maps data coordinates into one rectangular region of the canvas."""

    def __init__(self, x0, y0, w, h, xlim, ylim, logx=False, logy=False):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.logx, self.logy = logx, logy
        self.xlim = tuple(map(self._tx, xlim))
        self.ylim = tuple(map(self._ty, ylim))

    def _tx(self, v):
        return math.log10(v) if self.logx else v

    def _ty(self, v):
        return math.log10(v) if self.logy else v

    def px(self, v):
        lo, hi = self.xlim
        return self.x0 + (self._tx(v) - lo) / ((hi - lo) or 1.0) * self.w

    def py(self, v):
        lo, hi = self.ylim
        return self.y0 + self.h - (self._ty(v) - lo) / ((hi - lo) or 1.0) * self.h

    def axes(self, xlabel, ylabel, title=""):
        parts = [
            f'<rect x="{self.x0:.2f}" y="{self.y0:.2f}" width="{self.w:.2f}" height="{self.h:.2f}" '
            'fill="none" stroke="#000" stroke-width="1"/>'
        ]
        for i in range(5):
            fx = self.xlim[0] + i / 4 * (self.xlim[1] - self.xlim[0])
            fy = self.ylim[0] + i / 4 * (self.ylim[1] - self.ylim[0])
            X = self.x0 + i / 4 * self.w
            Y = self.y0 + self.h - i / 4 * self.h
            xt = 10**fx if self.logx else fx
            yt = 10**fy if self.logy else fy
            parts.append(f'<line x1="{X:.2f}" y1="{self.y0 + self.h:.2f}" x2="{X:.2f}" y2="{self.y0 + self.h + 5:.2f}" stroke="#000"/>')
            parts.append(f'<text x="{X:.2f}" y="{self.y0 + self.h + 18:.2f}" font-size="11" text-anchor="middle">{xt:.3g}</text>')
            parts.append(f'<line x1="{self.x0 - 5:.2f}" y1="{Y:.2f}" x2="{self.x0:.2f}" y2="{Y:.2f}" stroke="#000"/>')
            parts.append(f'<text x="{self.x0 - 8:.2f}" y="{Y + 4:.2f}" font-size="11" text-anchor="end">{yt:.3g}</text>')
        parts.append(
            f'<text x="{self.x0 + self.w / 2:.2f}" y="{self.y0 + self.h + 36:.2f}" font-size="12" '
            f'text-anchor="middle">{escape(xlabel)}</text>'
        )
        cy = self.y0 + self.h / 2
        parts.append(
            f'<text x="{self.x0 - 55:.2f}" y="{cy:.2f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 {self.x0 - 55:.2f} {cy:.2f})">{escape(ylabel)}</text>'
        )
        if title:
            parts.append(f'<text x="{self.x0 + self.w / 2:.2f}" y="{self.y0 - 8:.2f}" font-size="13" text-anchor="middle">{escape(title)}</text>')
        return parts

    def polyline(self, xs, ys, color, cls="series", width=1.5):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        return f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'

    def markers(self, xs, ys, color):
        return [
            f'<circle class="marker" cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" r="3.5" fill="{color}"/>'
            for x, y in zip(xs, ys)
        ]

    def band(self, xs, lo, hi, color):
        upper = [f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, hi)]
        lower = [f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(reversed(xs), reversed(lo))]
        return f'<polygon class="band" points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>'


def _document(body) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        '<rect x="0" y="0" width="800" height="500" fill="#fff"/>\n' + "\n".join(body) + "\n</svg>\n"
    )


def _limits(values, pad=0.05, log=False):
    vals = [v for v in values if math.isfinite(v) and (v > 0 or not log)]
    if not vals:
        return (1.0, 10.0) if log else (0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if log:
        if lo == hi:
            return lo / 2, hi * 2
        return lo / (hi / lo) ** pad, hi * (hi / lo) ** pad
    if lo == hi:
        return lo - 1.0, hi + 1.0
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _legend(entries, x, y):
    parts = []
    for i, (label, color) in enumerate(entries):
        yy = y + 16 * i
        parts.append(f'<rect x="{x}" y="{yy - 9}" width="12" height="10" fill="{color}"/>')
        parts.append(f'<text x="{x + 18}" y="{yy}" font-size="11">{escape(label)}</text>')
    return parts


def _floats(col):
    return [float(v) for v in col]


def _plot_convergence(table):
    series = defaultdict(list)
    for w, s, m, v in zip(table["width"], table["seed"], table["mean_dist"], table["var_dist"]):
        series[s].append((int(w), float(m), float(v)))
    widths = [int(w) for w in table["width"]]
    body = []
    h = (HEIGHT - MARGIN["top"] - MARGIN["bottom"] - 40) / 2
    w = WIDTH - MARGIN["left"] - MARGIN["right"] - 90
    xlim = _limits(widths, log=True) if widths else (100.0, 10000.0)
    for row, (idx, label) in enumerate(((1, "mean distance"), (2, "variance distance"))):
        vals = [p[idx] for pts in series.values() for p in pts]
        logy = bool(vals) and all(v > 0 for v in vals)
        panel = _Panel(MARGIN["left"], MARGIN["top"] + row * (h + 40), w, h, xlim, _limits(vals, log=logy), logx=True, logy=logy)
        body += panel.axes("width" if row else "", label)
        for i, (seed, pts) in enumerate(sorted(series.items(), key=lambda kv: int(kv[0]))):
            pts = sorted(pts)
            good = [p for p in pts if math.isfinite(p[idx]) and (p[idx] > 0 or not logy)]
            color = COLORS[i % len(COLORS)]
            if len(good) > 1:
                body.append(panel.polyline([p[0] for p in good], [p[idx] for p in good], color))
            body += panel.markers([p[0] for p in good], [p[idx] for p in good], color)
    body += _legend([(f"seed {s}", COLORS[i % len(COLORS)]) for i, s in enumerate(sorted(series, key=int))], WIDTH - 100, MARGIN["top"] + 10)
    return body


def _plot_predictive(table):
    xs = _floats(table["x"])
    groups = [("post", "MFVI posterior"), ("prior", "prior"), ("nngp", "NNGP posterior")]
    lo_all, hi_all, bands = [], [], []
    for key, _ in groups:
        m = _floats(table[f"{key}_mean"])
        sd = [math.sqrt(max(v, 0.0)) for v in _floats(table[f"{key}_var"])]
        lo = [a - b for a, b in zip(m, sd)]
        hi = [a + b for a, b in zip(m, sd)]
        lo_all += lo
        hi_all += hi
        bands.append((m, lo, hi))
    ylim = (min(lo_all), max(hi_all)) if xs else (0.0, 1.0)
    if ylim[0] == ylim[1]:
        ylim = (ylim[0] - 1.0, ylim[1] + 1.0)
    panel = _Panel(MARGIN["left"], MARGIN["top"], WIDTH - MARGIN["left"] - MARGIN["right"] - 120,
                   HEIGHT - MARGIN["top"] - MARGIN["bottom"], _limits(xs, pad=0.0), ylim)
    body = panel.axes("x", "f(x)")
    for i, (m, lo, hi) in enumerate(bands):
        if xs:
            body.append(panel.band(xs, lo, hi, COLORS[i]))
            body.append(panel.polyline(xs, m, COLORS[i], cls="mean"))
    body += _legend([(label, COLORS[i]) for i, (_, label) in enumerate(groups)], WIDTH - 130, MARGIN["top"] + 10)
    return body


def _plot_upcrossings(table):
    groups = defaultdict(list)
    for model, width, lo, hi, c in zip(table["model"], table["width"], table["bin_lo"], table["bin_hi"], table["count"]):
        label = "NNGP" if model == "nngp" else f"K={width}"
        groups[label].append((float(lo), float(hi), int(c)))
    lows = [p[0] for g in groups.values() for p in g]
    highs = [p[1] for g in groups.values() for p in g]
    counts = [p[2] for g in groups.values() for p in g]
    xlim = (min(lows), max(highs)) if lows else (0.0, 1.0)
    panel = _Panel(MARGIN["left"], MARGIN["top"], WIDTH - MARGIN["left"] - MARGIN["right"] - 100,
                   HEIGHT - MARGIN["top"] - MARGIN["bottom"], xlim, (0.0, max(counts + [1]) * 1.05))
    body = panel.axes("x", "upcrossings")
    n = max(len(groups), 1)
    for i, (label, bins) in enumerate(groups.items()):
        for lo, hi, c in bins:
            step = (hi - lo) / n
            x0 = panel.px(lo + i * step)
            x1 = panel.px(lo + (i + 1) * step)
            y = panel.py(c)
            body.append(
                f'<rect class="bar" x="{x0:.2f}" y="{y:.2f}" width="{max(x1 - x0, 0.5):.2f}" '
                f'height="{panel.py(0.0) - y:.2f}" fill="{COLORS[i % len(COLORS)]}"/>'
            )
    body += _legend([(label, COLORS[i % len(COLORS)]) for i, label in enumerate(groups)], WIDTH - 110, MARGIN["top"] + 10)
    return body


_PLOTTERS = {
    "convergence": _plot_convergence,
    "predictive": _plot_predictive,
    "upcrossings": _plot_upcrossings,
}


def plot(csv_path, plot_kind: str, svg_path=None) -> Path:
    """Render ``csv_path`` as ``plot_kind`` and write an SVG next to it (or to ``svg_path``)."""
    if plot_kind not in _PLOTTERS:
        raise ValueError(f"unknown plot kind {plot_kind!r}; choose from {', '.join(PLOT_KINDS)}")
    table = csvio.read_table(csv_path)
    missing = _REQUIRED[plot_kind] - set(table)
    if missing:
        raise ValueError(f"{csv_path}: missing columns for {plot_kind} plot: {', '.join(sorted(missing))}")
    svg = _document(_PLOTTERS[plot_kind](table))
    out = Path(svg_path) if svg_path else Path(csv_path).with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    return out
