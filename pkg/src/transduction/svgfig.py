"""Self-contained SVG emission for simulation results.

Hand-built line plots and heatmaps (plain ``<line>``/``<rect>``/``<text>``
primitives, no external assets or fonts) keep the toolkit
dependency-light. The figures are publication-shaped, not
publication-grade: framed axes, ticks, labels, legend, and a color bar
for heatmaps. Output is deterministic for fixed inputs.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["line_plot", "heatmap"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

# Five-stop approximation of a perceptually uniform colormap.
_CMAP = (
    (0.267, 0.005, 0.329),
    (0.229, 0.322, 0.545),
    (0.128, 0.567, 0.551),
    (0.369, 0.789, 0.383),
    (0.993, 0.906, 0.144),
)

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 84, 96, 40, 64


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


def _color_at(frac: float) -> str:
    frac = min(1.0, max(0.0, frac))
    pos = frac * (len(_CMAP) - 1)
    i = min(int(pos), len(_CMAP) - 2)
    t = pos - i
    rgb = tuple((1 - t) * a + t * b for a, b in zip(_CMAP[i], _CMAP[i + 1]))
    return "#%02x%02x%02x" % tuple(int(round(255 * c)) for c in rgb)


def _linear_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _log_ticks(lo: float, hi: float) -> list[float]:
    lo_e = math.ceil(math.log10(lo) - 1e-12)
    hi_e = math.floor(math.log10(hi) + 1e-12)
    return [10.0 ** e for e in range(lo_e, hi_e + 1)]


class _Scale:
    def __init__(self, lo, hi, px_lo, px_hi, log=False):
        if log:
            if lo <= 0 or hi <= 0:
                raise ValueError("log axis requires positive data")
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            hi = lo + 1.0
        self.lo, self.hi, self.px_lo, self.px_hi, self.log = lo, hi, px_lo, px_hi, log

    def __call__(self, v):
        x = math.log10(v) if self.log else v
        f = (x - self.lo) / (self.hi - self.lo)
        return self.px_lo + f * (self.px_hi - self.px_lo)


def _svg_open(parts, width=_W, height=_H):
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">'
    )
    parts.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')


def _axes(parts, sx, sy, xlabel, ylabel, xlog, ylog, title):
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    parts.append(
        f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
        f'fill="none" stroke="black"/>'
    )
    xticks = _log_ticks(10 ** sx.lo, 10 ** sx.hi) if xlog else _linear_ticks(sx.lo, sx.hi)
    yticks = _log_ticks(10 ** sy.lo, 10 ** sy.hi) if ylog else _linear_ticks(sy.lo, sy.hi)
    for v in xticks:
        px = sx(v)
        parts.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{px:.1f}" y="{y0 + 18}" text-anchor="middle">{_fmt(v)}</text>'
        )
    for v in yticks:
        py = sy(v)
        parts.append(f'<line x1="{x0 - 5}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{py + 4:.1f}" text-anchor="end">{_fmt(v)}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.1f}" y="{_H - 16}" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="20" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {(y0 + y1) / 2:.1f})">{ylabel}</text>'
    )
    if title:
        parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="24" text-anchor="middle">{title}</text>')


def line_plot(x, series: dict[str, np.ndarray], xlabel: str = "", ylabel: str = "",
              xlog: bool = False, ylog: bool = False, title: str = "") -> str:
    """Render one or more y(x) series as a framed SVG line plot."""
    x = np.asarray(x, dtype=float)
    if not series:
        raise ValueError("line_plot needs at least one series")
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    for k, y in ys.items():
        if y.shape != x.shape:
            raise ValueError(f"series {k!r} length {y.shape} != x length {x.shape}")

    finite_y = np.concatenate([y[np.isfinite(y)] for y in ys.values()])
    if ylog:
        finite_y = finite_y[finite_y > 0]
    if finite_y.size == 0:
        raise ValueError("no finite data to plot")
    y_lo, y_hi = float(finite_y.min()), float(finite_y.max())
    if not ylog:
        pad = 0.05 * (y_hi - y_lo or abs(y_hi) or 1.0)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = float(x.min()), float(x.max())

    sx = _Scale(x_lo, x_hi, _ML, _W - _MR, log=xlog)
    sy = _Scale(y_lo, y_hi, _H - _MB, _MT, log=ylog)
    parts: list[str] = []
    _svg_open(parts)
    _axes(parts, sx, sy, xlabel, ylabel, xlog, ylog, title)
    for i, (name, y) in enumerate(ys.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = []
        for xv, yv in zip(x, y):
            if not np.isfinite(yv) or (ylog and yv <= 0) or (xlog and xv <= 0):
                continue
            pts.append(f"{sx(xv):.2f},{sy(yv):.2f}")
        if pts:
            parts.append(
                f'<polyline points="{" ".join(pts)}" fill="none" '
                f'stroke="{color}" stroke-width="1.5"/>'
            )
        ly = _MT + 16 + 16 * i
        lx = _W - _MR + 8
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 22}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def heatmap(x, y, z, xlabel: str = "", ylabel: str = "", zlabel: str = "",
            xlog: bool = False, ylog: bool = False, title: str = "") -> str:
    """Render z[i, j] sampled at (x[i], y[j]) as an SVG heatmap with a
    color-scale legend. NaN cells are hatched grey."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape != (x.size, y.size):
        raise ValueError(f"z shape {z.shape} != (len(x), len(y)) = ({x.size}, {y.size})")

    def edges(centers, log):
        c = np.log10(centers) if log else centers
        if c.size == 1:
            half = 0.5 if not log else 0.15
            e = np.array([c[0] - half, c[0] + half])
        else:
            mid = 0.5 * (c[1:] + c[:-1])
            e = np.concatenate([[c[0] - (mid[0] - c[0])], mid, [c[-1] + (c[-1] - mid[-1])]])
        return 10.0 ** e if log else e

    xe, ye = edges(x, xlog), edges(y, ylog)
    sx = _Scale(float(xe[0]), float(xe[-1]), _ML, _W - _MR, log=xlog)
    sy = _Scale(float(ye[0]), float(ye[-1]), _H - _MB, _MT, log=ylog)

    finite = z[np.isfinite(z)]
    z_lo = float(finite.min()) if finite.size else 0.0
    z_hi = float(finite.max()) if finite.size else 1.0
    span = z_hi - z_lo or 1.0

    parts: list[str] = []
    _svg_open(parts)
    for i in range(x.size):
        for j in range(y.size):
            px0, px1 = sx(xe[i]), sx(xe[i + 1])
            py0, py1 = sy(ye[j]), sy(ye[j + 1])
            xpix, wpix = min(px0, px1), abs(px1 - px0)
            ypix, hpix = min(py0, py1), abs(py1 - py0)
            if np.isfinite(z[i, j]):
                fill = _color_at((z[i, j] - z_lo) / span)
            else:
                fill = "#bbbbbb"
            parts.append(
                f'<rect x="{xpix:.2f}" y="{ypix:.2f}" width="{wpix:.2f}" '
                f'height="{hpix:.2f}" fill="{fill}"/>'
            )
    _axes(parts, sx, sy, xlabel, ylabel, xlog, ylog, title)

    # color bar
    bar_x, bar_w = _W - _MR + 18, 16
    bar_top, bar_bot = _MT, _H - _MB
    n_seg = 24
    for k in range(n_seg):
        f0 = k / n_seg
        f1 = (k + 1) / n_seg
        y0 = bar_bot - f1 * (bar_bot - bar_top)
        parts.append(
            f'<rect x="{bar_x}" y="{y0:.2f}" width="{bar_w}" '
            f'height="{(f1 - f0) * (bar_bot - bar_top):.2f}" fill="{_color_at((f0 + f1) / 2)}"/>'
        )
    parts.append(
        f'<rect x="{bar_x}" y="{bar_top}" width="{bar_w}" height="{bar_bot - bar_top}" '
        f'fill="none" stroke="black"/>'
    )
    parts.append(f'<text x="{bar_x + bar_w + 4}" y="{bar_bot + 4}">{_fmt(z_lo)}</text>')
    parts.append(f'<text x="{bar_x + bar_w + 4}" y="{bar_top + 4}">{_fmt(z_hi)}</text>')
    if zlabel:
        mid_y = (bar_top + bar_bot) / 2
        parts.append(
            f'<text x="{bar_x + bar_w + 28}" y="{mid_y:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 {bar_x + bar_w + 28} {mid_y:.1f})">{zlabel}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
