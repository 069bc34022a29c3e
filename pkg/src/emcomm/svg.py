"""Dependency-free SVG charts: scatter, heatmap, line.

Every emitter renders a standalone SVG string deterministically from
its inputs (fixed palette, fixed float formatting) and writes files
atomically, so repeated runs produce byte-identical artifacts.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import UsageError
from .fsio import atomic_write_text

PALETTE = ("#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
           "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0")

WIDTH = 640
HEIGHT = 480
MARGIN = {"left": 62, "right": 24, "top": 34, "bottom": 46}


def _fmt(x) -> str:
    s = f"{float(x):.2f}"
    return "0.00" if s == "-0.00" else s


def _esc(text) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def color_for(i) -> str:
    return PALETTE[int(i) % len(PALETTE)]


def _nice_ticks(lo, hi, n=5):
    """Round tick positions covering [lo, hi]."""
    if not math.isfinite(lo) or not math.isfinite(hi):
        raise UsageError("axis limits must be finite")
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 else t)
        t += step
    return ticks


class _Canvas:
    def __init__(self, title, xlabel="", ylabel=""):
        self.parts = []
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel

    def add(self, element):
        self.parts.append(element)

    def frame_and_axes(self, xlim, ylim):
        l, r = MARGIN["left"], WIDTH - MARGIN["right"]
        t, b = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        self.to_x = lambda v: l + (v - xlim[0]) / (xlim[1] - xlim[0]) * (r - l)
        self.to_y = lambda v: b - (v - ylim[0]) / (ylim[1] - ylim[0]) * (b - t)
        self.add(f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" '
                 f'fill="none" stroke="#888" stroke-width="1"/>')
        for v in _nice_ticks(*xlim):
            if xlim[0] <= v <= xlim[1]:
                x = _fmt(self.to_x(v))
                self.add(f'<line x1="{x}" y1="{b}" x2="{x}" y2="{b + 4}" stroke="#888"/>')
                self.add(f'<text x="{x}" y="{b + 17}" font-size="11" '
                         f'text-anchor="middle" fill="#444">{_fmt(v)}</text>')
        for v in _nice_ticks(*ylim):
            if ylim[0] <= v <= ylim[1]:
                y = _fmt(self.to_y(v))
                self.add(f'<line x1="{l - 4}" y1="{y}" x2="{l}" y2="{y}" stroke="#888"/>')
                self.add(f'<text x="{l - 7}" y="{y}" font-size="11" text-anchor="end" '
                         f'dominant-baseline="middle" fill="#444">{_fmt(v)}</text>')

    def legend(self, entries, swatch="rect"):
        """entries: list of (label, color); drawn inside the top-right corner."""
        x = WIDTH - MARGIN["right"] - 150
        y = MARGIN["top"] + 10
        h = 16 * len(entries) + 8
        self.add(f'<rect x="{x}" y="{y}" width="142" height="{h}" fill="#ffffff" '
                 f'fill-opacity="0.85" stroke="#bbb"/>')
        for i, (label, color) in enumerate(entries):
            cy = y + 16 * i + 14
            if swatch == "line":
                self.add(f'<line x1="{x + 8}" y1="{cy - 4}" x2="{x + 24}" y2="{cy - 4}" '
                         f'stroke="{color}" stroke-width="2"/>')
            else:
                self.add(f'<rect x="{x + 8}" y="{cy - 10}" width="10" height="10" '
                         f'fill="{color}"/>')
            self.add(f'<text x="{x + 30}" y="{cy}" font-size="11" '
                     f'fill="#222">{_esc(label)}</text>')

    def render(self) -> str:
        head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
                f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
                f'font-family="Helvetica, Arial, sans-serif">',
                f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
                f'<text x="{WIDTH // 2}" y="20" font-size="14" text-anchor="middle" '
                f'fill="#111">{_esc(self.title)}</text>']
        if self.xlabel:
            head.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 10}" font-size="12" '
                        f'text-anchor="middle" fill="#333">{_esc(self.xlabel)}</text>')
        if self.ylabel:
            y = HEIGHT // 2
            head.append(f'<text x="16" y="{y}" font-size="12" text-anchor="middle" '
                        f'fill="#333" transform="rotate(-90 16 {y})">'
                        f'{_esc(self.ylabel)}</text>')
        return "\n".join(head + self.parts + ["</svg>"]) + "\n"


def _limits(values, pad=0.06):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise UsageError("no finite values to plot")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - pad * span, hi + pad * span


def scatter_svg(coords, labels, label_names=None, title="", xlabel="", ylabel="") -> str:
    """2D scatter colored by integer label, with a legend."""
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise UsageError("coords must be (n, 2)")
    if len(labels) != len(coords):
        raise UsageError("labels length must match coords")
    uniq = sorted(set(labels.tolist()))
    if label_names is None:
        label_names = {u: str(u) for u in uniq}
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.frame_and_axes(_limits(coords[:, 0]), _limits(coords[:, 1]))
    for i, u in enumerate(uniq):
        color = color_for(i)
        for x, y in coords[labels == u]:
            canvas.add(f'<circle cx="{_fmt(canvas.to_x(x))}" cy="{_fmt(canvas.to_y(y))}" '
                       f'r="3" fill="{color}" fill-opacity="0.75"/>')
    canvas.legend([(label_names[u], color_for(i)) for i, u in enumerate(uniq)])
    return canvas.render()


def _heat_color(v):
    """-1 -> blue, 0 -> white, +1 -> red."""
    v = min(1.0, max(-1.0, float(v)))
    if v >= 0:
        g = int(round(255 * (1 - v)))
        return f"#ff{g:02x}{g:02x}"
    g = int(round(255 * (1 + v)))
    return f"#{g:02x}{g:02x}ff"


def heatmap_svg(matrix, row_labels, col_labels, title="", vmin=-1.0, vmax=1.0) -> str:
    """Annotated cell grid; values mapped onto a blue-white-red ramp."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise UsageError("matrix must be 2D")
    if m.shape != (len(row_labels), len(col_labels)):
        raise UsageError("label counts must match the matrix shape")
    l, t = MARGIN["left"] + 30, MARGIN["top"] + 16
    gw = WIDTH - l - MARGIN["right"]
    gh = HEIGHT - t - MARGIN["bottom"]
    cw, ch = gw / m.shape[1], gh / m.shape[0]
    canvas = _Canvas(title)
    span = vmax - vmin
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            x, y = l + j * cw, t + i * ch
            v = m[i, j]
            if np.isfinite(v):
                fill = _heat_color(2 * (v - vmin) / span - 1)
                text = _fmt(v)
            else:
                fill, text = "#dddddd", "n/a"
            canvas.add(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cw)}" '
                       f'height="{_fmt(ch)}" fill="{fill}" stroke="#999"/>')
            canvas.add(f'<text x="{_fmt(x + cw / 2)}" y="{_fmt(y + ch / 2)}" '
                       f'font-size="11" text-anchor="middle" '
                       f'dominant-baseline="middle" fill="#111">{text}</text>')
    for i, lab in enumerate(row_labels):
        canvas.add(f'<text x="{l - 6}" y="{_fmt(t + (i + 0.5) * ch)}" font-size="11" '
                   f'text-anchor="end" dominant-baseline="middle" '
                   f'fill="#333">{_esc(lab)}</text>')
    for j, lab in enumerate(col_labels):
        canvas.add(f'<text x="{_fmt(l + (j + 0.5) * cw)}" y="{t - 6}" font-size="11" '
                   f'text-anchor="middle" fill="#333">{_esc(lab)}</text>')
    return canvas.render()


def line_svg(x, series, title="", xlabel="", ylabel="") -> str:
    """Line chart; series maps name -> y values aligned with x."""
    x = np.asarray(x, dtype=float)
    if not series:
        raise UsageError("series must not be empty")
    ys = []
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        if len(y) != len(x):
            raise UsageError(f"series {name!r} length does not match x")
        ys.append(y)
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.frame_and_axes(_limits(x), _limits(np.concatenate(ys)))
    names = list(series)
    for i, name in enumerate(names):
        y = np.asarray(series[name], dtype=float)
        keep = np.isfinite(y)
        pts = " ".join(f"{_fmt(canvas.to_x(a))},{_fmt(canvas.to_y(b))}"
                       for a, b in zip(x[keep], y[keep]))
        canvas.add(f'<polyline points="{pts}" fill="none" '
                   f'stroke="{color_for(i)}" stroke-width="2"/>')
        for a, b in zip(x[keep], y[keep]):
            canvas.add(f'<circle cx="{_fmt(canvas.to_x(a))}" '
                       f'cy="{_fmt(canvas.to_y(b))}" r="2.5" fill="{color_for(i)}"/>')
    canvas.legend([(n, color_for(i)) for i, n in enumerate(names)], swatch="line")
    return canvas.render()


def write_svg(path, content) -> None:
    atomic_write_text(path, content)
