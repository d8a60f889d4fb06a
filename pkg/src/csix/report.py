"""Static SVG figures: class-coloured scatterplots, relevance heatmaps and manipulation curves.

Output is plain SVG 1.1 text built from fixed-precision numbers, so identical
inputs always give byte-identical documents.
"""

from __future__ import annotations

import colorsys
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

# Diverging relevance scale: blue (-1), cyan, white (0), yellow, red (+1).
_ANCHORS = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
_ANCHOR_RGB = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [255, 255, 255],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)

_FONT = 'font-family="sans-serif" font-size="11"'


def _f(v: float) -> str:
    return f"{v:.2f}"


def _hex(rgb) -> str:
    r, g, b = (int(round(min(max(c, 0.0), 255.0))) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def relevance_color(v: float) -> str:
    """Colour of a normalised relevance value; inputs outside [-1, 1] are clipped."""
    v = float(np.clip(v, -1.0, 1.0))
    rgb = [np.interp(v, _ANCHORS, _ANCHOR_RGB[:, c]) for c in range(3)]
    return _hex(rgb)


def class_color(c: int, M: int, dark: bool = True) -> str:
    """One hue per class; ``dark`` picks the stronger of the two shades."""
    hue = ((c - 1) % max(M, 1)) / max(M, 1)
    light = 0.38 if dark else 0.78
    sat = 0.75 if dark else 0.55
    return _hex(np.array(colorsys.hls_to_rgb(hue, light, sat)) * 255)


class _Doc:
    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, anchor="start", extra="") -> None:
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" {_FONT}{extra}>{escape(s)}</text>')

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{self.width}" height="{self.height}" viewBox="0 0 {self.width} {self.height}">'
        )
        body = [f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>']
        return "\n".join([head, *body, *self.parts, "</svg>"]) + "\n"


def _span(lo: float, hi: float) -> tuple[float, float]:
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("coordinates must be finite")
    if hi - lo < 1e-12:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def render_scatter(embedding, highlight: str = "train", silhouette: float | None = None,
                   title: str = "") -> str:
    """Scatterplot with the highlighted split drawn darker and on top of the other split."""
    pts = np.asarray(embedding.points, dtype=np.float64)
    labels = np.asarray(embedding.labels)
    split = list(embedding.split)
    if pts.shape[0] == 0:
        raise ValueError("empty embedding")
    classes = sorted(int(c) for c in np.unique(labels))
    M = max(classes)
    W, H, plot = 660, 520, 460
    doc = _Doc(W, H)
    x0, y0 = 30.0, 40.0
    xlo, xhi = _span(pts[:, 0].min(), pts[:, 0].max())
    ylo, yhi = _span(pts[:, 1].min(), pts[:, 1].max())
    if title:
        doc.text(W / 2, 22, title, "middle")
    doc.add(f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{plot}" height="{plot}" fill="none" stroke="#999999"/>')

    def px(p):
        return (x0 + (p[0] - xlo) / (xhi - xlo) * plot, y0 + plot - (p[1] - ylo) / (yhi - ylo) * plot)

    hl = np.array([s == highlight for s in split])
    for group, dark in ((~hl, False), (hl, True)):
        for i in np.flatnonzero(group):
            cx, cy = px(pts[i])
            col = class_color(int(labels[i]), M, dark)
            doc.add(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="2.5" fill="{col}" '
                    f'data-label="{int(labels[i])}" data-split={quoteattr(split[i])}/>')
    lx = x0 + plot + 20
    doc.text(lx, y0 + 4, f"{highlight} highlighted")
    for k, c in enumerate(classes):
        y = y0 + 22 + 16 * k
        doc.add(f'<rect x="{_f(lx)}" y="{_f(y - 8)}" width="10" height="10" fill="{class_color(c, M, True)}"/>')
        doc.add(f'<rect x="{_f(lx + 12)}" y="{_f(y - 8)}" width="10" height="10" fill="{class_color(c, M, False)}"/>')
        doc.text(lx + 28, y, f"p{c}")
    if silhouette is not None:
        y = y0 + 30 + 16 * len(classes)
        doc.text(lx, y, f"silhouette ({highlight}): {silhouette:.2f}", extra=' class="silhouette"')
    return doc.render()


def render_heatmap(X, H, pair: tuple, title: str = "") -> str:
    """CSI amplitude curves of the given samples over a per-channel relevance strip.

    Every sample contributes one polyline and one strip row of K cells, so a
    class is shown as an overlay of per-sample scores rather than an average.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Hm = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if X.shape != Hm.shape:
        raise ValueError("amplitudes and relevance scores must have the same shape")
    N, K = X.shape
    n, m = pair
    doc = _Doc(720, 360 + 6 * N)
    _heatmap_panel(doc, X, Hm, 50.0, 40.0, 640.0, 240.0, first_channel=1)
    doc.text(360, 22, title or f"relevance p{n} -> p{m}", "middle")
    _colorbar(doc, 50.0, 300.0 + 6 * N + 20)
    return doc.render()


def _heatmap_panel(doc: _Doc, X, Hm, x0, y0, w, h, first_channel=1, label_every=None):
    N, K = X.shape
    top = max(float(X.max()), 1e-12)
    dx = w / K
    doc.add(f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(w)}" height="{_f(h)}" fill="none" stroke="#999999"/>')
    for row in X:
        pts = " ".join(f"{_f(x0 + (k + 0.5) * dx)},{_f(y0 + h - row[k] / top * h)}" for k in range(K))
        doc.add(f'<polyline points="{pts}" fill="none" stroke="#333333" stroke-opacity="0.35" stroke-width="1"/>')
    sy = y0 + h + 8
    for i, hrow in enumerate(Hm):
        for k in range(K):
            doc.add(f'<rect class="cell" x="{_f(x0 + k * dx)}" y="{_f(sy + 6 * i)}" width="{_f(dx)}" '
                    f'height="6" fill="{relevance_color(hrow[k])}"/>')
    step = label_every or max(1, K // 6)
    for k in range(0, K, step):
        doc.text(x0 + (k + 0.5) * dx, sy + 6 * N + 14, str(first_channel + k), "middle")


def _colorbar(doc: _Doc, x0, y0, width=200.0):
    cells = 21
    for i in range(cells):
        v = -1.0 + 2.0 * i / (cells - 1)
        doc.add(f'<rect x="{_f(x0 + i * width / cells)}" y="{_f(y0)}" width="{_f(width / cells)}" '
                f'height="8" fill="{relevance_color(v)}"/>')
    doc.text(x0, y0 + 20, "-1")
    doc.text(x0 + width / 2, y0 + 20, "0", "middle")
    doc.text(x0 + width, y0 + 20, "+1", "end")


def render_subcarrier_heatmaps(X, H, pair: tuple, S: int, A: int, title: str = "") -> str:
    """One panel per antenna pair, each showing that pair's S subcarrier channels."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Hm = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if X.shape != Hm.shape or X.shape[1] != S * A:
        raise ValueError(f"expected {S * A} channels per sample")
    N = X.shape[0]
    n, m = pair
    panel_h = 160.0 + 6 * N
    doc = _Doc(720, int(60 + A * (panel_h + 40) + 40))
    doc.text(360, 22, title or f"relevance p{n} -> p{m} by antenna pair", "middle")
    for a in range(A):
        y0 = 50 + a * (panel_h + 40)
        cols = slice(a * S, (a + 1) * S)
        doc.text(50, y0 - 4, f"antenna pair {a + 1}", extra=' class="panel"')
        _heatmap_panel(doc, X[:, cols], Hm[:, cols], 50.0, y0, 640.0, 120.0, first_channel=1, label_every=5)
    _colorbar(doc, 50.0, 50 + A * (panel_h + 40))
    return doc.render()


def _num(v: float) -> str:
    return f"{v:.17g}"


def render_curve(curves, title: str = "") -> str:
    """Percentage classified as the true and as the target class against manipulation step t.

    Each series carries its exact percentages in a ``data-y`` attribute so
    the plotted values can be checked against the CSV export.
    """
    if not curves:
        raise ValueError("no curves to plot")
    T = int(curves[0].t[-1])
    if any(int(c.t[-1]) != T for c in curves):
        raise ValueError("curves must share the same number of steps")
    W, Hh = 640, 420
    x0, y0, w, h = 60.0, 40.0, 400.0, 320.0
    doc = _Doc(W, Hh)
    if title:
        doc.text(W / 2, 22, title, "middle")
    doc.add(f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(w)}" height="{_f(h)}" fill="none" stroke="#999999"/>')
    for pct in range(0, 101, 20):
        y = y0 + h - pct / 100 * h
        doc.add(f'<line x1="{_f(x0 - 4)}" y1="{_f(y)}" x2="{_f(x0)}" y2="{_f(y)}" stroke="#999999"/>')
        doc.text(x0 - 8, y + 4, f"{pct}%", "end")
    for k in range(5):
        t = T * k / 4
        x = x0 + (t / T * w if T else 0.0)
        doc.text(x, y0 + h + 16, f"{t:g}", "middle")
    doc.text(x0 + w / 2, y0 + h + 32, "channels manipulated (t)", "middle")
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
    ly = y0 + 8
    for idx, curve in enumerate(curves):
        col = palette[idx % len(palette)]
        n, m = curve.pair
        series = [("true", curve.frac_true, "", f"{curve.label}: as p{n}")]
        if m != n:
            series.append(("target", curve.frac_target, ' stroke-dasharray="5,3"', f"{curve.label}: as p{m}"))
        for name, frac, dash, text in series:
            pct = 100.0 * np.asarray(frac, dtype=np.float64)
            tt = np.asarray(curve.t, dtype=np.float64)
            pts = " ".join(
                f"{_f(x0 + (ti / T * w if T else 0.0))},{_f(y0 + h - p / 100 * h)}" for ti, p in zip(tt, pct)
            )
            data = " ".join(_num(p) for p in pct)
            doc.add(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"{dash} '
                    f'data-series="{name}" data-y="{data}"/>')
            doc.add(f'<line x1="{_f(x0 + w + 12)}" y1="{_f(ly)}" x2="{_f(x0 + w + 30)}" y2="{_f(ly)}" '
                    f'stroke="{col}" stroke-width="1.5"{dash}/>')
            doc.text(x0 + w + 34, ly + 4, text)
            ly += 16
    return doc.render()


def write_svg(svg: str, path) -> None:
    Path(path).write_text(svg, encoding="utf-8")
