"""Standalone SVG heatmap of success rates over the (alpha, beta) plane."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .metrics import gpm_boundary_beta, sbm_boundary_beta

WIDTH, HEIGHT = 560, 520
MARGIN = dict(left=70, right=20, top=30, bottom=60)


def _edges(values):
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 1:
        return np.array([v[0] - 0.5, v[0] + 0.5])
    mid = 0.5 * (v[1:] + v[:-1])
    return np.concatenate([[v[0] - (mid[0] - v[0])], mid, [v[-1] + (v[-1] - mid[-1])]])


def _polyline(points, color, label):
    if len(points) < 2:
        return ""
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline class="{label}" points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>')


def _trace(alphas, curve, sx, sy, bmin, bmax):
    pts = []
    for a in alphas:
        b = curve(a)
        if b is None or not (bmin <= b <= bmax):
            continue
        pts.append((sx(a), sy(b)))
    return pts


def emit_heatmap(result, K: float, *, overlays: bool = True, samples: int = 200,
                 title: str | None = None) -> str:
    """SVG document: one grayscale cell per grid point (white = always recovered).

    Overlays are the scalar recovery threshold ``sqrt(alpha) - sqrt(beta) = sqrt(K)``
    in blue and the boundary of the sufficient GPM region in red.
    """
    ae = _edges(result.alpha_values)
    be = _edges(result.beta_values)
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(a):
        return x0 + (a - ae[0]) / (ae[-1] - ae[0]) * (x1 - x0)

    def sy(b):
        return y0 + (b - be[0]) / (be[-1] - be[0]) * (y1 - y0)

    rate = np.asarray(result.success_rate, dtype=np.float64)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" '
                   f'font-size="14">{escape(title)}</text>')
    out.append('<g class="cells">')
    for i in range(len(result.alpha_values)):
        for j in range(len(result.beta_values)):
            r = rate[i, j]
            g = 0 if not math.isfinite(r) else int(round(255 * min(max(r, 0.0), 1.0)))
            xa, xb = sx(ae[i]), sx(ae[i + 1])
            ya, yb = sy(be[j + 1]), sy(be[j])
            out.append(f'<rect class="cell" x="{xa:.2f}" y="{ya:.2f}" width="{xb - xa:.2f}" '
                       f'height="{yb - ya:.2f}" fill="rgb({g},{g},{g})"><title>alpha={result.alpha_values[i]:g} '
                       f'beta={result.beta_values[j]:g} rate={r:.3f}</title></rect>')
    out.append("</g>")

    if overlays:
        alphas = np.linspace(max(ae[0], 0.0), ae[-1], samples)
        blue = _trace(alphas, lambda a: sbm_boundary_beta(a, K), sx, sy, be[0], be[-1])
        red = _trace(alphas, lambda a: gpm_boundary_beta(a, K), sx, sy, be[0], be[-1])
        out.append(_polyline(blue, "blue", "sbm-threshold"))
        out.append(_polyline(red, "red", "gpm-boundary"))

    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" '
               f'stroke="black"/>')
    for a in _ticks(ae[0], ae[-1]):
        out.append(f'<line x1="{sx(a):.2f}" y1="{y0}" x2="{sx(a):.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(a):.2f}" y="{y0 + 18}" text-anchor="middle" font-size="11">{a:g}</text>')
    for b in _ticks(be[0], be[-1]):
        out.append(f'<line x1="{x0 - 5}" y1="{sy(b):.2f}" x2="{x0}" y2="{sy(b):.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{sy(b) + 4:.2f}" text-anchor="end" font-size="11">{b:g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" '
               f'font-size="13">alpha</text>')
    out.append(f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">beta</text>')
    out.append("</svg>")
    return "\n".join(s for s in out if s)


def _ticks(lo, hi, target=6):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    return [round(v, 10) for v in np.arange(start, hi + 1e-9 * span, step)]
