"""A very small SVG writer for line plots and heatmaps."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_plot", "heatmap"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
_W, _H = 640, 420
_L, _R, _T, _B = 70, 20, 40, 55


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def line_plot(path, series, title: str = "", xlabel: str = "", ylabel: str = "", logy: bool = False) -> None:
    """``series`` is a list of dicts with keys x, y, label and optional dash, color, fill_to."""
    xs = np.concatenate([np.asarray(s["x"], float) for s in series])
    ys = np.concatenate([np.asarray(s["y"], float) for s in series] + [np.asarray(s["fill_to"], float) for s in series if "fill_to" in s])
    if logy:
        ys = np.log10(np.clip(ys, 1e-300, None))
    finite = np.isfinite(ys)
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = (float(np.min(ys[finite])), float(np.max(ys[finite]))) if finite.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0 if y1 > y0 else 1.0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _L - _R, _H - _T - _B

    def X(v):
        return _L + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def Y(v):
        v = np.asarray(v, float)
        if logy:
            v = np.log10(np.clip(v, 1e-300, None))
        return _T + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="12">']
    out.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>')
    out.append(f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for tx in _ticks(x0, x1):
        out.append(f'<text x="{X(tx):.1f}" y="{_T + ph + 16}" text-anchor="middle">{_fmt(tx)}</text>')
    for ty in _ticks(y0, y1):
        label = _fmt(10**ty) if logy else _fmt(ty)
        yy = _T + (1.0 - (ty - y0) / (y1 - y0)) * ph
        out.append(f'<text x="{_L - 6}" y="{yy + 4:.1f}" text-anchor="end">{label}</text>')
    for i, s in enumerate(series):
        color = s.get("color", _COLORS[i % len(_COLORS)])
        x = X(s["x"])
        if "fill_to" in s:
            top = Y(s["y"])
            bot = Y(s["fill_to"])
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(np.r_[x, x[::-1]], np.r_[top, bot[::-1]]))
            out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            continue
        y = Y(s["y"])
        ok = np.isfinite(y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x[ok], y[ok]))
        dash = ' stroke-dasharray="6,4"' if s.get("dash") else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{_W - _R - 4}" y="{_T + 16 + 16 * i}" text-anchor="end" fill="{color}">{escape(str(s.get("label", "")))}</text>')
    out.append(f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<text x="{_L + pw / 2}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_T + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {_T + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def _colormap(t: np.ndarray) -> list[str]:
    # blue -> white -> red
    t = np.clip(t, 0.0, 1.0)
    r = np.where(t < 0.5, 2 * t, 1.0)
    g = np.where(t < 0.5, 2 * t, 2 - 2 * t)
    b = np.where(t < 0.5, 1.0, 2 - 2 * t)
    return [f"#{int(255 * a):02x}{int(255 * c):02x}{int(255 * d):02x}" for a, c, d in zip(r, g, b)]


def heatmap(path, matrix, title: str = "", max_cells: int = 100) -> None:
    """Square heatmap; matrices larger than ``max_cells`` per side are subsampled."""
    A = np.asarray(matrix, float)
    step = max(1, int(np.ceil(max(A.shape) / max_cells)))
    A = A[::step, ::step]
    lo, hi = float(np.min(A)), float(np.max(A))
    span = max(abs(lo), abs(hi)) or 1.0
    colors = _colormap(0.5 + 0.5 * A.ravel() / span)
    size = 400
    cw, ch = size / A.shape[1], size / A.shape[0]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 40}" height="{size + 60}" font-family="sans-serif" font-size="12">']
    out.append(f'<rect x="0" y="0" width="{size + 40}" height="{size + 60}" fill="white"/>')
    out.append(f'<text x="{(size + 40) / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    k = 0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            out.append(f'<rect x="{20 + j * cw:.2f}" y="{35 + i * ch:.2f}" width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="{colors[k]}"/>')
            k += 1
    out.append(f'<text x="20" y="{size + 52}">range [{_fmt(lo)}, {_fmt(hi)}]</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
