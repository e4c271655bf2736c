"""Reward curves as a self-contained, byte-deterministic SVG document."""
from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

import numpy as np

from .rewardlog import RewardLog

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 150, 20, 45
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class PlotError(ValueError):
    pass


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    r = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise PlotError("smoothing window must be >= 1")
    if r.size == 0:
        return r
    csum = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, r.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9)
    last = math.floor(hi / step + 1e-9)
    return [round(k * step, 10) for k in range(first, last + 1)]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _label(v: float) -> str:
    return f"{v:g}"


def plot_curves(logs: dict[str, RewardLog], smoothing: int = 10, path=None,
                title: str = "Total reward per episode") -> str:
    """Render one smoothed polyline per named log; write to ``path`` if given."""
    if not logs:
        raise PlotError("nothing to plot: no logs given")
    series = {}
    for name, lg in logs.items():
        rewards = lg.rewards if isinstance(lg, RewardLog) else np.asarray(lg, dtype=np.float64)
        if rewards.size == 0:
            raise PlotError(f"log {name!r} is empty")
        series[name] = smooth(rewards, smoothing)
    n_max = max(len(s) for s in series.values())
    y_lo = min(float(s.min()) for s in series.values())
    y_hi = max(float(s.max()) for s in series.values())
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = 1.0, float(max(n_max, 2))
    pw, ph = WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return MARGIN_T + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<g class="axes" stroke="black" fill="none">',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + ph}" x2="{MARGIN_L + pw}" y2="{MARGIN_T + ph}"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{MARGIN_T + ph}"/>',
        "</g>",
    ]
    ticks = ['<g class="ticks">']
    for t in nice_ticks(x_lo, x_hi):
        x = _fmt(sx(t))
        ticks.append(f'<line x1="{x}" y1="{MARGIN_T + ph}" x2="{x}" y2="{MARGIN_T + ph + 4}" stroke="black"/>')
        ticks.append(f'<text x="{x}" y="{MARGIN_T + ph + 16}" text-anchor="middle">{_label(t)}</text>')
    for t in nice_ticks(y_lo, y_hi):
        y = _fmt(sy(t))
        ticks.append(f'<line x1="{MARGIN_L - 4}" y1="{y}" x2="{MARGIN_L}" y2="{y}" stroke="black"/>')
        ticks.append(f'<text x="{MARGIN_L - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">{_label(t)}</text>')
    ticks.append("</g>")
    out += ticks
    out.append(f'<text x="{MARGIN_L + pw / 2:g}" y="{HEIGHT - 8}" text-anchor="middle">episode</text>')
    out.append(f'<text x="14" y="{MARGIN_T + ph / 2:g}" text-anchor="middle" '
               f'transform="rotate(-90 14 {MARGIN_T + ph / 2:g})">total reward (smoothed, window {smoothing})</text>')
    legend = ['<g class="legend">']
    for i, (name, s) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        xs = np.arange(1, len(s) + 1, dtype=np.float64)
        if len(s) == 1:
            xs, s = np.array([x_lo, x_hi]), np.repeat(s, 2)
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, s))
        out.append(f'<polyline class="curve" data-name="{escape(name, {chr(34): "&quot;"})}" '
                   f'fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN_T + 10 + 18 * i
        lx = MARGIN_L + pw + 12
        legend.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        legend.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(name)}</text>')
    legend.append("</g>")
    out += legend
    out.append("</svg>")
    doc = "\n".join(out) + "\n"
    if path is not None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(doc)
        os.replace(tmp, path)
    return doc
