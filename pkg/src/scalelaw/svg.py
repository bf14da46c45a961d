"""Minimal standalone SVG charts with logarithmic axes.

Only what the reports need: scatter markers with optional vertical error
bars, polylines, shaded bands, a legend, and decade tick labels. Every number
drawn comes from the data passed in; nothing is refitted here.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#17becf", "#7f7f7f", "#bcbd22", "#393b79", "#637939")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    kind: str = "marker"          # marker | line | band
    yerr_lo: Optional[Sequence[float]] = None
    yerr_hi: Optional[Sequence[float]] = None
    y2: Optional[Sequence[float]] = None   # upper edge for bands
    color: Optional[str] = None
    dashed: bool = False
    marker: str = "circle"


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    logx: bool = True
    logy: bool = True
    width: int = 640
    height: int = 440
    notes: list = field(default_factory=list)

    def add(self, s: Series) -> "Chart":
        self.series.append(s)
        return self


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    e = math.floor(math.log10(abs(v)) + 1e-12)
    m = v / 10 ** e
    if abs(m - 1) < 1e-9:
        return f"1e{e}"
    return f"{m:.2g}e{e}"


class _Axis:
    def __init__(self, lo, hi, log, p0, p1):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            pad = abs(lo) * 0.05 or 0.5
            lo, hi = lo - pad, hi + pad
        span = hi - lo
        self.lo, self.hi = lo - 0.04 * span, hi + 0.04 * span
        self.log, self.p0, self.p1 = log, p0, p1

    def __call__(self, v):
        t = math.log10(v) if self.log else v
        return self.p0 + (t - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)

    def ticks(self):
        if self.log:
            first, last = math.ceil(self.lo), math.floor(self.hi)
            step = max(1, (last - first) // 6 + 1)
            vals = [10.0 ** k for k in range(first, last + 1, step)]
            if len(vals) < 2:
                # less than a decade: label a few mantissas
                vals = [10 ** t for t in _linear_ticks(self.lo, self.hi)]
            return vals
        return _linear_ticks(self.lo, self.hi)


def _linear_ticks(lo, hi, n=5):
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw)) if raw > 0 else 1
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12:
        out.append(round(v, 12))
        v += step
    return out


def _finite_pos(vals, log):
    return [v for v in vals if v is not None and math.isfinite(v) and (v > 0 or not log)]


def render(chart: Chart, deterministic: bool = True) -> str:
    """SVG document text for ``chart``."""
    if not chart.series or not any(len(s.x) for s in chart.series):
        raise ValueError("nothing to plot: empty data table")
    W, H = chart.width, chart.height
    left, right, top, bottom = 78, W - 190, 40, H - 56
    xs, ys = [], []
    for s in chart.series:
        xs += list(s.x)
        ys += list(s.y)
        for extra in (s.y2, s.yerr_lo, s.yerr_hi):
            if extra is not None:
                ys += list(extra)
    xs, ys = _finite_pos(xs, chart.logx), _finite_pos(ys, chart.logy)
    ax = _Axis(min(xs), max(xs), chart.logx, left, right)
    ay = _Axis(min(ys), max(ys), chart.logy, bottom, top)
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if not deterministic:
        out.append(f"<!-- generated {datetime.datetime.now(datetime.timezone.utc).isoformat()} -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
               f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">')
    out.append(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
               f'{escape(chart.title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
               f'fill="none" stroke="#333"/>')
    for v in ax.ticks():
        px = ax(v)
        if left - 1 <= px <= right + 1:
            out.append(f'<line x1="{px:.1f}" y1="{bottom}" x2="{px:.1f}" y2="{bottom + 5}" stroke="#333"/>')
            out.append(f'<text x="{px:.1f}" y="{bottom + 18}" text-anchor="middle">{_tick_label(v)}</text>')
    for v in ay.ticks():
        py = ay(v)
        if top - 1 <= py <= bottom + 1:
            label = _tick_label(v) if chart.logy and abs(math.log10(v) - round(math.log10(v))) < 1e-9 \
                else f"{v:.3g}"
            out.append(f'<line x1="{left - 5}" y1="{py:.1f}" x2="{left}" y2="{py:.1f}" stroke="#333"/>')
            out.append(f'<text x="{left - 8}" y="{py + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{H - 16}" text-anchor="middle">{escape(chart.xlabel)}</text>')
    out.append(f'<text x="18" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {(top + bottom) / 2:.1f})">{escape(chart.ylabel)}</text>')

    legend_y = top + 6
    for i, s in enumerate(chart.series):
        color = s.color or PALETTE[i % len(PALETTE)]
        pts = [(x, y) for x, y in zip(s.x, s.y) if _ok(x, chart.logx) and _ok(y, chart.logy)]
        dash = ' stroke-dasharray="5,4"' if s.dashed else ""
        if s.kind == "band" and s.y2 is not None:
            upper = [(x, y) for x, y in zip(s.x, s.y2) if _ok(x, chart.logx) and _ok(y, chart.logy)]
            poly = " ".join(f"{ax(x):.2f},{ay(y):.2f}" for x, y in pts + upper[::-1])
            out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        elif s.kind == "line" and len(pts) >= 2:
            poly = " ".join(f"{ax(x):.2f},{ay(y):.2f}" for x, y in pts)
            out.append(f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>')
        else:
            for j, (x, y) in enumerate(zip(s.x, s.y)):
                if not (_ok(x, chart.logx) and _ok(y, chart.logy)):
                    continue
                if s.yerr_lo is not None and s.yerr_hi is not None:
                    lo, hi = s.yerr_lo[j], s.yerr_hi[j]
                    if _ok(lo, chart.logy) and _ok(hi, chart.logy):
                        out.append(f'<line x1="{ax(x):.2f}" y1="{ay(lo):.2f}" x2="{ax(x):.2f}" '
                                   f'y2="{ay(hi):.2f}" stroke="{color}" stroke-width="1"/>')
                out.append(_marker(s.marker, ax(x), ay(y), color))
        if s.label:
            ly = legend_y + 16 * i
            out.append(_marker(s.marker, right + 16, ly, color) if s.kind == "marker" else
                       f'<line x1="{right + 8}" y1="{ly}" x2="{right + 24}" y2="{ly}" stroke="{color}" '
                       f'stroke-width="2"{dash}/>')
            out.append(f'<text x="{right + 30}" y="{ly + 4}">{escape(s.label)}</text>')
    ny = legend_y + 16 * len(chart.series) + 10
    for k, note in enumerate(chart.notes):
        out.append(f'<text x="{right + 8}" y="{ny + 15 * k}" class="note">{escape(note)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _ok(v, log):
    return v is not None and math.isfinite(v) and (v > 0 or not log)


def _marker(kind, x, y, color):
    if kind == "star":
        r1, r2 = 6.0, 2.6
        pts = []
        for k in range(10):
            r = r1 if k % 2 == 0 else r2
            ang = -math.pi / 2 + k * math.pi / 5
            pts.append(f"{x + r * math.cos(ang):.2f},{y + r * math.sin(ang):.2f}")
        return f'<polygon points="{" ".join(pts)}" fill="{color}" stroke="black" stroke-width="0.5"/>'
    if kind == "square":
        return f'<rect x="{x - 3.5:.2f}" y="{y - 3.5:.2f}" width="7" height="7" fill="{color}"/>'
    return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="{color}"/>'


FIGURES = ("isoflop", "nstar_fit", "opt_loss", "hparam_fit", "accuracy_vs_compute")


def _span(xs, pad=1.25):
    lo, hi = min(xs), max(xs)
    return list(np.geomspace(lo / pad, hi * pad, 64))


def _isoflop(data) -> Chart:
    ch = Chart("IsoFLOP curves", "model size N", "loss")
    for c in data["curves"]:
        N, L = c["N"], c["loss"]
        sig = c.get("sigma")
        lo = hi = None
        if sig is not None and any(s > 0 for s in sig):
            lo = [l - s for l, s in zip(L, sig)]
            hi = [l + s for l, s in zip(L, sig)]
        ch.add(Series(f"C={c['C']:.3g}", N, L, yerr_lo=lo, yerr_hi=hi))
    opt = data.get("optima") or []
    if opt:
        ch.add(Series("N* estimate", [o["n_star"] for o in opt], [o["loss_star"] for o in opt],
                      marker="star", color="#000000"))
    return ch


def _nstar_fit(data) -> Chart:
    est = [e for e in data["estimates"] if e.get("valid", True)]
    ch = Chart("compute-optimal model size", "compute C (FLOPs)", "N*")
    if not est:
        raise ValueError("nothing to plot: no valid estimates")
    C = [e["C"] for e in est]
    n = [e["n_star"] for e in est]
    sd = [e.get("log_std", float("nan")) for e in est]
    lo = [v * math.exp(-s) if math.isfinite(s) else None for v, s in zip(n, sd)]
    hi = [v * math.exp(s) if math.isfinite(s) else None for v, s in zip(n, sd)]
    has_err = any(v is not None for v in lo)
    ch.add(Series("N* estimates", C, n, yerr_lo=lo if has_err else None, yerr_hi=hi if has_err else None))
    fit = data.get("fit")
    if fit is not None and len(est) >= 2:
        xs = _span(C + ([fit["reference_flops"]] if data.get("extrapolate") else []))
        ys = [fit["N0"] * x ** fit["a"] for x in xs]
        ch.add(Series(f"a = {fit['a_text']}", xs, ys, kind="line"))
    return ch


def _opt_loss(data) -> Chart:
    pts = data["points"]
    C = [p["C"] for p in pts]
    ch = Chart("compute-optimal loss", "compute C (FLOPs)", "loss")
    ch.add(Series("min loss", C, [p["loss"] for p in pts]))
    fit = data.get("fit")
    if fit is not None and len(pts) >= 2:
        xs = _span(C)
        ys = [fit["E"] + fit["L0"] * x ** (-fit["ell"]) for x in xs]
        ch.add(Series(f"E={fit['E']:.3g}, ell={fit['ell']:.3f}", xs, ys, kind="line"))
    return ch


def _hparam_fit(data) -> Chart:
    opt = data["optima"]
    N = [o["N"] for o in opt]
    ch = Chart("optimal hyperparameters", "model size N", "value")
    ch.add(Series("batch size*", N, [o["bs_star"] for o in opt], marker="square"))
    ch.add(Series("learning rate*", N, [o["lr_star"] for o in opt]))
    laws = data.get("laws")
    if laws is not None and len(opt) >= 2:
        xs = _span(N)
        for key, name in (("bs", "batch size"), ("lr", "learning rate")):
            c0, e = laws[key]["coefficient"], laws[key]["exponent"]
            ch.add(Series(f"{name} ~ N^{e:.3f}", xs, [c0 * x ** e for x in xs], kind="line", dashed=True))
    return ch


def _accuracy(data) -> Chart:
    pts = data["points"]
    ch = Chart("exponent vs experiment cost", "cost (FLOPs)", "fitted exponent a", logy=False)
    for name, group in _groups(pts):
        ch.add(Series(name, [p["budget"] for p in group], [p["exponent"] for p in group],
                      yerr_lo=[p["ci_lo"] for p in group], yerr_hi=[p["ci_hi"] for p in group]))
    ref = data.get("reference_exponent")
    if ref is not None:
        xs = [min(p["budget"] for p in pts), max(p["budget"] for p in pts)]
        ch.add(Series(f"reference a = {ref:.3f}", xs, [ref, ref], kind="line", dashed=True))
    return ch


def _groups(pts):
    names = []
    for p in pts:
        if p.get("label", "") not in names:
            names.append(p.get("label", ""))
    return [(n or "fit", [p for p in pts if p.get("label", "") == n]) for n in names]


def emit_svg(figure: str, data: dict, deterministic: bool = True) -> str:
    """SVG text for one of :data:`FIGURES` built from plain data tables."""
    builders = {"isoflop": _isoflop, "nstar_fit": _nstar_fit, "opt_loss": _opt_loss,
                "hparam_fit": _hparam_fit, "accuracy_vs_compute": _accuracy}
    if figure not in builders:
        raise ValueError(f"unknown figure {figure!r}; choose from {FIGURES}")
    return render(builders[figure](data), deterministic)
