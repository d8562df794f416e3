"""Dependency-free SVG rendering of experiment CSVs."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .io import read_csv

W, H = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        if b - a < 2:
            return list(np.geomspace(lo, hi, 4))
        return [10.0**k for k in range(a, b + 1)]
    return list(np.linspace(lo, hi, 5))


def _fmt(v):
    return f"{v:.3g}"


def line_chart(series: dict, path, *, title="", xlabel="", ylabel="", logx=False, logy=False) -> Path:
    """Write ``{label: (xs, ys)}`` as an SVG line chart; non-finite or non-positive-on-log points are dropped."""
    clean = {}
    for label, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        if pts:
            clean[label] = sorted(pts)
    allx = [p[0] for pts in clean.values() for p in pts] or [0.0, 1.0]
    ally = [p[1] for pts in clean.values() for p in pts] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x0 == x1:
        x0, x1 = (x0 / 2, x0 * 2) if logx else (x0 - 1, x1 + 1)
    if y0 == y1:
        y0, y1 = (y0 / 2, y0 * 2) if logy else (y0 - 1, y1 + 1)
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    fy = (lambda v: math.log10(v)) if logy else (lambda v: v)
    pw = W - MARGIN["left"] - MARGIN["right"]
    ph = H - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + pw * (fx(v) - fx(x0)) / (fx(x1) - fx(x0))

    def py(v):
        return MARGIN["top"] + ph * (1 - (fy(v) - fy(y0)) / (fy(y1) - fy(y0)))

    out = [_header(title)]
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    for t in _ticks(x0, x1, logx):
        if x0 <= t <= x1:
            out.append(f'<text x="{px(t):.1f}" y="{H - MARGIN["bottom"] + 18}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y0, y1, logy):
        if y0 <= t <= y1:
            out.append(f'<text x="{MARGIN["left"] - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2}" transform="rotate(-90 16 {MARGIN["top"] + ph / 2})" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(clean.items()):
        c = PALETTE[i % len(PALETTE)]
        d = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{d}" fill="none" stroke="{c}" stroke-width="2"/>')
        out += [f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{c}"/>' for x, y in pts]
        ly = MARGIN["top"] + 16 * i + 8
        out.append(f'<line x1="{W - MARGIN["right"] + 10}" y1="{ly}" x2="{W - MARGIN["right"] + 30}" y2="{ly}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - MARGIN["right"] + 34}" y="{ly + 4}">{escape(str(label))}</text>')
    return _write(path, out)


def heatmap(values, xvals, yvals, path, *, title="", xlabel="", ylabel="") -> Path:
    """Grid of ``values[i, j]`` at ``(xvals[j], yvals[i])``; NaN cells are drawn grey, the minimum is outlined."""
    v = np.asarray(values, dtype=float)
    pw = W - MARGIN["left"] - MARGIN["right"]
    ph = H - MARGIN["top"] - MARGIN["bottom"]
    cw, ch = pw / max(1, v.shape[1]), ph / max(1, v.shape[0])
    finite = v[np.isfinite(v)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo or 1.0
    out = [_header(title)]
    best = np.unravel_index(np.nanargmin(v), v.shape) if finite.size else None
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            x = MARGIN["left"] + j * cw
            y = MARGIN["top"] + (v.shape[0] - 1 - i) * ch
            if math.isfinite(v[i, j]):
                t = (v[i, j] - lo) / span
                fill = f"rgb({int(40 + 215 * t)},{int(80 + 120 * (1 - t))},{int(200 * (1 - t))})"
            else:
                fill = "#bbb"
            stroke = ' stroke="#000" stroke-width="3"' if best == (i, j) else ""
            out.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{cw:.1f}" height="{ch:.1f}" fill="{fill}"{stroke}/>')
    for j, xv in enumerate(xvals):
        out.append(f'<text x="{MARGIN["left"] + (j + 0.5) * cw:.1f}" y="{H - MARGIN["bottom"] + 18}" '
                   f'text-anchor="middle">{_fmt(xv)}</text>')
    for i, yv in enumerate(yvals):
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{MARGIN["top"] + (v.shape[0] - 0.5 - i) * ch + 4:.1f}" '
                   f'text-anchor="end">{_fmt(yv)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2}" transform="rotate(-90 16 {MARGIN["top"] + ph / 2})" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    out.append(f'<text x="{W - MARGIN["right"] + 10}" y="{MARGIN["top"] + 12}">min {_fmt(lo)}</text>')
    out.append(f'<text x="{W - MARGIN["right"] + 10}" y="{MARGIN["top"] + 28}">max {_fmt(hi)}</text>')
    return _write(path, out)


def _header(title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" '
            f'font-size="11"><rect width="100%" height="100%" fill="white"/>'
            f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')


def _write(path, parts) -> Path:
    path = Path(path)
    path.write_text("\n".join(parts + ["</svg>\n"]))
    return path


def render(csv_path, schema: str, outdir) -> list:
    """Render one CSV into SVG files under ``outdir``; returns the written paths."""
    rows = read_csv(csv_path, schema)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(csv_path).stem
    if schema == "coordcheck":
        return _render_coordcheck(rows, outdir, stem)
    if schema == "normexp":
        xs = [r["r"] for r in rows]
        series = {k: (xs, [r[k] for r in rows]) for k in ("spectral", "expected", "bai_yin")}
        return [line_chart(series, outdir / f"{stem}.svg", title="norms of the concatenated operator",
                           xlabel="r", ylabel="norm", logx=True, logy=True)]
    if schema == "depthexp":
        by = defaultdict(lambda: ([], []))
        for r in rows:
            by["gain"][0].append(r["L"])
            by["gain"][1].append(r["gain"])
        return [line_chart(dict(by), outdir / f"{stem}.svg", title="forward gain vs depth",
                           xlabel="L", ylabel="gain", logx=True, logy=True)]
    if schema == "sweep":
        return _render_sweep(rows, outdir, stem)
    raise ValueError(f"no renderer for schema {schema!r}")


def _render_coordcheck(rows, outdir, stem):
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["step"] >= 1 and math.isfinite(r["value"]):
            groups[(r["quantity"], r["role"])][r["scale_value"]].append(r["value"])
    paths = []
    scale_var = rows[0]["scale_var"] if rows else "scale"
    for (q, role), pts in sorted(groups.items()):
        xs = sorted(pts)
        ys = [float(np.median(pts[x])) for x in xs]
        paths.append(line_chart({f"{q} {role}": (xs, ys)}, outdir / f"{stem}_{q}_{role}.svg",
                                title=f"{q} for {role}", xlabel=scale_var, ylabel="median value",
                                logx=True, logy=True))
    return paths


def _render_sweep(rows, outdir, stem):
    paths = []
    for scale in dict.fromkeys(r["scale"] for r in rows):
        rs = [r for r in rows if r["scale"] == scale]
        lrs = sorted({r["lr"] for r in rs})
        wds = sorted({r["wd"] for r in rs})
        cell = defaultdict(list)
        for r in rs:
            cell[(r["wd"], r["lr"])].append(math.nan if r["diverged"] else r["final_loss"])
        grid = np.array([[np.mean(cell[(w, l)]) if cell[(w, l)] else math.nan for l in lrs] for w in wds])
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in scale)
        paths.append(heatmap(grid, lrs, wds, outdir / f"{stem}_{safe}.svg", title=f"final loss, {scale}",
                             xlabel="learning rate", ylabel="weight decay"))
    return paths
