"""Dependency-free SVG line plots with byte-stable output."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import FormatError, InvalidArgumentError
from .io import read_trajectory

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=30, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _num(x) -> str:
    return f"{x:.6g}"


def read_table(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise InvalidArgumentError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise FormatError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}", offset=i)
    return header, body


def _float(s):
    try:
        return float(s)
    except ValueError:
        return math.nan


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    out = []
    k = 0
    while start + k * step <= hi + 1e-12 * abs(step):
        out.append(start + k * step)
        k += 1
    return out


def render_svg(series, title="", xlabel="", ylabel="") -> str:
    """``series`` is a list of ``(label, xs, ys)``; non-finite points split
    a series into separate polylines."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
    if not pts:
        raise InvalidArgumentError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def sx(x):
        return L + (x - x0) / (x1 - x0) * (R - L)

    def sy(y):
        return B - (y - y0) / (y1 - y0) * (B - T)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{(L + R) / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{B}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        px = sx(t)
        out.append(f'<line x1="{px:.2f}" y1="{B}" x2="{px:.2f}" y2="{B + 5}" stroke="black"/>')
        out.append(
            f'<text x="{px:.2f}" y="{B + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{_num(t)}</text>'
        )
    for t in _ticks(y0, y1):
        py = sy(t)
        out.append(f'<line x1="{L - 5}" y1="{py:.2f}" x2="{L}" y2="{py:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{L - 8}" y="{py + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{_num(t)}</text>'
        )
    out.append(
        f'<text x="{(L + R) / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{(T + B) / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(T + B) / 2:.1f})">{escape(ylabel)}</text>'
    )
    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        runs, cur = [], []
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                cur.append(f"{sx(x):.2f},{sy(y):.2f}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
        ly = T + 10 + 18 * k
        out.append(f'<line x1="{R + 12}" y1="{ly}" x2="{R + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{R + 38}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loss_curve_svg(path) -> str:
    """First column on x; every other column except ``grad_norm`` is a series."""
    header, body = read_table(path)
    xs = [_float(r[0]) for r in body]
    series = [
        (name, xs, [_float(r[j]) for r in body]) for j, name in enumerate(header) if j > 0 and name != "grad_norm"
    ]
    if not series:
        raise InvalidArgumentError(f"{path}: no loss columns")
    return render_svg(series, title="loss", xlabel=header[0], ylabel="loss")


def _tum_table(path):
    """A TUM trajectory file read as an ``x, y, z`` table, or None."""
    with open(path) as fh:
        first = next((ln for ln in fh if ln.strip() and not ln.startswith("#")), "")
    parts = first.split()
    if len(parts) != 8 or not all(math.isfinite(_float(p)) for p in parts):
        return None
    traj = read_trajectory(path)
    return ["x", "y", "z"], [[repr(float(v)) for v in p] for p in traj.positions]


def trajectory_svg(path) -> str:
    """Top-down x-z view of a CSV with ``x``/``z`` (or ``tx``/``tz``)
    columns, or of a TUM trajectory file.  An optional ``label`` column
    separates trajectories."""
    header, body = _tum_table(path) or read_table(path)
    cols = {name: j for j, name in enumerate(header)}
    xk = "x" if "x" in cols else "tx"
    zk = "z" if "z" in cols else "tz"
    if xk not in cols or zk not in cols:
        raise InvalidArgumentError(f"{path}: trajectory CSV needs x and z (or tx and tz) columns")
    groups: dict = {}
    for r in body:
        label = r[cols["label"]] if "label" in cols else "trajectory"
        xs, zs = groups.setdefault(label, ([], []))
        xs.append(_float(r[cols[xk]]))
        zs.append(_float(r[cols[zk]]))
    series = [(label, xs, zs) for label, (xs, zs) in groups.items()]
    return render_svg(series, title="trajectory (top view)", xlabel="x", ylabel="z")


PLOTS = {"loss-curve": loss_curve_svg, "trajectory-2d": trajectory_svg}


def plot(csv_path, svg_path, kind="loss-curve"):
    if kind not in PLOTS:
        raise InvalidArgumentError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOTS)}")
    Path(svg_path).write_text(PLOTS[kind](csv_path))
