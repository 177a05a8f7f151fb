"""Cumulative attribution curves, rankings and report files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import ItemOrder
from .shapley import AttributionVector, Method


@dataclass(frozen=True)
class CurvePoint:
    tau: float
    beta: float
    increment: float
    items: tuple[str, ...]


@dataclass(frozen=True)
class CumulativeCurve:
    wafer_id: str | None
    points: tuple[CurvePoint, ...]
    start: float
    end: float

    def beta(self, tau: float) -> float:
        """Right-continuous step value; ``start`` before the first item."""
        val = self.start
        for p in self.points[1:]:
            if p.tau <= tau:
                val = p.beta
            else:
                break
        return val


def _start_tau(timestamps: Sequence[float]) -> float:
    lo = min(timestamps)
    return 0.0 if lo > 0 else lo - 1.0


def cumulative_curve(attr: AttributionVector, order: ItemOrder) -> CumulativeCurve:
    """Running total of trajectory scores along process time.

    Items that share a timestamp enter as one step. The opening point sits at
    ``tau = 0`` (or one unit before the earliest item if timestamps reach 0).
    """
    if attr.method not in (Method.TSA, Method.TSA_ORACLE):
        raise ValueError(
            f"cumulative curves are defined for trajectory scores only, got {attr.method.value}"
        )
    ts = list(order.timestamps)
    if len(ts) != len(attr.scores):
        raise ValueError("order and attribution differ in length")
    if any(t is None or not np.isfinite(t) for t in ts):
        raise ValueError("every item needs a finite timestamp")
    by_tau: dict[float, list[int]] = {}
    for k, t in enumerate(ts):
        by_tau.setdefault(float(t), []).append(k)
    points = [CurvePoint(_start_tau(ts), float(attr.v_empty), 0.0, ())]
    running = float(attr.v_empty)
    for tau in sorted(by_tau):
        ks = by_tau[tau]
        inc = float(sum(attr.scores[k] for k in ks))
        running += inc
        points.append(CurvePoint(tau, running, inc, tuple(order.items[k] for k in ks)))
    return CumulativeCurve(attr.wafer_id, tuple(points), float(attr.v_empty), float(attr.v_full))


@dataclass(frozen=True)
class Jump:
    tau: float
    increment: float
    items: tuple[str, ...]


def top_jumps(curve: CumulativeCurve, k: int) -> list[Jump]:
    """The ``k`` largest nonzero steps by absolute increment."""
    if k < 1:
        raise ValueError("k must be >= 1")
    steps = [Jump(p.tau, p.increment, p.items) for p in curve.points[1:] if p.increment != 0.0]
    steps.sort(key=lambda j: (-abs(j.increment), j.tau))
    return steps[:k]


@dataclass(frozen=True)
class RankedItem:
    rank: int
    item_id: str
    score: float
    timestamp: float


def rank_items(attr: AttributionVector, order: ItemOrder) -> list[RankedItem]:
    idx = sorted(
        range(len(order)),
        key=lambda k: (-abs(float(attr.scores[k])), order.timestamps[k], order.items[k]),
    )
    return [
        RankedItem(r + 1, order.items[k], float(attr.scores[k]), float(order.timestamps[k]))
        for r, k in enumerate(idx)
    ]


# ---------------------------------------------------------------------------
# file output
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def attribution_csv(attrs: Sequence[AttributionVector], order: ItemOrder) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["wafer_id", "item_id", "timestamp", "score", "method", "v_full", "v_empty"])
    worst = 0.0
    for a in attrs:
        for k, item in enumerate(order.items):
            wr.writerow([a.wafer_id, item, _fmt(order.timestamps[k]), _fmt(a.scores[k]),
                         a.method.value, _fmt(a.v_full), _fmt(a.v_empty)])
        worst = max(worst, a.sum_rule_residual)
    buf.write(f"# sum_rule_residual={worst!r}\n")
    return buf.getvalue()


def curve_csv(curves: Sequence[CumulativeCurve]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["wafer_id", "tau", "beta"])
    for c in curves:
        for p in c.points:
            wr.writerow([c.wafer_id, _fmt(p.tau), _fmt(p.beta)])
    return buf.getvalue()


def jumps_csv(rows: Sequence[tuple[str, Sequence[Jump]]]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["wafer_id", "tau", "increment", "item_ids"])
    for wafer, jumps in rows:
        for j in jumps:
            wr.writerow([wafer, _fmt(j.tau), _fmt(j.increment), ";".join(j.items)])
    return buf.getvalue()


_W, _H = 640, 400
_ML, _MR, _MT, _MB = 64, 24, 32, 48


def _nice(v: float) -> str:
    return f"{v:.6g}"


def curve_svg(curve: CumulativeCurve, probability: bool = True) -> str:
    """Static step plot of beta against tau.

    The vertical axis spans [0, 1] for probability-valued curves and the data
    range otherwise. Output depends only on the curve, so it is byte-stable.
    """
    taus = [p.tau for p in curve.points]
    betas = [p.beta for p in curve.points]
    t_lo, t_hi = min(taus), max(taus)
    if t_hi == t_lo:
        t_hi = t_lo + 1.0
    t_hi_plot = t_hi + 0.05 * (t_hi - t_lo)
    if probability:
        b_lo, b_hi = 0.0, 1.0
    else:
        b_lo, b_hi = min(betas), max(betas)
        if b_hi == b_lo:
            b_lo, b_hi = b_lo - 0.5, b_hi + 0.5

    def sx(t):
        return _ML + (t - t_lo) / (t_hi_plot - t_lo) * (_W - _ML - _MR)

    def sy(b):
        return _H - _MB - (b - b_lo) / (b_hi - b_lo) * (_H - _MT - _MB)

    pts = [(sx(taus[0]), sy(betas[0]))]
    for i in range(1, len(taus)):
        pts.append((sx(taus[i]), sy(betas[i - 1])))
        pts.append((sx(taus[i]), sy(betas[i])))
    pts.append((sx(t_hi_plot), sy(betas[-1])))
    poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)

    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    title = f"wafer {curve.wafer_id}" if curve.wafer_id is not None else "cumulative attribution"
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        b = b_lo + frac * (b_hi - b_lo)
        y = sy(b)
        lines.append(f'<line x1="{x0 - 4}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        lines.append(
            f'<text x="{x0 - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{_nice(b)}</text>'
        )
    for t in (t_lo, t_hi):
        x = sx(t)
        lines.append(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 4}" stroke="black"/>')
        lines.append(
            f'<text x="{x:.2f}" y="{y0 + 18}" font-size="11" text-anchor="middle">{_nice(t)}</text>'
        )
    lines += [
        f'<text x="{(x0 + x1) / 2:.2f}" y="{_H - 10}" font-size="12" text-anchor="middle">'
        "process time (tau)</text>",
        f'<text x="16" y="{(y0 + y1) / 2:.2f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.2f})">cumulative attribution (beta)</text>',
        f'<text x="{(x0 + x1) / 2:.2f}" y="20" font-size="13" text-anchor="middle">'
        f"{_escape(title)}</text>",
        f'<polyline fill="none" stroke="#c0392b" stroke-width="2" points="{poly}"/>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def render_curve_svg(curve: CumulativeCurve, out_path: str | Path, probability: bool = True) -> Path:
    out_path = Path(out_path)
    write_atomic(out_path, curve_svg(curve, probability))
    return out_path
