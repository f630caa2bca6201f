"""CSV, JSON and SVG renderings of a benchmark report."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Dict, List
from xml.sax.saxutils import escape

from .evaluation import EvalReport
from .serialization import dumps

CSV_COLUMNS = ("method", "set", "pairs", "accuracy", "precision", "recall", "f1", "seconds")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([r.method, r.set_id, r.pairs, f"{r.accuracy:.6f}", f"{r.precision:.6f}",
                    f"{r.recall:.6f}", f"{r.f1:.6f}", f"{r.seconds:.6f}"])
    return buf.getvalue()


def report_json(report: EvalReport) -> str:
    return dumps(report.to_dict())


def _series(report: EvalReport) -> Dict[str, List]:
    out: Dict[str, List] = {}
    for r in report.rows:
        out.setdefault(r.method, []).append((r.set_id, r.accuracy))
    return out


def accuracy_chart_svg(report: EvalReport, width: int = 640, height: int = 400,
                       title: str = "Matching accuracy by viewpoint set") -> str:
    """Line chart with one polyline per method; x = viewpoint set, y = accuracy."""
    series = _series(report)
    sets = sorted({r.set_id for r in report.rows})
    left, right, top, bottom = 60, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    accs = [a for pts in series.values() for _, a in pts] or [0.0, 1.0]
    lo = max(0.0, min(accs) - 0.05)
    lo = min(lo, 0.9)
    hi = 1.0

    def sx(s):
        if len(sets) == 1:
            return left + pw / 2
        return left + pw * sets.index(s) / (len(sets) - 1)

    def sy(a):
        return top + ph * (hi - a) / (hi - lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(6):
        a = lo + (hi - lo) * k / 5
        y = sy(a)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{a:.2f}</text>')
    for s in sets:
        parts.append(f'<text x="{sx(s):.1f}" y="{top + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">set {s}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">viewpoint set</text>')
    parts.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12" transform="rotate(-90 16 {top + ph / 2:.1f})">accuracy</text>')
    for k, (method, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{sx(s):.1f},{sy(a):.1f}" for s, a in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}">'
                     f'<title>{escape(method)}</title></polyline>')
        for s, a in pts:
            parts.append(f'<circle cx="{sx(s):.1f}" cy="{sy(a):.1f}" r="3" fill="{color}"/>')
        ly = top + 10 + 20 * k
        parts.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 40}" y="{ly + 4}" font-family="sans-serif" '
                     f'font-size="12">{escape(method)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(report: EvalReport, out_dir, stem: str = "bench") -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "svg": out / f"{stem}.svg"}
    paths["csv"].write_text(report_csv(report), encoding="utf-8")
    paths["json"].write_text(report_json(report), encoding="utf-8")
    paths["svg"].write_text(accuracy_chart_svg(report), encoding="utf-8")
    return paths
