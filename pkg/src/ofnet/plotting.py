"""Precision/recall figures as plain SVG text.

Output is a pure function of the inputs (fixed number formatting, no
timestamps), so identical curves give byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import f1, read_pr_csv
from .exceptions import DataError, UsageError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
ISO_F1 = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

WIDTH, HEIGHT = 480, 440
LEFT, TOP, SIDE = 60, 20, 340


@dataclass
class Curve:
    label: str
    precision: np.ndarray
    recall: np.ndarray

    @property
    def best_f1(self) -> float:
        return float(f1(self.precision, self.recall).max())


def _x(r: float) -> float:
    return LEFT + SIDE * r


def _y(p: float) -> float:
    return TOP + SIDE * (1.0 - p)


def _polyline(rs, ps, **attrs) -> str:
    pts = " ".join(f"{_x(r):.2f},{_y(p):.2f}" for r, p in zip(rs, ps))
    extra = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
    return f'<polyline points="{pts}" fill="none" {extra}/>'


def iso_f1_points(f: float, n: int = 60):
    """Recall/precision points on the curve of constant F1 ``f``."""
    r = np.linspace(f / 2 + 1e-3, 1.0, n)
    p = f * r / (2 * r - f)
    keep = p <= 1.0
    return r[keep], p[keep]


def render_svg(curves: list[Curve], title: str) -> str:
    if not curves:
        raise UsageError("no curves to plot")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT + SIDE / 2:.1f}" y="14" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(title)}</text>',
    ]
    for f in ISO_F1:
        r, p = iso_f1_points(f)
        out.append(_polyline(r, p, stroke="#bbbbbb", stroke_width="0.8", stroke_dasharray="3,3"))
        out.append(
            f'<text x="{_x(r[-1]) + 3:.2f}" y="{_y(p[-1]) + 3:.2f}" font-family="sans-serif" font-size="9" fill="#888888">F={f:.1f}</text>'
        )
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{SIDE}" height="{SIDE}" fill="none" stroke="black"/>')
    for k in range(6):
        v = k / 5
        out.append(f'<text x="{_x(v):.2f}" y="{TOP + SIDE + 14}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.1f}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_y(v) + 3:.2f}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.1f}</text>')
    out.append(f'<text x="{_x(0.5):.2f}" y="{TOP + SIDE + 30}" text-anchor="middle" font-family="sans-serif" font-size="11">Recall</text>')
    out.append(
        f'<text x="16" y="{_y(0.5):.2f}" text-anchor="middle" font-family="sans-serif" font-size="11" transform="rotate(-90 16 {_y(0.5):.2f})">Precision</text>'
    )
    for i, c in enumerate(curves):
        colour = PALETTE[i % len(PALETTE)]
        order = np.argsort(c.recall, kind="stable")
        out.append(_polyline(c.recall[order], c.precision[order], stroke=colour, stroke_width="1.8"))
        ly = TOP + 14 + 16 * i
        out.append(f'<line x1="{LEFT + 8}" y1="{ly - 4}" x2="{LEFT + 26}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(
            f'<text x="{LEFT + 30}" y="{ly}" font-family="sans-serif" font-size="10">[F={c.best_f1:.3f}] {escape(c.label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def load_curves(paths, mode: str) -> list[Curve]:
    """Read the ``mode`` curve from each report.  A path is either an
    evaluation output directory (holding ``pr_<mode>.csv``) or a CSV file."""
    curves = []
    for path in paths:
        path = Path(path)
        if path.is_dir():
            csv_path = path / f"pr_{mode.lower()}.csv"
            label = path.name
        else:
            csv_path = path
            label = path.stem
        if not csv_path.exists():
            raise DataError(f"{csv_path}: no such PR file")
        _, p, r = read_pr_csv(csv_path)
        curves.append(Curve(label, p, r))
    return curves


def csv_mode(path) -> str | None:
    name = Path(path).name.lower()
    for mode in ("epr", "opr"):
        if mode in name:
            return mode.upper()
    return None


def plot_reports(paths, out_dir, modes=("EPR", "OPR")) -> list[Path]:
    """One SVG per mode.  CSV inputs join the figure of the mode named in
    their file name (all figures if it names none)."""
    paths = [Path(p) for p in paths]
    if not paths:
        raise UsageError("no reports given")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for mode in modes:
        chosen = [p for p in paths if p.is_dir() or csv_mode(p) in (None, mode)]
        if not chosen:
            continue
        svg = render_svg(load_curves(chosen, mode), f"{mode} precision-recall")
        target = out / f"pr_{mode.lower()}.svg"
        target.write_text(svg)
        written.append(target)
    return written
