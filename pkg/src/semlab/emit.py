"""Result emission: curve CSVs (the source of truth) and SVG overlays.

CSV columns are exactly scenario,attack,targeted,norm,epsilon,asr,se,n,N,
alpha,seed with one row per curve point. Floats are written with repr, so
parsing a file back yields bit-identical Curve values and rerunning a
seeded config reproduces files byte for byte. SVGs are written directly
(no plotting dependency): one figure per (attack, target-mode), scenarios
overlaid with +/-1 SE whiskers.
"""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable, Sequence

from .checkpoint import atomic_write_text
from .evaluation import Curve, CurvePoint

CSV_COLUMNS = ("scenario", "attack", "targeted", "norm", "epsilon", "asr",
               "se", "n", "N", "alpha", "seed")

_REQUIRED_META = ("scenario", "attack", "targeted", "norm", "N", "alpha",
                  "seed")


def _fnum(x: float) -> str:
    return repr(float(x))


def curve_rows(curve: Curve) -> list[dict]:
    meta = curve.meta
    missing = [k for k in _REQUIRED_META if k not in meta]
    if missing:
        raise ValueError(f"curve meta missing {missing}")
    rows = []
    for p in curve.points:
        rows.append({
            "scenario": str(meta["scenario"]),
            "attack": str(meta["attack"]),
            "targeted": "true" if meta["targeted"] else "false",
            "norm": str(meta["norm"]),
            "epsilon": _fnum(p.epsilon),
            "asr": _fnum(p.asr),
            "se": _fnum(p.se),
            "n": str(int(p.n)),
            "N": str(int(meta["N"])),
            "alpha": _fnum(meta["alpha"]),
            "seed": str(int(meta["seed"])),
        })
    return rows


def curves_to_csv(curves: Iterable[Curve]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for curve in curves:
        writer.writerows(curve_rows(curve))
    return buf.getvalue()


def write_curves_csv(curves: Sequence[Curve], path: str) -> str:
    atomic_write_text(path, curves_to_csv(curves))
    return path


def read_curves_csv(path: str) -> list[Curve]:
    """Parse a curves CSV back into Curve values (bit-exact floats)."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(CSV_COLUMNS):
            raise ValueError(
                f"{path}: expected columns {list(CSV_COLUMNS)}, "
                f"found {reader.fieldnames}"
            )
        rows = list(reader)
    curves: list[Curve] = []
    key = None
    points: list[CurvePoint] = []
    meta: dict = {}

    def flush():
        if points:
            curves.append(Curve(tuple(points), dict(meta)))

    for row in rows:
        row_key = (row["scenario"], row["attack"], row["targeted"],
                   row["norm"], row["n"], row["N"], row["alpha"], row["seed"])
        if row_key != key:
            flush()
            key = row_key
            points = []
            meta = {
                "scenario": row["scenario"],
                "attack": row["attack"],
                "targeted": row["targeted"] == "true",
                "norm": row["norm"],
                "N": int(row["N"]),
                "alpha": float(row["alpha"]),
                "seed": int(row["seed"]),
            }
        points.append(CurvePoint(float(row["epsilon"]), float(row["asr"]),
                                 int(row["n"]), float(row["se"])))
    flush()
    return curves


# ---------------------------------------------------------------------------
# SVG rendering

_PALETTE = {
    "A": "#d62728", "B": "#ff7f0e", "C": "#bcbd22", "D": "#8c564b",
    "E": "#e377c2", "F": "#1f77b4", "G": "#17becf", "H": "#2ca02c",
    "I": "#9467bd", "J": "#7f7f7f", "K": "#aec7e8", "L": "#98df8a",
    "M": "#c5b0d5",
}
_FALLBACK_COLOR = "#333333"

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 150, 40, 48  # margins: left right top bottom


def _color(label: str) -> str:
    return _PALETTE.get(label, _FALLBACK_COLOR)


def _ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def render_svg(curves: Sequence[Curve], title: str,
               comment: str = "") -> str:
    """One overlay plot: ASR (y, 0..1) against epsilon (x), one polyline
    per curve labeled by scenario, with +/-1 SE whiskers."""
    if not curves:
        raise ValueError("nothing to plot")
    x_max = max(float(c.epsilons[-1]) for c in curves)
    x_min = 0.0
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def sx(x):
        return _ML + plot_w * (x - x_min) / (x_max - x_min or 1.0)

    def sy(y):
        return _MT + plot_h * (1.0 - y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
    ]
    if comment:
        parts.append(f"<!-- {comment} -->")
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>'
    )
    # axes
    parts.append(
        f'<line x1="{_ML}" y1="{sy(0):.1f}" x2="{_ML + plot_w}" '
        f'y2="{sy(0):.1f}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{sy(0):.1f}" '
        f'stroke="black"/>'
    )
    for t in _ticks(x_min, x_max):
        parts.append(
            f'<line x1="{sx(t):.1f}" y1="{sy(0):.1f}" x2="{sx(t):.1f}" '
            f'y2="{sy(0) + 5:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{sx(t):.1f}" y="{sy(0) + 18:.1f}" '
            f'text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{t:.2f}</text>'
        )
    for t in _ticks(0.0, 1.0):
        parts.append(
            f'<line x1="{_ML - 5}" y1="{sy(t):.1f}" x2="{_ML}" '
            f'y2="{sy(t):.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_ML - 9}" y="{sy(t) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{t:.1f}</text>'
        )
    parts.append(
        f'<text x="{_ML + plot_w / 2:.1f}" y="{_H - 10}" '
        f'text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">epsilon</text>'
    )
    parts.append(
        f'<text x="16" y="{_MT + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_MT + plot_h / 2:.1f})">ASR</text>'
    )
    # curves
    for idx, curve in enumerate(curves):
        label = str(curve.meta.get("scenario", f"curve{idx}"))
        color = _color(label)
        pts = " ".join(
            f"{sx(p.epsilon):.2f},{sy(p.asr):.2f}" for p in curve.points
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.8"/>'
        )
        for p in curve.points:
            x = sx(p.epsilon)
            lo, hi = max(p.asr - p.se, 0.0), min(p.asr + p.se, 1.0)
            parts.append(
                f'<line x1="{x:.2f}" y1="{sy(lo):.2f}" x2="{x:.2f}" '
                f'y2="{sy(hi):.2f}" stroke="{color}" stroke-width="1"/>'
            )
            parts.append(
                f'<circle cx="{x:.2f}" cy="{sy(p.asr):.2f}" r="2.4" '
                f'fill="{color}"/>'
            )
        ly = _MT + 16 * idx
        lx = _ML + plot_w + 12
        parts.append(
            f'<line x1="{lx}" y1="{ly + 5}" x2="{lx + 22}" y2="{ly + 5}" '
            f'stroke="{color}" stroke-width="1.8"/>'
        )
        extra = curve.meta.get("variant")
        text = f"{label} ({extra})" if extra else label
        parts.append(
            f'<text x="{lx + 28}" y="{ly + 9}" font-family="sans-serif" '
            f'font-size="11">{text}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _mode_tag(targeted: bool) -> str:
    return "targeted" if targeted else "untargeted"


def write_svg_overlays(curves: Sequence[Curve], directory: str,
                       basename: str = "curves",
                       seed_note: str = "") -> list[str]:
    """One SVG per (attack, target-mode) overlaying that group's curves."""
    os.makedirs(directory, exist_ok=True)
    groups: dict[tuple[str, bool], list[Curve]] = {}
    for curve in curves:
        key = (str(curve.meta["attack"]), bool(curve.meta["targeted"]))
        groups.setdefault(key, []).append(curve)
    written = []
    for (attack, targeted) in sorted(groups, key=lambda k: (k[0], k[1])):
        group = groups[(attack, targeted)]
        title = f"{attack} / {_mode_tag(targeted)}"
        svg_path = os.path.join(
            directory, f"{basename}-{attack}-{_mode_tag(targeted)}.svg"
        )
        atomic_write_text(svg_path, render_svg(group, title, seed_note))
        written.append(svg_path)
    return written


def emit_results(curves: Sequence[Curve], directory: str,
                 basename: str = "curves",
                 seed_note: str = "") -> list[str]:
    """Write one CSV with every curve plus one SVG per (attack,
    target-mode) overlaying its scenarios. Returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, f"{basename}.csv")
    write_curves_csv(curves, csv_path)
    return [csv_path] + write_svg_overlays(curves, directory, basename,
                                           seed_note)
