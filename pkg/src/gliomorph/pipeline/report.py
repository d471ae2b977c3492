"""CSV tables and SVG plots from the JSON results of the other commands.

Every writer takes the plain dicts the CLI serialises, so a report can be
rebuilt from saved results without rerunning anything. Output is
byte-deterministic: fixed float formatting, no timestamps.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

from ..volio import format_number

_W, _H = 640, 400
_MARGIN = (60, 20, 30, 50)  # left, right, top, bottom
_COLOURS = ("#c0392b", "#2471a3", "#1e8449", "#7d3c98")


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format_number(v)
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_table1(path: Path, screening: Sequence[Mapping]) -> Path:
    """Univariate Cox screen of every Hd95 feature on the full cohort."""
    return _write_csv(
        path,
        ("feature", "beta", "hr", "ci_low", "ci_high", "p", "converged", "selected"),
        (
            (r["feature"], r["beta"], r["hr"], r["ci_low"], r["ci_high"], r["p"],
             r["converged"], r["selected"])
            for r in screening
        ),
    )


def write_table2(path: Path, cv_results: Sequence[Mapping]) -> Path:
    return _write_csv(
        path,
        ("feature_set", "mean_cindex", "ci_low", "ci_high", "repeats", "selection_mode"),
        (
            (r["feature_set"], r["mean_cindex"], r["ci_low"], r["ci_high"],
             len(r["per_repeat"]), r["selection_mode"])
            for r in cv_results
        ),
    )


def write_table3(path: Path, decile_rows: Sequence[Mapping]) -> Path:
    return _write_csv(
        path,
        ("feature", "cutoff", "n_top", "pct_short", "logrank_p", "significant", "defined"),
        (
            (r["feature"], r["cutoff"], r["n_top"], r["pct_short"], r["logrank_p"],
             r["significant"], r["defined"])
            for r in decile_rows
        ),
    )


# ---------------------------------------------------------------------------
# SVG


def _svg(body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">'
    )
    return "\n".join(
        [head, f'<rect width="{_W}" height="{_H}" fill="white"/>',
         f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>']
        + body + ["</svg>", ""]
    )


def _axes(x_label: str, y_label: str, x_max: float, y_ticks: Sequence[float]) -> list[str]:
    left, right, top, bottom = _MARGIN
    x0, y0, x1, y1 = left, _H - bottom, _W - right, top
    out = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{_H - 12}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="16" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">{escape(y_label)}</text>',
    ]
    for t in y_ticks:
        y = y0 - t * (y0 - y1)
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">{t:.2f}</text>')
    for k in range(6):
        v = x_max * k / 5
        x = x0 + (x1 - x0) * k / 5
        out.append(f'<text x="{x:.1f}" y="{y0 + 16}" text-anchor="middle">{v:.3g}</text>')
    return out


def km_step_points(times: Sequence[float], probs: Sequence[float], t_end: float):
    """Vertices of the right-continuous KM step function from t=0 to t_end."""
    pts = [(0.0, 1.0)]
    level = 1.0
    for t, p in zip(times, probs):
        pts.append((float(t), level))
        pts.append((float(t), float(p)))
        level = float(p)
    pts.append((float(t_end), level))
    return pts


def write_fig5(csv_path: Path, svg_path: Path, stratification: Mapping) -> tuple[Path, Path]:
    """Kaplan-Meier curves of the high- and low-risk groups."""
    curves = stratification["curves"]
    groups = ("high", "low")
    t_end = max([max(curves[g]["times"], default=0.0) for g in groups] + [1.0])
    _write_csv(
        csv_path,
        ("group", "time", "survival"),
        ((g, t, p) for g in groups for t, p in zip(curves[g]["times"], curves[g]["probs"])),
    )
    left, right, top, bottom = _MARGIN
    sx = (_W - left - right) / t_end
    sy = _H - top - bottom
    body = _axes("time (months)", "survival probability", t_end, (0.0, 0.25, 0.5, 0.75, 1.0))
    sizes = {"high": stratification["n_high"], "low": stratification["n_low"]}
    for i, g in enumerate(groups):
        pts = km_step_points(curves[g]["times"], curves[g]["probs"], t_end)
        path = " ".join(f"{left + t * sx:.2f},{_H - bottom - p * sy:.2f}" for t, p in pts)
        colour = _COLOURS[i]
        body.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{path}"/>')
        body.append(
            f'<text x="{_W - right - 4}" y="{top + 20 + 16 * i}" text-anchor="end" fill="{colour}">'
            f'{g} risk (n={sizes[g]})</text>'
        )
    title = (
        f"HR {stratification['hr']:.2f} "
        f"[{stratification['ci_low']:.2f}, {stratification['ci_high']:.2f}], "
        f"log-rank p={stratification['logrank_p']:.2e}"
    )
    svg_path.write_text(_svg(body, title), encoding="utf-8")
    return csv_path, svg_path


def write_fig6(
    csv_path: Path, svg_path: Path, selection_freq: Mapping[str, float], label: str = ""
) -> tuple[Path, Path]:
    """Horizontal bars: fraction of folds in which each Hd95 feature was selected."""
    items = sorted(selection_freq.items(), key=lambda kv: (-kv[1], kv[0]))
    _write_csv(csv_path, ("feature", "selection_frequency"), items)
    left = 200
    top, bottom = 40, 30
    row_h = max(4.0, min(18.0, (_H - top - bottom) / max(len(items), 1)))
    width = _W - left - 60
    body = []
    for i, (name, freq) in enumerate(items):
        y = top + i * row_h
        body.append(
            f'<rect x="{left}" y="{y:.2f}" width="{freq * width:.2f}" height="{row_h * 0.8:.2f}" '
            f'fill="{_COLOURS[1]}"/>'
        )
        body.append(
            f'<text x="{left - 6}" y="{y + row_h * 0.65:.2f}" text-anchor="end" '
            f'font-size="{min(11.0, row_h * 0.8):.1f}">{escape(name)}</text>'
        )
        body.append(
            f'<text x="{left + freq * width + 4:.2f}" y="{y + row_h * 0.65:.2f}" '
            f'font-size="{min(11.0, row_h * 0.8):.1f}">{freq:.2f}</text>'
        )
    title = "Hd95 selection frequency across folds" + (f" ({label})" if label else "")
    svg_path.write_text(_svg(body, title), encoding="utf-8")
    return csv_path, svg_path


def write_report(
    out_dir: str | Path,
    screening: Sequence[Mapping] | None = None,
    cv_results: Sequence[Mapping] = (),
    stratification: Mapping | None = None,
    decile_rows: Sequence[Mapping] | None = None,
) -> list[Path]:
    """Write whichever artifacts the given results allow; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if screening is not None:
        written.append(write_table1(out / "table1_selected_features.csv", screening))
    if cv_results:
        written.append(write_table2(out / "table2_cindex.csv", cv_results))
        with_hd95 = [r for r in cv_results if r["selection_freq"]]
        if with_hd95:
            r = with_hd95[0]
            written.extend(write_fig6(
                out / "fig6_selection_frequency.csv", out / "fig6_selection_frequency.svg",
                r["selection_freq"], r["feature_set"],
            ))
    if decile_rows is not None:
        written.append(write_table3(out / "table3_top_decile.csv", decile_rows))
    if stratification is not None:
        written.extend(write_fig5(out / "fig5_km.csv", out / "fig5_km.svg", stratification))
    return written
