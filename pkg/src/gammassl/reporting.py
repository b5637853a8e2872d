"""CSV, SVG and comparison-table output for metrics reports."""
from __future__ import annotations

import csv
import io
from pathlib import Path

from .errors import ParseError
from .metrics import MetricsReport

METRIC_COLUMNS = ["method", "domain", "aupr", "max_f_half", "pac", "threshold"]
LOG_COLUMNS = ["step", "L_sup", "L_c", "gamma", "mean_Mc", "mean_Mgamma"]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_csv(reports: dict[tuple[str, str], MetricsReport]) -> str:
    rows = [
        [m, d, repr(r.aupr), repr(r.max_f_half), repr(r.pac_at_max), repr(r.threshold_at_max)]
        for (m, d), r in reports.items()
    ]
    return _csv_text(METRIC_COLUMNS, rows)


def curve_csv(r: MetricsReport) -> str:
    c = r.curve
    rows = zip(c.recall, c.precision, c.threshold, r.f_sweep, r.pac_sweep)
    return _csv_text(
        ["recall", "precision", "threshold", "f_half", "pac"],
        ([repr(float(v)) for v in row] for row in rows),
    )


def log_csv(rows: list[dict], columns=LOG_COLUMNS) -> str:
    return _csv_text(columns, ([row.get(c, "") for c in columns] for row in rows))


def read_metrics_csv(path) -> list[dict]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].split(",") != METRIC_COLUMNS:
        raise ParseError(path, 1, f"expected header {','.join(METRIC_COLUMNS)}")
    out = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if len(row) != len(METRIC_COLUMNS):
            raise ParseError(path, lineno, f"expected {len(METRIC_COLUMNS)} fields, got {len(row)}")
        out.append(dict(zip(METRIC_COLUMNS, row)))
    return out


PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def sweep_svg(domain: str, reports: dict[str, MetricsReport], width=480, height=360) -> str:
    """F_0.5 against p(a,c) for every method on one domain."""
    pad = 48
    pw, ph = width - 2 * pad, height - 2 * pad

    def xy(pac, f):
        return pad + pac * pw, height - pad - f * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">p(a,c)</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">F0.5</text>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{domain}</text>',
    ]
    for i, (method, r) in enumerate(reports.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join("%.2f,%.2f" % xy(p, f) for p, f in zip(r.pac_sweep, r.f_sweep))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        x, y = xy(r.pac_at_max, r.max_f_half)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
        parts.append(
            f'<text x="{pad + 6}" y="{pad + 14 + 14 * i}" font-size="11" fill="{color}">{method}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def compare_tables(rows: list[dict], methods: list[str], domains: list[str]) -> tuple[str, str]:
    """Markdown and CSV tables: MaxF0.5 @ p(a,c) and AUPR per method x domain."""
    lookup = {(r["method"], r["domain"]): r for r in rows}
    md = ["| method | " + " | ".join(f"{d} MaxF0.5 @ p(a,c) | {d} AUPR" for d in domains) + " |"]
    md.append("|---" * (1 + 2 * len(domains)) + "|")
    csv_rows = []
    for m in methods:
        cells, flat = [], [m]
        for d in domains:
            r = lookup.get((m, d))
            if r is None:
                cells += ["-", "-"]
                flat += ["", "", ""]
                continue
            f, pac, ap = float(r["max_f_half"]), float(r["pac"]), float(r["aupr"])
            cells += [f"{f:.3f} @ {pac:.3f}", f"{ap:.3f}"]
            flat += [r["max_f_half"], r["pac"], r["aupr"]]
        md.append(f"| {m} | " + " | ".join(cells) + " |")
        csv_rows.append(flat)
    header = ["method"] + [f"{d}_{k}" for d in domains for k in ("max_f_half", "pac", "aupr")]
    return "\n".join(md) + "\n", _csv_text(header, csv_rows)
