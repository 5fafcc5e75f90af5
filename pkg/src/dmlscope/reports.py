"""Report table rendering: CSV with full precision for machines, Markdown with
integer-percent correlation cells for humans, plus the CSV reader the group
test uses to consume previously written reports.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .errors import ToolkitError
from .metrics import NrPrecReport
from .saliency import ComparisonMatrix
from .stats import MwuResult

COMPARISON_COLUMNS = [
    "model_a",
    "model_b",
    "mean_r",
    "std_r",
    "mean_jsd",
    "std_jsd",
    "n_images",
    "n_skipped",
]
NRPREC_COLUMNS = [
    "property",
    "mean_nrprec",
    "mean_rprec",
    "n_queries",
    "n_skipped",
    "significant",
]


def _fmt(x: float) -> str:
    """Full-precision float text; repr round-trips exactly."""
    return repr(float(x))


def _pct_cell(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean * 100:.0f}±{std * 100:.0f}"


def render_comparison_csv(matrix: ComparisonMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISON_COLUMNS)
    for a, b, cell in matrix.pairs():
        writer.writerow(
            [
                a,
                b,
                _fmt(cell.mean_correlation),
                _fmt(cell.std_correlation),
                _fmt(cell.mean_jsd),
                _fmt(cell.std_jsd),
                cell.n_images,
                cell.n_skipped,
            ]
        )
    return buf.getvalue()


def _markdown_matrix(names, cell_text) -> list[str]:
    lines = ["| model | " + " | ".join(names) + " |"]
    lines.append("| --- |" + " ---: |" * len(names))
    for i, row_name in enumerate(names):
        row = [row_name]
        for j in range(len(names)):
            row.append("" if i == j else cell_text(min(i, j), max(i, j)))
        lines.append("| " + " | ".join(row) + " |")
    return lines


def render_comparison_markdown(matrix: ComparisonMatrix) -> str:
    """Square matrices in command-line model order, values in integer percent."""
    names = list(matrix.model_names)
    cells = matrix.cells
    lines = ["## Correlation (percent)", ""]
    lines += _markdown_matrix(
        names, lambda i, j: _pct_cell(cells[(i, j)].mean_correlation, cells[(i, j)].std_correlation)
    )
    lines += ["", "## Jensen-Shannon divergence (percent)", ""]
    lines += _markdown_matrix(
        names, lambda i, j: _pct_cell(cells[(i, j)].mean_jsd, cells[(i, j)].std_jsd)
    )
    return "\n".join(lines) + "\n"


def _metadata_line(metadata: dict) -> str:
    for key, value in metadata.items():
        text = str(value)
        if " " in text or "=" in text or " " in str(key) or "=" in str(key):
            raise ToolkitError(f"metadata entry {key}={text!r} must not contain spaces or '='")
    return "# " + " ".join(f"{k}={v}" for k, v in metadata.items())


def render_nrprec_csv(
    reports: list[NrPrecReport], threshold: float, metadata: dict
) -> str:
    buf = io.StringIO()
    buf.write(_metadata_line(metadata) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(NRPREC_COLUMNS)
    for rep in reports:
        writer.writerow(
            [
                rep.property_name,
                _fmt(rep.mean_nrprec),
                _fmt(rep.mean_rprec),
                rep.n_queries,
                rep.n_skipped,
                str(abs(rep.mean_nrprec) > threshold).lower(),
            ]
        )
    return buf.getvalue()


def render_nrprec_markdown(
    reports: list[NrPrecReport], threshold: float, label: str
) -> str:
    """One column per property, one value row; `*` marks significant properties."""
    names = [rep.property_name for rep in reports]
    cells = [
        f"{rep.mean_nrprec:.2f}" + ("*" if abs(rep.mean_nrprec) > threshold else "")
        for rep in reports
    ]
    lines = [
        "| model | " + " | ".join(names) + " |",
        "| --- |" + " ---: |" * len(names),
        "| " + " | ".join([label] + cells) + " |",
        "",
        f"`*` significant: |mean NR-Prec| > {threshold:g}",
    ]
    return "\n".join(lines) + "\n"


def read_nrprec_csv(path) -> tuple[dict, dict[str, float]]:
    """Read back a report written by render_nrprec_csv.

    Returns (metadata, property -> mean_nrprec) preserving row order.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ToolkitError(f"cannot read report {path}: {exc}") from exc
    lines = text.splitlines()
    metadata = {}
    if lines and lines[0].startswith("#"):
        for token in lines[0][1:].split():
            if "=" in token:
                key, _, value = token.partition("=")
                metadata[key] = value
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows or rows[0] != NRPREC_COLUMNS:
        raise ToolkitError(f"report {path}: expected header {','.join(NRPREC_COLUMNS)}")
    values: dict[str, float] = {}
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != len(NRPREC_COLUMNS):
            raise ToolkitError(f"report {path}: malformed row {row}")
        name = row[0]
        if name in values:
            raise ToolkitError(f"report {path}: duplicate property {name!r}")
        try:
            values[name] = float(row[1])
        except ValueError:
            raise ToolkitError(f"report {path}: bad mean_nrprec {row[1]!r}") from None
    if not values:
        raise ToolkitError(f"report {path}: no property rows")
    return metadata, values


def group_test_columns(alpha: float) -> list[str]:
    return ["property", "u_statistic", "p_value", "method", f"significant@{alpha:g}"]


def render_group_test_csv(results: list[tuple[str, MwuResult]], alpha: float) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(group_test_columns(alpha))
    for name, res in results:
        writer.writerow(
            [
                name,
                _fmt(res.u_statistic),
                _fmt(res.p_value),
                res.method,
                str(res.significant(alpha)).lower(),
            ]
        )
    return buf.getvalue()


def render_group_test_markdown(results: list[tuple[str, MwuResult]], alpha: float) -> str:
    cols = group_test_columns(alpha)
    lines = [
        "| " + " | ".join(cols) + " |",
        "| --- | ---: | ---: | --- | --- |",
    ]
    for name, res in results:
        mark = "yes" if res.significant(alpha) else "no"
        lines.append(
            f"| {name} | {res.u_statistic:g} | {res.p_value:.6g} | {res.method} | {mark} |"
        )
    return "\n".join(lines) + "\n"
