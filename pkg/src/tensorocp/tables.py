"""CSV and markdown rendering of convergence tables, and CSV parse-back."""
from __future__ import annotations

import csv
import io
import math

from .ocp import ConvergenceTable, TableRow

CSV_COLUMNS = ("level", "dofs", "h", "error", "eoc", "iters_full_pcg", "iters_scg", "iters_pscg")
PATH_COLUMNS = {"full-pcg": "iters_full_pcg", "schur-cg": "iters_scg", "schur-pcg": "iters_pscg"}
FORMATS = ("csv", "md")


def format_sci(x: float, digits: int = 4) -> str:
    """Scientific notation with ``digits`` significant digits and a bare exponent: ``1.669e-1``."""
    mantissa, exp = f"{x:.{digits - 1}e}".split("e")
    return f"{mantissa}e{int(exp)}"


def format_sci_short(x: float) -> str:
    """Shortest scientific form that parses back to ``x`` exactly: ``2.5e-1``."""
    for digits in range(1, 18):
        text = format_sci(x, digits)
        if float(text) == x:
            mantissa, exp = text.split("e")
            if "." in mantissa:
                mantissa = mantissa.rstrip("0").rstrip(".")
            return f"{mantissa}e{exp}"
    return repr(x)


def format_eoc(x) -> str:
    return "" if x is None else f"{x:.2f}"


def _iters(row: TableRow, path: str) -> str:
    value = row.iterations.get(path)
    return "" if value is None else str(value)


def csv_rows(table: ConvergenceTable) -> list:
    out = []
    for row in table.rows:
        out.append([
            str(row.level),
            str(row.dofs),
            format_sci_short(row.h),
            "" if row.error is None else format_sci(row.error),
            format_eoc(row.eoc),
            _iters(row, "full-pcg"),
            _iters(row, "schur-cg"),
            _iters(row, "schur-pcg"),
        ])
    return out


def emit_csv(table: ConvergenceTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(csv_rows(table))
    return buf.getvalue()


def emit_markdown(table: ConvergenceTable) -> str:
    header = ["l", "#dofs", "h", "error", "eoc", "#GMG-PCG its", "#SCG its", "#PSCG its"]
    body = []
    for row, cells in zip(table.rows, csv_rows(table)):
        exponent = -math.log2(row.h)
        h = f"2^-{int(exponent)}" if exponent.is_integer() else cells[2]
        body.append([cells[0], f"{row.dofs:,}", h, cells[3] or "-", cells[4] or "-"]
                    + [c or "-" for c in cells[5:]])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def line(cells):
        return "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"

    out = [line(header), "|" + "|".join("-" * (w + 1) + ":" for w in widths) + "|"]
    out += [line(r) for r in body]
    return "\n".join(out) + "\n"


def emit_table(table: ConvergenceTable, fmt: str = "csv") -> str:
    if not table.rows:
        raise ValueError("cannot emit an empty table")
    if fmt == "csv":
        return emit_csv(table)
    if fmt == "md":
        return emit_markdown(table)
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def parse_csv(text: str, d: int = 3, target: str = "", rho_rule: str = "") -> ConvergenceTable:
    """Inverse of ``emit_csv`` at the emitted precision."""
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for cells in reader:
        if not cells:
            continue
        level, dofs, h, error, eoc_text = cells[:5]
        iterations = {}
        for path, col in PATH_COLUMNS.items():
            value = cells[CSV_COLUMNS.index(col)]
            if value:
                iterations[path] = int(value)
        rows.append(TableRow(int(level), int(dofs), float(h), float(error) if error else None,
                             float(eoc_text) if eoc_text else None, iterations))
    return ConvergenceTable(rows, d, target, rho_rule)
