"""CSV conventions shared by every output file.

Comma-separated, ``\\n`` line endings, mandatory header, floats written with
17 significant digits so that re-parsing is exact.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence


def format_value(value) -> str:
    if isinstance(value, (bool,)):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def parse_value(text: str, kind):
    if kind is bool:
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    return kind(text)


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            writer.writerow([format_value(v) for v in row])
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        return header, [row for row in reader]


def read_table(path) -> dict[str, list[str]]:
    """Column-oriented view of a CSV file (values left as strings)."""
    header, rows = read_rows(path)
    return {name: [r[i] for r in rows] for i, name in enumerate(header)}
