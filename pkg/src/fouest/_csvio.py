"""Small CSV helpers shared by the table writers."""

from __future__ import annotations

import csv
import math
from typing import Iterable, Sequence


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    try:
        return repr(float(v))
    except (TypeError, ValueError):
        return str(v)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], comments: Iterable[str] = ()) -> None:
    """Write ``# comment`` lines, a header and rows; floats are written with ``repr``."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_table` (comment lines skipped)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        return [], []
    return [c.strip() for c in rows[0]], rows[1:]
