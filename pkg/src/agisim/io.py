"""Byte-stable CSV output."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence


def format_float(x) -> str:
    """17 significant digits, '.' radix; round-trips every double."""
    return "%.17g" % float(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> int:
    n = 0
    with open(Path(path), "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_float(x) for x in row) + "\n")
            n += 1
    return n
