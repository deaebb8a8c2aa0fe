"""
CSV input/output for observations and result tables.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from quadnpmle.errors import ValidationError


@dataclass(frozen=True)
class Observations:
    """Columns read from an observation CSV (x required, s2/theta optional)."""

    x: NDArray[np.float64]
    s2: NDArray[np.float64] | None = None
    theta: NDArray[np.float64] | None = None

    def __len__(self) -> int:
        return int(self.x.size)


def _parse_column(rows: list[dict[str, str]], name: str, path: Path) -> NDArray:
    values = np.empty(len(rows), dtype=float)
    for i, row in enumerate(rows):
        cell = (row.get(name) or "").strip()
        try:
            values[i] = float(cell)
        except ValueError:
            raise ValidationError(
                f"{path.name}: row {i + 2} column '{name}' is not a number: {cell!r}"
            ) from None
        if not math.isfinite(values[i]):
            raise ValidationError(f"{path.name}: row {i + 2} column '{name}' is not finite")
    return values


def read_observations(path: Path | str) -> Observations:
    """
    Read an observation CSV with a header row.

    Args:
        path: CSV file with column ``x`` and optional ``s2`` and ``theta``

    Returns:
        Observations with float arrays

    Raises:
        ValidationError: Missing file, missing ``x`` column, no rows or bad cells
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"Input file not found: {path}")

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        fields = [name.strip() for name in (reader.fieldnames or [])]
        reader.fieldnames = fields
        if "x" not in fields:
            raise ValidationError(f"{path.name}: missing required column 'x'")
        rows = list(reader)

    if not rows:
        raise ValidationError(f"{path.name}: no observations")

    return Observations(
        x=_parse_column(rows, "x", path),
        s2=_parse_column(rows, "s2", path) if "s2" in fields else None,
        theta=_parse_column(rows, "theta", path) if "theta" in fields else None,
    )


def write_observations(
    path: Path | str,
    x: Sequence[float],
    s2: Sequence[float] | None = None,
    theta: Sequence[float] | None = None,
) -> Path:
    """Write observations (and latent theta) as CSV; returns the path"""
    columns: dict[str, Sequence[float]] = {"x": x}
    if s2 is not None:
        columns["s2"] = s2
    if theta is not None:
        columns["theta"] = theta
    n = len(x)
    rows = ({name: repr(float(col[i])) for name, col in columns.items()} for i in range(n))
    return write_rows(path, list(columns), rows)


def write_rows(
    path: Path | str,
    fieldnames: list[str],
    rows: Iterable[Mapping[str, Any]],
    append: bool = False,
) -> Path:
    """
    Write dict rows as CSV, creating parent folders.

    Args:
        path: Output file
        fieldnames: Column order
        rows: Mappings keyed by field name
        append: Append without a header when the file already exists

    Returns:
        The output path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = not (append and path.exists())
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        if write_header:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path
