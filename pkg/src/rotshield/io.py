"""File formats: dataset CSV, secret key JSON, public release metadata, sweep output."""

from __future__ import annotations

import csv
import json
import math
import os
from typing import Sequence

import numpy as np

from .transform import Dataset, Partitioning, PerturbationKey

__all__ = [
    "CsvFormatError",
    "read_csv",
    "write_csv",
    "write_key",
    "read_key",
    "write_release_metadata",
    "read_release_metadata",
    "write_sweep_csv",
    "write_json",
    "SWEEP_HEADER",
]

SWEEP_HEADER = ("n", "fraction", "seed", "accuracy", "converged", "error")


class CsvFormatError(ValueError):
    """Malformed dataset CSV. ``row`` and ``column`` are 1-based (header is row 1)."""

    def __init__(self, path, row, column, message):
        self.path, self.row, self.column = path, row, column
        where = f"row {row}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{path}: {where}: {message}")


def read_csv(path) -> Dataset:
    """One record per row, one attribute per column, a header row of names."""
    path = os.fspath(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvFormatError(path, 0, None, f"cannot open file ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, None, "file is empty") from None
        names = [h.strip() for h in header]
        if not names or any(not n for n in names):
            col = next((i + 1 for i, n in enumerate(names) if not n), 1)
            raise CsvFormatError(path, 1, col, "empty attribute name in header")
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise CsvFormatError(
                    path, rowno, None, f"expected {len(names)} fields, found {len(row)}"
                )
            vals = []
            for colno, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(
                        path, rowno, colno, f"not a number: {cell.strip()!r}"
                    ) from None
                if not math.isfinite(v):
                    raise CsvFormatError(path, rowno, colno, f"non-finite value {cell.strip()!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CsvFormatError(path, 2, None, "no data rows")
    return Dataset(np.array(rows).T, names=tuple(names))


def write_csv(path, data: Dataset, names: Sequence[str] | None = None):
    names = names or data.names or tuple(f"a{i}" for i in range(data.d))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for rec in data.records:
            w.writerow([repr(float(v)) for v in rec])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_key(path, key: PerturbationKey):
    write_json(path, key.to_json_dict())
    try:
        os.chmod(path, 0o600)
    except OSError:
        pass


def read_key(path) -> PerturbationKey:
    return PerturbationKey.from_json_dict(_read_json(path))


def write_release_metadata(path, key: PerturbationKey, data: Dataset):
    """Public companion of released data: partitioning and shape, never seeds."""
    write_json(
        path,
        {
            "version": 1,
            "n": key.n,
            "boundaries": list(key.partitioning.boundaries),
            "d": data.d,
            "records": data.n_records,
            "unit_normalized": data.unit_normalized,
        },
    )


def read_release_metadata(path) -> tuple[Partitioning, bool]:
    obj = _read_json(path)
    part = Partitioning(tuple(obj["boundaries"]))
    if int(obj["n"]) != part.num_parts:
        raise ValueError(f"metadata says n={obj['n']} but lists {part.num_parts} parts")
    return part, bool(obj.get("unit_normalized", False))


def write_sweep_csv(path, cells):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for c in cells:
            w.writerow(
                [c.n, repr(c.fraction), c.seed, repr(c.accuracy), str(c.converged).lower(), c.error]
            )
