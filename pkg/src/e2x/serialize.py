"""CSV forms of attribution results, 9 significant digits throughout."""

from __future__ import annotations

import csv

import numpy as np

from .errors import InvalidValueError
from .types import ImportanceMap, ImportanceVector


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_vector_csv(vec: ImportanceVector, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# phi0 = {_fmt(vec.phi0)}\n")
        writer = csv.writer(fh)
        writer.writerow(["segment", "phi"])
        for i, v in enumerate(vec.phi):
            writer.writerow([i, _fmt(v)])


def read_vector_csv(path) -> ImportanceVector:
    phi0 = 0.0
    rows: list[tuple[int, float]] = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            if rec[0].startswith("#"):
                if "phi0" in rec[0]:
                    phi0 = float(rec[0].split("=")[1])
                continue
            if rec[0] == "segment":
                continue
            rows.append((int(rec[0]), float(rec[1])))
    if not rows:
        raise InvalidValueError(f"no attribution rows in {path}")
    phi = np.zeros(max(i for i, _ in rows) + 1)
    for i, v in rows:
        phi[i] = v
    return ImportanceVector(phi, phi0)


def write_map_csv(amap: ImportanceMap, path) -> None:
    values = amap.per_pixel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for r in range(values.shape[0]):
            for c in range(values.shape[1]):
                writer.writerow([r, c, _fmt(values[r, c])])


def read_map_csv(path) -> ImportanceMap:
    rows: list[tuple[int, int, float]] = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#") or rec[0] == "row":
                continue
            rows.append((int(rec[0]), int(rec[1]), float(rec[2])))
    if not rows:
        raise InvalidValueError(f"no map rows in {path}")
    h = max(r for r, _, _ in rows) + 1
    w = max(c for _, c, _ in rows) + 1
    values = np.zeros((h, w))
    for r, c, v in rows:
        values[r, c] = v
    return ImportanceMap(values)


def sniff_csv_kind(path) -> str:
    """Distinguish per-segment from per-pixel attribution CSVs by header."""
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            if rec[0] == "segment":
                return "vector"
            if rec[0] == "row":
                return "map"
            break
    raise InvalidValueError(f"{path} is not an attribution CSV")
