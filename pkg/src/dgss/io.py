"""CSV and JSON persistence with deterministic, byte-stable output."""

import csv
import json
import os
import platform
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatch, InvalidInput


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "NA"
    return repr(v)


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def read_table(path, numeric=True):
    """Read a headed CSV; returns ``(header, rows)``.

    Ragged rows and (when ``numeric``) non-numeric cells raise
    :class:`DataError` naming the file and 1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInput(
                    f"{path}:{line_no}: expected {len(header)} fields, found {len(row)}"
                )
            if numeric:
                parsed = []
                for name, cell in zip(header, row):
                    try:
                        parsed.append(float(cell))
                    except ValueError:
                        raise InvalidInput(
                            f"{path}:{line_no}: column {name!r} has non-numeric value {cell!r}"
                        ) from None
                row = parsed
            rows.append(row)
    return header, rows


def read_matrix(path):
    header, rows = read_table(path)
    if not rows:
        raise DataError(f"{path}: no data rows")
    mat = np.array(rows, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise InvalidInput(f"{path}: non-finite values")
    return header, mat


def write_matrix(path, header, mat):
    write_rows(path, header, np.asarray(mat).tolist())


def write_long(path, arr, value_name="value", skip_zero=False):
    """``(p, p, q)`` array as 1-based ``i, j, k, value`` rows over ordered pairs."""
    p, _, q = arr.shape
    rows = []
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            for k in range(q):
                v = arr[i, j, k]
                if skip_zero and v == 0:
                    continue
                rows.append((i + 1, j + 1, k + 1, v))
    write_rows(path, ["i", "j", "k", value_name], rows)


def read_long(path, p=None, q=None):
    header, rows = read_table(path)
    if len(header) != 4 or header[:3] != ["i", "j", "k"]:
        raise InvalidInput(f"{path}: expected columns i, j, k, value")
    idx = np.array([r[:3] for r in rows], dtype=float).reshape(-1, 3)
    if np.any(idx != np.round(idx)) or np.any(idx < 1):
        raise InvalidInput(f"{path}: indices must be positive integers")
    idx = idx.astype(int) - 1
    p = p if p is not None else int(max(idx[:, 0].max(initial=0), idx[:, 1].max(initial=0)) + 1)
    q = q if q is not None else int(idx[:, 2].max(initial=0) + 1)
    if idx.size and (idx[:, :2].max() >= p or idx[:, 2].max() >= q):
        raise DimensionMismatch(f"{path}: index exceeds declared dimensions ({p}, {q})")
    if np.any(idx[:, 0] == idx[:, 1]):
        raise InvalidInput(f"{path}: diagonal entries are not allowed")
    arr = np.zeros((p, p, q))
    for (i, j, k), r in zip(idx, rows):
        arr[i, j, k] = r[3]
    return arr


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def versions():
    import numba
    import scipy

    from . import __version__

    return {
        "dgss": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
        "bit_generator": "PCG64",
    }


def ensure_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{path}: cannot create output directory ({exc.strerror})") from None
    if not os.access(path, os.W_OK):
        raise DataError(f"{path}: output directory is not writable")
    return path
