"""CSV ingestion and deterministic, atomic file output."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import os
import tempfile
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .model import Dataset


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def atomic_open(path, mode: str = "w"):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        kw = {"newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_open(path) as fh:
        fh.write(text)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_via(path, writer) -> None:
    """Atomic wrapper for functions that write to a path (``writer(tmp_path)``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _number(text: str, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}: column {column!r} value {text!r} is not numeric") from None
    if not np.isfinite(v):
        raise DataError(f"line {line}: column {column!r} value {text!r} is not finite")
    return v


def read_dataset(
    path,
    outcome: str,
    family: str = "binary",
    predictors: Sequence[str] | None = None,
    n_categories: int | None = None,
) -> Dataset:
    """Load a CSV with a header row.

    ``outcome`` names the label column. Every other column is a predictor
    unless ``predictors`` selects a subset. Binary labels must be 0/1;
    ordinal labels must be integers 1..K.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"line 1: duplicate column names in header {header}")
        if outcome not in header:
            raise DataError(f"line 1: outcome column {outcome!r} not in header {header}")
        if predictors:
            missing = [p for p in predictors if p not in header]
            if missing:
                raise DataError(f"line 1: predictor columns {missing} not in header {header}")
            if outcome in predictors:
                raise DataError("the outcome column cannot also be a predictor")
            cols = list(predictors)
        else:
            cols = [h for h in header if h != outcome]
        yi = header.index(outcome)
        xi = [header.index(c) for c in cols]
        ys, rows = [], []
        for rec in reader:
            line = reader.line_num
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, found {len(rec)}")
            y = _number(rec[yi].strip(), line, outcome)
            if y != round(y):
                raise DataError(f"line {line}: outcome {rec[yi]!r} is not an integer label")
            ys.append(int(y))
            rows.append([_number(rec[i].strip(), line, header[i]) for i in xi])
    if not ys:
        raise DataError(f"{path}: no data rows")
    y = np.array(ys, dtype=np.int64)
    X = np.array(rows, dtype=float).reshape(len(ys), len(cols))
    try:
        if family == "binary":
            return Dataset.binary(y, X, cols)
        return Dataset.ordinal(y, X, n_categories, cols)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def dataset_csv(data: Dataset, outcome: str = "y") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([outcome, *data.predictor_names])
    for yi, row in zip(data.y, data.X):
        w.writerow([int(yi), *(repr(float(v)) for v in row)])
    return buf.getvalue()


def write_dataset(data: Dataset, path, outcome: str = "y") -> None:
    write_text(path, dataset_csv(data, outcome))
