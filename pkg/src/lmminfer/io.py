"""CSV ingestion and report serialization.

Schema: a header row is required; the group column holds free-form string
keys, ``y`` is the response, one column (named on the command line) is the
tested covariate, and every remaining numeric column joins the nuisance
design. Rows are gathered by group label in order of first appearance, so
a file whose groups are interleaved still ingests deterministically.
Numbers are emitted with 17 significant digits, which round-trips IEEE
doubles exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data import GroupedDataset
from .errors import SchemaError

__all__ = ["IngestedData", "read_dataset_csv", "write_dataset_csv", "format_report"]

_FMT = "%.17g"


@dataclass(frozen=True)
class IngestedData:
    dataset: GroupedDataset
    feature_names: list[str]  # columns of X, in order
    test_col: str
    group_labels: list[str]  # one label per group, in block order


def _fnum(x: float) -> str:
    return _FMT % float(x)


def read_dataset_csv(
    path: str,
    test_col: str,
    group_col: str = "group",
    y_col: str = "y",
    random_cols: list[str] | None = None,
) -> IngestedData:
    """Parse a grouped CSV into a GroupedDataset.

    With ``random_cols`` empty or None the random-effect design is a
    per-group intercept (all-ones column); otherwise the named nuisance
    columns are copied into W (they remain part of X).
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError("empty_file", f"{path}: no header row") from None
            rows = [row for row in reader if row]
    except OSError as err:
        raise SchemaError("io", f"cannot read {path}: {err}") from None

    header = [h.strip() for h in header]
    for needed in (group_col, y_col, test_col):
        if needed not in header:
            raise SchemaError("missing_column", f"column {needed!r} not in header {header}")
    col_idx = {name: i for i, name in enumerate(header)}
    feature_names = [h for h in header if h not in (group_col, y_col, test_col)]
    if not feature_names:
        raise SchemaError("no_features", "no nuisance columns besides group/y/test")
    random_cols = list(random_cols or [])
    for rc in random_cols:
        if rc not in feature_names:
            raise SchemaError(
                "bad_random_col",
                f"random-effect column {rc!r} is not a nuisance column",
            )

    by_group: dict[str, list[list[float]]] = {}
    order: list[str] = []
    numeric_cols = [y_col, test_col] + feature_names
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(
                "ragged_row", f"line {lineno}: {len(row)} cells, expected {len(header)}"
            )
        label = row[col_idx[group_col]].strip()
        if not label:
            raise SchemaError("empty_group", f"line {lineno}: empty group label")
        values = []
        for name in numeric_cols:
            cell = row[col_idx[name]].strip()
            try:
                values.append(float(cell))
            except ValueError:
                raise SchemaError(
                    "non_numeric",
                    f"line {lineno}, column {name!r}: non-numeric cell {cell!r}",
                ) from None
        if label not in by_group:
            order.append(label)
            by_group[label] = []
        by_group[label].append(values)

    if not order:
        raise SchemaError("no_rows", f"{path}: no data rows")
    stacked = np.array(
        [vals for label in order for vals in by_group[label]], dtype=float
    )
    groups = tuple(len(by_group[label]) for label in order)
    y = stacked[:, 0]
    Z = stacked[:, 1]
    X = stacked[:, 2:]
    if random_cols:
        idx = [feature_names.index(rc) for rc in random_cols]
        W = X[:, idx]
    else:
        W = np.ones((X.shape[0], 1))
    dataset = GroupedDataset(y=y, X=X, Z=Z, W=W, groups=groups)
    return IngestedData(dataset, feature_names, test_col, order)


def write_dataset_csv(
    data: GroupedDataset,
    path: str,
    feature_names: list[str] | None = None,
    test_col: str = "z",
    group_col: str = "group",
    y_col: str = "y",
    group_labels: list[str] | None = None,
) -> None:
    """Emit a dataset in the ingestion schema (17 significant digits)."""
    k = data.X.shape[1]
    if feature_names is None:
        feature_names = [f"x{i + 1}" for i in range(k)]
    if len(feature_names) != k:
        raise ValueError("feature_names length mismatch")
    if group_labels is None:
        group_labels = [f"g{i + 1}" for i in range(data.N)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([group_col, y_col, test_col] + list(feature_names))
        row_idx = 0
        for label, size in zip(group_labels, data.groups):
            for _ in range(size):
                writer.writerow(
                    [label, _fnum(data.y[row_idx]), _fnum(data.Z[row_idx])]
                    + [_fnum(v) for v in data.X[row_idx]]
                )
                row_idx += 1


def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = value


def format_report(report: dict, fmt: str = "text") -> str:
    """Flat key=value block (default) or JSON with full float precision."""
    if fmt == "json":
        return json.dumps(report, indent=2, default=_json_default, sort_keys=True)
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    flat: dict = {}
    _flatten("", report, flat)
    lines = []
    for key in sorted(flat):
        value = flat[key]
        if isinstance(value, float):
            value = _fnum(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)
