"""Schema-typed tabular storage: CSV ingestion, splitting, binning, encoding.

Tables are immutable after construction; every downstream stage shares them
for concurrent reads. A Row is a tuple with one value per column: str for
categorical columns, float for numerical ones.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

CATEGORICAL = "categorical"
NUMERICAL = "numerical"

# Empty categorical cells become an explicit vocabulary token so frequency
# tables stay total functions; empty numerical cells are an ingest error.
MISSING_TOKEN = "⟨missing⟩"

Row = tuple


@dataclass(frozen=True)
class ColumnSpec:
    """One column: its kind plus fitted statistics.

    For categorical columns `vocabulary` holds the ordered distinct values.
    For numerical columns, min/max/mean/std and the interior quantile bin
    edges are filled by `fit_bins` on the train split.
    """

    name: str
    kind: str
    vocabulary: tuple[str, ...] | None = None
    minimum: float | None = None
    maximum: float | None = None
    mean: float | None = None
    std: float | None = None
    bin_edges: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERICAL):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.vocabulary is not None and len(set(self.vocabulary)) != len(self.vocabulary):
                raise DataError(f"column {self.name!r}: duplicate vocabulary entries")
        if self.bin_edges is not None:
            edges = self.bin_edges
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise DataError(f"column {self.name!r}: bin edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        """Number of bins induced by the fitted edges (1 when no edges)."""
        return 1 if not self.bin_edges else len(self.bin_edges) + 1

    def bin_of(self, value: float) -> int:
        """Bin index for a value; bin k covers (edge_{k-1}, edge_k]."""
        if not self.bin_edges:
            return 0
        return int(np.searchsorted(np.asarray(self.bin_edges), value, side="left"))


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[ColumnSpec, ...]
    label_index: int

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        if not 0 <= self.label_index < len(self.columns):
            raise DataError(f"label index {self.label_index} out of range")
        label = self.columns[self.label_index]
        if label.kind != CATEGORICAL:
            raise DataError(f"label column {label.name!r} must be categorical")
        if label.vocabulary is not None and len(label.vocabulary) < 2:
            raise DataError(f"label column {label.name!r} needs at least 2 classes")

    @property
    def label_column(self) -> ColumnSpec:
        return self.columns[self.label_index]

    @property
    def feature_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.columns)) if i != self.label_index)

    @property
    def n_features(self) -> int:
        return len(self.columns) - 1

    def header(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_named(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise DataError(f"no column named {name!r}")


@dataclass(frozen=True)
class Table:
    schema: TableSchema
    rows: tuple[Row, ...]

    def __post_init__(self):
        arity = len(self.schema.columns)
        for i, row in enumerate(self.rows):
            if len(row) != arity:
                raise DataError(f"row {i}: expected {arity} values, got {len(row)}")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column_values(self, index: int) -> list:
        return [row[index] for row in self.rows]

    def label_values(self) -> list[str]:
        return self.column_values(self.schema.label_index)

    def vocabulary_violations(self) -> list[tuple[int, str]]:
        """(row index, column name) pairs whose categorical value is out of
        vocabulary. Only synthetic tables awaiting validation may have any."""
        bad = []
        for j, col in enumerate(self.schema.columns):
            if col.kind != CATEGORICAL or col.vocabulary is None:
                continue
            vocab = set(col.vocabulary)
            for i, row in enumerate(self.rows):
                if row[j] not in vocab:
                    bad.append((i, col.name))
        return bad


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise DataError("split needs three nonnegative ratios")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DataError(f"split ratios sum to {sum(self.ratios)}, expected 1")


def parse_number(text: str) -> float | None:
    """Parse a finite decimal; None when the text is not one."""
    s = text.strip()
    if not s or "_" in s:
        return None
    try:
        value = float(s)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_schema_hint(path: str | Path) -> tuple[dict[str, str], str | None]:
    """Read a schema hint file: JSON with column kinds and the label name."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    kinds = {str(k): str(v) for k, v in raw.get("kinds", {}).items()}
    for name, kind in kinds.items():
        if kind not in (CATEGORICAL, NUMERICAL):
            raise DataError(f"schema hint: column {name!r} has unknown kind {kind!r}")
    label = raw.get("label")
    return kinds, (str(label) if label is not None else None)


def load_csv(
    path: str | Path,
    kinds_hint: dict[str, str] | None = None,
    label_column: str | None = None,
) -> Table:
    """Load an RFC-4180 CSV with a header row into a typed Table.

    Without a hint a column is numerical iff every non-empty cell parses as a
    finite decimal; the label column (default: last) is always categorical.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        raw_rows = list(reader)
    if not raw_rows:
        raise DataError(f"{path}: no data rows")

    n_cols = len(header)
    for i, row in enumerate(raw_rows):
        if len(row) != n_cols:
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {n_cols}")

    if label_column is not None:
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        label_index = header.index(label_column)
    else:
        label_index = n_cols - 1

    kinds: list[str] = []
    for j, name in enumerate(header):
        if j == label_index:
            kinds.append(CATEGORICAL)
        elif kinds_hint and name in kinds_hint:
            kinds.append(kinds_hint[name])
        else:
            cells = [r[j] for r in raw_rows if r[j].strip() != ""]
            numeric = bool(cells) and all(parse_number(c) is not None for c in cells)
            kinds.append(NUMERICAL if numeric else CATEGORICAL)

    rows: list[Row] = []
    for i, raw in enumerate(raw_rows):
        values: list = []
        for j, cell in enumerate(raw):
            if kinds[j] == NUMERICAL:
                if cell.strip() == "":
                    raise DataError(f"{path}: row {i + 1}, column {header[j]!r}: empty numerical cell")
                value = parse_number(cell)
                if value is None:
                    raise DataError(
                        f"{path}: row {i + 1}, column {header[j]!r}: {cell!r} is not a finite number"
                    )
                values.append(value)
            else:
                values.append(cell if cell != "" else MISSING_TOKEN)
        rows.append(tuple(values))

    columns = []
    for j, name in enumerate(header):
        if kinds[j] == NUMERICAL:
            columns.append(ColumnSpec(name=name, kind=NUMERICAL))
        else:
            seen: dict[str, None] = {}
            for row in rows:
                seen.setdefault(row[j], None)
            columns.append(ColumnSpec(name=name, kind=CATEGORICAL, vocabulary=tuple(seen)))

    schema = TableSchema(columns=tuple(columns), label_index=label_index)
    return Table(schema=schema, rows=tuple(rows))


def format_value(value) -> str:
    return repr(float(value)) if isinstance(value, (int, float)) else str(value)


def write_csv(table: Table, path: str | Path) -> None:
    """Write a Table back to CSV; numerical cells use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.schema.header())
        for row in table.rows:
            writer.writerow([format_value(v) for v in row])


def load_table_with_schema(path: str | Path, schema: TableSchema) -> Table:
    """Load a CSV that must conform to an existing schema (pipeline artifacts)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if tuple(header) != schema.header():
            raise DataError(f"{path}: header {header} does not match schema {schema.header()}")
        rows: list[Row] = []
        for i, raw in enumerate(reader):
            if len(raw) != len(schema.columns):
                raise DataError(f"{path}: row {i + 1} has {len(raw)} cells")
            values: list = []
            for cell, col in zip(raw, schema.columns):
                if col.kind == NUMERICAL:
                    value = parse_number(cell)
                    if value is None:
                        raise DataError(f"{path}: row {i + 1}, column {col.name!r}: bad number {cell!r}")
                    values.append(value)
                else:
                    value = cell if cell != "" else MISSING_TOKEN
                    if col.vocabulary is not None and value not in col.vocabulary:
                        raise DataError(
                            f"{path}: row {i + 1}, column {col.name!r}: {value!r} not in vocabulary"
                        )
                    values.append(value)
            rows.append(tuple(values))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Table(schema=schema, rows=tuple(rows))


def split(table: Table, spec: SplitSpec) -> tuple[Table, Table, Table]:
    """Deterministic shuffled partition into (train, valid, test).

    Train and valid sizes are floor(ratio * n); leftover rows go to test,
    matching the published 8:1:1 reference sizes.
    """
    if table.n_rows == 0:
        raise DataError("cannot split an empty table")
    n = table.n_rows
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    n_train = int(math.floor(n * spec.ratios[0] + 1e-9))
    n_valid = int(math.floor(n * spec.ratios[1] + 1e-9))
    idx_train = order[:n_train]
    idx_valid = order[n_train : n_train + n_valid]
    idx_test = order[n_train + n_valid :]

    def take(indices) -> Table:
        return Table(schema=table.schema, rows=tuple(table.rows[i] for i in indices))

    return take(idx_train), take(idx_valid), take(idx_test)


def fit_bins(table: Table, n_bins: int = 20) -> TableSchema:
    """Fit per-column statistics and quantile bin edges on a (train) table.

    Numerical columns gain min/max/mean/std plus up to n_bins quantile bins;
    duplicate quantiles collapse, so the effective count may be lower.
    Categorical columns are untouched.
    """
    if n_bins < 2:
        raise DataError(f"bin count must be >= 2, got {n_bins}")
    new_columns = []
    for j, col in enumerate(table.schema.columns):
        if col.kind != NUMERICAL:
            new_columns.append(col)
            continue
        values = np.asarray(table.column_values(j), dtype=np.float64)
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            warnings.warn(f"column {col.name!r} is constant; using a single bin", stacklevel=2)
            edges: tuple[float, ...] = ()
        else:
            qs = np.quantile(values, [k / n_bins for k in range(1, n_bins)])
            # edges at the max would create an always-empty top bin
            edges = tuple(float(e) for e in np.unique(qs) if e < hi)
        new_columns.append(
            replace(
                col,
                minimum=lo,
                maximum=hi,
                mean=float(values.mean()),
                std=float(values.std()),
                bin_edges=edges,
            )
        )
    return TableSchema(columns=tuple(new_columns), label_index=table.schema.label_index)


def with_schema(table: Table, schema: TableSchema) -> Table:
    """Rebind rows to a refitted schema (same columns, new statistics)."""
    if schema.header() != table.schema.header():
        raise DataError("schema headers differ; cannot rebind")
    return Table(schema=schema, rows=table.rows)


def field_slices(schema: TableSchema) -> list[slice]:
    """Encoded-vector slice per feature field, in feature order."""
    slices = []
    start = 0
    for j in schema.feature_indices:
        col = schema.columns[j]
        width = 1 if col.kind == NUMERICAL else len(col.vocabulary or ())
        slices.append(slice(start, start + width))
        start += width
    return slices


def encoded_dim(schema: TableSchema) -> int:
    return field_slices(schema)[-1].stop if schema.n_features else 0


def encode_row(row: Row, schema: TableSchema) -> np.ndarray:
    """Encode the feature fields of one row: z-scored numericals (train-split
    statistics) and one-hot categoricals. The label column is excluded."""
    out = np.zeros(encoded_dim(schema), dtype=np.float64)
    slices = field_slices(schema)
    for s, j in zip(slices, schema.feature_indices):
        col = schema.columns[j]
        if col.kind == NUMERICAL:
            if col.mean is None or col.std is None:
                raise DataError(
                    f"column {col.name!r} has no encoding statistics; run fit_bins on the train split"
                )
            scale = col.std if col.std > 0 else 1.0
            out[s.start] = (float(row[j]) - col.mean) / scale
        else:
            if col.vocabulary is None:
                raise DataError(f"column {col.name!r} has no vocabulary")
            try:
                k = col.vocabulary.index(row[j])
            except ValueError:
                raise DataError(
                    f"value {row[j]!r} not in vocabulary of column {col.name!r}"
                ) from None
            out[s.start + k] = 1.0
    return out


def encode_table(table: Table, schema: TableSchema | None = None) -> np.ndarray:
    schema = schema or table.schema
    return np.stack([encode_row(row, schema) for row in table.rows]) if table.rows else np.zeros(
        (0, encoded_dim(schema))
    )


def label_class_index(row: Row, schema: TableSchema) -> int:
    """Vocabulary index of the row's own label."""
    label = schema.label_column
    try:
        return (label.vocabulary or ()).index(row[schema.label_index])
    except ValueError:
        raise DataError(f"label {row[schema.label_index]!r} not in label vocabulary") from None


def concat_tables(a: Table, b: Table) -> Table:
    if a.schema.header() != b.schema.header():
        raise DataError("cannot concatenate tables with different columns")
    for ca, cb in zip(a.schema.columns, b.schema.columns):
        if ca.kind != cb.kind or ca.vocabulary != cb.vocabulary:
            raise DataError(f"column {ca.name!r}: incompatible schemas")
    if b.n_rows == 0:
        return a
    return Table(schema=a.schema, rows=a.rows + b.rows)


def schema_to_dict(schema: TableSchema) -> dict:
    return {
        "label_index": schema.label_index,
        "columns": [
            {
                "name": c.name,
                "kind": c.kind,
                "vocabulary": list(c.vocabulary) if c.vocabulary is not None else None,
                "minimum": c.minimum,
                "maximum": c.maximum,
                "mean": c.mean,
                "std": c.std,
                "bin_edges": list(c.bin_edges) if c.bin_edges is not None else None,
            }
            for c in schema.columns
        ],
    }


def schema_from_dict(raw: dict) -> TableSchema:
    columns = tuple(
        ColumnSpec(
            name=c["name"],
            kind=c["kind"],
            vocabulary=tuple(c["vocabulary"]) if c.get("vocabulary") is not None else None,
            minimum=c.get("minimum"),
            maximum=c.get("maximum"),
            mean=c.get("mean"),
            std=c.get("std"),
            bin_edges=tuple(c["bin_edges"]) if c.get("bin_edges") is not None else None,
        )
        for c in raw["columns"]
    )
    return TableSchema(columns=columns, label_index=raw["label_index"])


def save_schema(schema: TableSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_schema(path: str | Path) -> TableSchema:
    with open(path, encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))
