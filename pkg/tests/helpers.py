"""Shared fixtures: dataset builders, analytic models, finite-difference oracles."""

from __future__ import annotations

import numpy as np

from tabalign.data import CATEGORICAL, NUMERICAL, ColumnSpec, Table, TableSchema, fit_bins, with_schema


def numeric_schema(n_fields: int, names: list[str] | None = None) -> TableSchema:
    """n_fields standardized numeric features plus a binary label column.

    mean 0 / std 1 makes encoding the identity on raw values, which keeps
    analytic models easy to reason about.
    """
    names = names or [f"f{i}" for i in range(n_fields)]
    columns = [
        ColumnSpec(
            name=name,
            kind=NUMERICAL,
            minimum=-100.0,
            maximum=100.0,
            mean=0.0,
            std=1.0,
            bin_edges=(-1.0, 0.0, 1.0),
        )
        for name in names
    ]
    columns.append(ColumnSpec(name="y", kind=CATEGORICAL, vocabulary=("0", "1")))
    return TableSchema(columns=tuple(columns), label_index=n_fields)


def numeric_table(n_fields: int, rows: list[list[float]], labels: list[str] | None = None) -> Table:
    schema = numeric_schema(n_fields)
    labels = labels or ["0"] * len(rows)
    return Table(
        schema=schema,
        rows=tuple(tuple([*map(float, r), lab]) for r, lab in zip(rows, labels)),
    )


def blobs_table(
    n_per_blob: int,
    centers: list[tuple[float, float]],
    spread: float = 1.0,
    seed: int = 0,
    labels: list[str] | None = None,
) -> Table:
    """2-D Gaussian blobs; each blob gets its own label unless given."""
    rng = np.random.default_rng(seed)
    rows = []
    blob_labels = labels or [str(i % 2) for i in range(len(centers))]
    for center, lab in zip(centers, blob_labels):
        points = rng.normal(loc=center, scale=spread, size=(n_per_blob, 2))
        rows.extend((float(p[0]), float(p[1]), lab) for p in points)
    vocab = tuple(dict.fromkeys(blob_labels))
    if len(vocab) < 2:
        vocab = vocab + ("_other",)
    schema = TableSchema(
        columns=(
            ColumnSpec(name="x0", kind=NUMERICAL),
            ColumnSpec(name="x1", kind=NUMERICAL),
            ColumnSpec(name="y", kind=CATEGORICAL, vocabulary=vocab),
        ),
        label_index=2,
    )
    table = Table(schema=schema, rows=tuple(rows))
    return with_schema(table, fit_bins(table, 10))


def mixed_table(n: int, seed: int = 0, skew: float = 0.5) -> Table:
    """Mixed-type table: skewable binary category, a 3-way category, one
    numeric feature carrying the label signal, binary label."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        y = int(rng.random() < 0.5)
        c1 = "a" if rng.random() < skew else "b"
        c2 = ("x", "y", "z")[rng.integers(3)]
        n1 = float(rng.normal(2.0 * y, 1.0))
        rows.append((c1, c2, n1, str(y)))
    schema = TableSchema(
        columns=(
            ColumnSpec(name="c1", kind=CATEGORICAL, vocabulary=("a", "b")),
            ColumnSpec(name="c2", kind=CATEGORICAL, vocabulary=("x", "y", "z")),
            ColumnSpec(name="n1", kind=NUMERICAL),
            ColumnSpec(name="y", kind=CATEGORICAL, vocabulary=("0", "1")),
        ),
        label_index=3,
    )
    table = Table(schema=schema, rows=tuple(rows))
    return with_schema(table, fit_bins(table, 8))


def modal_table(n: int, seed: int = 0, minority: float = 0.15) -> Table:
    """Two well-separated modes with an imbalanced mix; columns correlate
    with the mode so exemplar coverage shows up in every marginal."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        mode = int(rng.random() < minority)
        cat = "m1" if mode else "m0"
        u = float(rng.normal(6.0 * mode, 1.0))
        w = float(rng.normal(3.0 * mode, 1.0))
        y = str(int(u + rng.normal(0.0, 1.0) > 3.0))
        rows.append((cat, u, w, y))
    schema = TableSchema(
        columns=(
            ColumnSpec(name="m", kind=CATEGORICAL, vocabulary=("m0", "m1")),
            ColumnSpec(name="u", kind=NUMERICAL),
            ColumnSpec(name="w", kind=NUMERICAL),
            ColumnSpec(name="y", kind=CATEGORICAL, vocabulary=("0", "1")),
        ),
        label_index=3,
    )
    table = Table(schema=schema, rows=tuple(rows))
    return with_schema(table, fit_bins(table, 8))


class LinearLogit:
    """Analytic model: every class logit is w . v."""

    def __init__(self, schema: TableSchema, w):
        self.schema = schema
        self.w = np.asarray(w, dtype=np.float64)

    def logit(self, v, class_index):
        return float(self.w @ np.asarray(v))

    def input_gradient(self, v, class_index):
        return self.w.copy()

    def input_hessian(self, v, class_index):
        return np.zeros((self.w.size, self.w.size))


class BilinearLogit:
    """Analytic model: every class logit is scale * v[i] * v[j]."""

    def __init__(self, schema: TableSchema, i: int, j: int, dim: int, scale: float = 1.0):
        self.schema = schema
        self.i, self.j, self.dim, self.scale = i, j, dim, scale

    def logit(self, v, class_index):
        return self.scale * float(v[self.i] * v[self.j])

    def input_gradient(self, v, class_index):
        g = np.zeros(self.dim)
        g[self.i] = self.scale * v[self.j]
        g[self.j] = self.scale * v[self.i]
        return g

    def input_hessian(self, v, class_index):
        h = np.zeros((self.dim, self.dim))
        h[self.i, self.j] = h[self.j, self.i] = self.scale
        return h


def fd_gradient(f, v: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function."""
    v = np.asarray(v, dtype=np.float64)
    grad = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        grad[i] = (f(v + e) - f(v - e)) / (2 * h)
    return grad


def fd_hessian(f, v: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Second-order central differences of a scalar function."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    hess = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros_like(v)
            ej = np.zeros_like(v)
            ei[i] = h
            ej[j] = h
            hess[i, j] = (f(v + ei + ej) - f(v + ei - ej) - f(v - ei + ej) + f(v - ei - ej)) / (4 * h * h)
    return hess


def random_predictor(n_inputs: int, seed: int, hidden=(6, 5), n_classes: int = 2):
    """A small random TrainedPredictor over a numeric schema, for oracles."""
    from tabalign.predictor import PredictorSpec, TrainedPredictor

    rng = np.random.default_rng(seed)
    schema = numeric_schema(n_inputs)
    sizes = [n_inputs, *hidden]
    weights = [rng.normal(0, 0.6, size=(o, i)) for i, o in zip(sizes, sizes[1:])]
    biases = [rng.normal(0, 0.2, size=o) for o in hidden]
    weights.append(rng.normal(0, 0.6, size=(n_classes, hidden[-1])))
    biases.append(rng.normal(0, 0.2, size=n_classes))
    spec = PredictorSpec(hidden_layers=tuple(hidden), epochs=1)
    return TrainedPredictor(spec=spec, schema=schema, weights=weights, biases=biases)
