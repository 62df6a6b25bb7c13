"""Distribution alignment: smoothed frequency models over feature groups,
importance weights original/synthetic, and weighted resampling.

The joint probability of a row factorizes over the non-independent groups
plus the remaining singleton fields, times the discriminant probability of
the row's own label from a classifier trained on the same dataset. Weights
are the ratio of that joint under the original data to the joint under the
raw synthetic data; resampling by those weights pulls the synthetic sample
back toward the original distribution.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribution import FeatureGroups
from .data import Row, Table, TableSchema, format_value, label_class_index
from .errors import DataError
from .predictor import PredictorSpec, TrainedPredictor, train


@dataclass(frozen=True)
class FactorTable:
    """Smoothed probabilities for one factor (group or singleton).

    P(v) = (count(v) + alpha) / (N + alpha * (S + 1)) with S observed
    value-tuples; the '+1' slot is the shared bucket for unseen tuples.
    """

    probs: dict[tuple, float]
    unseen: float

    def probability(self, key: tuple) -> float:
        return self.probs.get(key, self.unseen)


@dataclass(frozen=True)
class FrequencyModel:
    factors: dict[tuple[int, ...], FactorTable]
    alpha: float
    schema: TableSchema
    source_tag: str


def _factor_key(row: Row, fields: tuple[int, ...], schema: TableSchema) -> tuple:
    """Categorical values stay as-is; numerical values map to their bin index."""
    key = []
    for f in fields:
        j = schema.feature_indices[f]
        col = schema.columns[j]
        key.append(row[j] if col.kind == "categorical" else col.bin_of(float(row[j])))
    return tuple(key)


def fit_frequencies(
    table: Table, groups: FeatureGroups, schema: TableSchema, alpha: float = 1.0, source_tag: str = ""
) -> FrequencyModel:
    """Additively smoothed frequency table per factor, counted over `table`."""
    if table.n_rows == 0:
        raise DataError("cannot fit frequencies on an empty table")
    for j in schema.feature_indices:
        col = schema.columns[j]
        if col.kind == "numerical" and col.bin_edges is None:
            raise DataError(f"column {col.name!r} has no bin edges; run fit_bins first")
    if alpha < 0:
        raise DataError("smoothing alpha must be nonnegative")

    n = table.n_rows
    factors: dict[tuple[int, ...], FactorTable] = {}
    for fields in groups.factors():
        counts: dict[tuple, int] = {}
        for row in table.rows:
            key = _factor_key(row, fields, schema)
            counts[key] = counts.get(key, 0) + 1
        support = len(counts)
        denom = n + alpha * (support + 1)
        probs = {key: (c + alpha) / denom for key, c in counts.items()}
        factors[fields] = FactorTable(probs=probs, unseen=alpha / denom)
    return FrequencyModel(factors=factors, alpha=alpha, schema=schema, source_tag=source_tag)


class ClassPriorModel:
    """Fallback discriminant model when the synthetic table is single-class:
    Laplace-smoothed label marginal, independent of the features."""

    def __init__(self, schema: TableSchema, probs: np.ndarray):
        self.schema = schema
        self._probs = probs

    @classmethod
    def fit(cls, table: Table) -> "ClassPriorModel":
        vocab = table.schema.label_column.vocabulary or ()
        counts = np.array([sum(1 for v in table.label_values() if v == c) for c in vocab], dtype=np.float64)
        probs = (counts + 1.0) / (counts.sum() + len(vocab))
        return cls(table.schema, probs)

    def predict_proba(self, row: Row) -> np.ndarray:
        return self._probs


def log_joint_probability(fm: FrequencyModel, model, row: Row) -> float:
    """Log of: product of factor probabilities times the discriminant
    probability of the row's own label. -inf only possible at alpha == 0."""
    total = 0.0
    for fields, table in fm.factors.items():
        p = table.probability(_factor_key(row, fields, fm.schema))
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    proba = float(model.predict_proba(row)[label_class_index(row, fm.schema)])
    if proba <= 0.0:
        return -math.inf
    return total + math.log(proba)


def joint_probability(fm: FrequencyModel, model, row: Row) -> float:
    return math.exp(log_joint_probability(fm, model, row))


@dataclass(frozen=True)
class WeightedTable:
    table: Table
    weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != self.table.n_rows:
            raise DataError("one weight per row required")
        if np.any(self.weights <= 0):
            raise DataError("weights must be strictly positive")

    def effective_sample_size(self) -> float:
        s = float(self.weights.sum())
        return s * s / float(np.square(self.weights).sum())


def importance_weights(
    original: Table,
    synthetic: Table,
    groups: FeatureGroups,
    spec: PredictorSpec,
    alpha: float = 1.0,
    clip_percentiles: tuple[float, float] = (0.5, 99.5),
) -> WeightedTable:
    """Per-row weights P_original / P_synthetic for every synthetic row.

    Both discriminant models share one PredictorSpec (including the seed) and
    both frequency models use the groups extracted from the original data.
    Weights are clipped to the given percentiles of the raw weights.
    """
    if original.schema.header() != synthetic.schema.header():
        raise DataError("original and synthetic tables must share a schema")
    schema = original.schema

    model_o: TrainedPredictor | ClassPriorModel = train(original, spec)
    if len(set(synthetic.label_values())) < 2:
        warnings.warn(
            "synthetic table is single-class; using its label prior as the discriminant model",
            stacklevel=2,
        )
        model_s: TrainedPredictor | ClassPriorModel = ClassPriorModel.fit(synthetic)
    else:
        model_s = train(synthetic, spec)

    fm_o = fit_frequencies(original, groups, schema, alpha, source_tag="original")
    fm_s = fit_frequencies(synthetic, groups, schema, alpha, source_tag="synthetic")

    log_w = np.array(
        [
            log_joint_probability(fm_o, model_o, row) - log_joint_probability(fm_s, model_s, row)
            for row in synthetic.rows
        ]
    )
    # clipping in log space == clipping raw weights (exp is monotone), minus the overflow
    lo, hi = np.percentile(log_w, clip_percentiles)
    clipped = np.exp(np.clip(log_w, lo, hi))
    wt = WeightedTable(
        table=synthetic,
        weights=clipped,
        diagnostics={
            "n_rows": synthetic.n_rows,
            "raw_weight_min": float(np.exp(log_w.min())),
            "raw_weight_max": float(np.exp(log_w.max())),
            "clip_lower": float(np.exp(lo)),
            "clip_upper": float(np.exp(hi)),
            "weight_min": float(clipped.min()),
            "weight_max": float(clipped.max()),
        },
    )
    wt.diagnostics["effective_sample_size"] = wt.effective_sample_size()
    return wt


def resample(wt: WeightedTable, target_size: int, seed: int, with_replacement: bool = False) -> Table:
    """Weighted resampling of the synthetic rows.

    Default is without replacement via exponential sort keys (smallest
    standard-exponential / weight), preserving input row order among the
    selected. The with_replacement flag switches to a multinomial draw.
    """
    if target_size < 0:
        raise DataError("target size must be nonnegative")
    n = wt.table.n_rows
    if target_size == 0:
        return Table(schema=wt.table.schema, rows=())
    rng = np.random.default_rng(seed)
    if with_replacement:
        probs = wt.weights / wt.weights.sum()
        idx = rng.choice(n, size=target_size, replace=True, p=probs)
        return Table(schema=wt.table.schema, rows=tuple(wt.table.rows[i] for i in idx))
    if target_size > n:
        raise DataError(
            f"target size {target_size} exceeds pool {n}; use with_replacement for oversampling"
        )
    keys = rng.standard_exponential(n) / wt.weights
    selected = np.sort(np.argsort(keys)[:target_size])
    return Table(schema=wt.table.schema, rows=tuple(wt.table.rows[i] for i in selected))


def write_weights_csv(wt: WeightedTable, path: str | Path) -> None:
    """Synthetic rows with an extra __weight column for audit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*wt.table.schema.header(), "__weight"])
        for row, w in zip(wt.table.rows, wt.weights):
            writer.writerow([*[format_value(v) for v in row], repr(float(w))])


def save_diagnostics(wt: WeightedTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(wt.diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
