"""Utility and similarity measurement for synthetic tables.

Augmentation utility trains the downstream classifier on original-plus-
synthetic rows; efficacy utility trains on synthetic rows alone. Both
evaluate on the held-out test split, repeat with incremented seeds, and
report the mean. The similarity score blends per-column shape agreement
(total variation / Kolmogorov-Smirnov) with pairwise trend agreement
(Pearson or Cramer's V deltas).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, NUMERICAL, Table, concat_tables, encode_table
from .errors import DataError
from .predictor import PredictorSpec, train

LOGLOSS_CLAMP = 1e-7


@dataclass(frozen=True)
class UtilityReport:
    mode: str  # "augmentation" | "mle"
    runs: int
    per_run: dict[str, tuple[float, ...]]
    mean: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "runs": self.runs,
            "per_run": {k: list(v) for k, v in self.per_run.items()},
            "mean": dict(self.mean),
        }


@dataclass(frozen=True)
class SimilarityReport:
    column_shape_scores: dict[str, float]
    pair_trend_scores: dict[str, float]
    overall_pct: float

    def to_dict(self) -> dict:
        return {
            "column_shape_scores": dict(self.column_shape_scores),
            "pair_trend_scores": dict(self.pair_trend_scores),
            "overall_pct": self.overall_pct,
        }


def auc_score(scores, labels) -> float:
    """Rank-statistic AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise DataError("empty score list")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def logloss_score(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def binary_metrics(scores, labels) -> tuple[float, float]:
    return auc_score(scores, labels), logloss_score(scores, labels)


def multiclass_metrics(probs: np.ndarray, labels) -> tuple[float, float, float]:
    """Weighted precision, recall, and F1; per-class scores weighted by
    true-class support, zero where a denominator vanishes."""
    labels = np.asarray(labels, dtype=np.int64)
    predicted = np.argmax(probs, axis=1)
    classes = np.unique(labels)
    precision = recall = f1 = 0.0
    for c in classes:
        support = float(np.sum(labels == c))
        tp = float(np.sum((predicted == c) & (labels == c)))
        fp = float(np.sum((predicted == c) & (labels != c)))
        fn = float(np.sum((predicted != c) & (labels == c)))
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        weight = support / labels.size
        precision += weight * p
        recall += weight * r
        f1 += weight * f
    return precision, recall, f1


def _evaluate_model(model, test: Table) -> dict[str, float]:
    vocab = test.schema.label_column.vocabulary or ()
    y = np.array([vocab.index(v) for v in test.label_values()], dtype=np.int64)
    probs = model.predict_proba_table(test)
    if len(vocab) == 2:
        scores = probs[:, 1]
        auc, ll = binary_metrics(scores, (y == 1).astype(np.int64))
        return {"auc": auc, "logloss": ll}
    p, r, f = multiclass_metrics(probs, y)
    return {"precision": p, "recall": r, "f1": f}


def _utility(train_table: Table, test: Table, spec: PredictorSpec, runs: int, mode: str) -> UtilityReport:
    if train_table.schema.header() != test.schema.header():
        raise DataError("train and test tables must share a schema")
    per_run: dict[str, list[float]] = {}
    for k in range(runs):
        model = train(train_table, replace(spec, seed=spec.seed + k))
        metrics = _evaluate_model(model, test)
        for name, value in metrics.items():
            per_run.setdefault(name, []).append(value)
    means = {name: float(np.mean(vals)) for name, vals in per_run.items()}
    return UtilityReport(
        mode=mode,
        runs=runs,
        per_run={k: tuple(v) for k, v in per_run.items()},
        mean=means,
    )


def augmentation_utility(
    train_table: Table,
    valid: Table,
    test: Table,
    synth: Table | None,
    spec: PredictorSpec,
    runs: int = 10,
) -> UtilityReport:
    """Train on original-plus-synthetic rows, evaluate on test. With an empty
    synth this is exactly the no-synthetic baseline protocol."""
    combined = train_table if synth is None or synth.n_rows == 0 else concat_tables(train_table, synth)
    return _utility(combined, test, spec, runs, mode="augmentation")


def mle_utility(train_synth: Table, test: Table, spec: PredictorSpec, runs: int = 10) -> UtilityReport:
    """Train on synthetic rows alone, evaluate on test."""
    return _utility(train_synth, test, spec, runs, mode="mle")


def tv_distance(values_a: list, values_b: list) -> float:
    """Total variation distance between two empirical discrete distributions."""
    support = sorted(set(values_a) | set(values_b), key=repr)
    pa = np.array([values_a.count(v) for v in support], dtype=np.float64)
    pb = np.array([values_b.count(v) for v in support], dtype=np.float64)
    pa /= max(pa.sum(), 1.0)
    pb /= max(pb.sum(), 1.0)
    return 0.5 * float(np.abs(pa - pb).sum())


def ks_statistic(values_a, values_b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    xs = np.sort(np.asarray(values_a, dtype=np.float64))
    ys = np.sort(np.asarray(values_b, dtype=np.float64))
    grid = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, grid, side="right") / xs.size
    cdf_y = np.searchsorted(ys, grid, side="right") / ys.size
    return float(np.max(np.abs(cdf_x - cdf_y)))


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if x.std() == 0.0 or y.std() == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def _cramers_v(codes_a: np.ndarray, codes_b: np.ndarray) -> float | None:
    ka, kb = int(codes_a.max()) + 1, int(codes_b.max()) + 1
    if min(ka, kb) < 2:
        return None
    observed = np.zeros((ka, kb))
    np.add.at(observed, (codes_a, codes_b), 1.0)
    n = observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    mask = expected > 0
    chi2 = float(np.sum((observed[mask] - expected[mask]) ** 2 / expected[mask]))
    v2 = chi2 / (n * (min(ka, kb) - 1))
    return float(np.sqrt(min(max(v2, 0.0), 1.0)))


def _pair_codes(table: Table, j: int) -> np.ndarray:
    """Discrete codes for a column: vocabulary index or bin index."""
    col = table.schema.columns[j]
    if col.kind == CATEGORICAL:
        vocab = list(col.vocabulary or ())
        lookup = {v: i for i, v in enumerate(vocab)}
        return np.array([lookup[v] for v in table.column_values(j)], dtype=np.int64)
    if col.bin_edges is None:
        raise DataError(f"column {col.name!r} has no bin edges; fit bins before scoring similarity")
    return np.array([col.bin_of(float(v)) for v in table.column_values(j)], dtype=np.int64)


def _pair_association(table: Table, i: int, j: int) -> float | None:
    ci, cj = table.schema.columns[i], table.schema.columns[j]
    if ci.kind == NUMERICAL and cj.kind == NUMERICAL:
        return _pearson(
            np.asarray(table.column_values(i), dtype=np.float64),
            np.asarray(table.column_values(j), dtype=np.float64),
        )
    return _cramers_v(_pair_codes(table, i), _pair_codes(table, j))


def sdv_similarity(a: Table, b: Table) -> SimilarityReport:
    """Column-shape and pair-trend similarity between two tables, in [0, 1]
    per component; overall is the mean of the two family means, as a percent.

    Shapes: 1 - TV for categorical columns, 1 - KS for numerical ones.
    Trends: 1 - |assoc_a - assoc_b| / 2 with Pearson for numeric-numeric
    pairs and Cramer's V when a categorical is involved. A pair whose
    association is undefined in both tables scores 1 by convention;
    undefined on one side only counts as zero association.
    """
    if a.schema.header() != b.schema.header():
        raise DataError("tables must share a schema")
    schema = a.schema
    shapes: dict[str, float] = {}
    for j, col in enumerate(schema.columns):
        va, vb = a.column_values(j), b.column_values(j)
        if col.kind == CATEGORICAL:
            shapes[col.name] = 1.0 - tv_distance(va, vb)
        else:
            shapes[col.name] = 1.0 - ks_statistic(va, vb)

    trends: dict[str, float] = {}
    for i in range(len(schema.columns)):
        for j in range(i + 1, len(schema.columns)):
            ra = _pair_association(a, i, j)
            rb = _pair_association(b, i, j)
            name = f"{schema.columns[i].name}|{schema.columns[j].name}"
            if ra is None and rb is None:
                trends[name] = 1.0
            else:
                trends[name] = 1.0 - abs((ra or 0.0) - (rb or 0.0)) / 2.0

    families = [float(np.mean(list(shapes.values())))]
    if trends:
        families.append(float(np.mean(list(trends.values()))))
    return SimilarityReport(
        column_shape_scores=shapes,
        pair_trend_scores=trends,
        overall_pct=100.0 * float(np.mean(families)),
    )


def write_embedding_csv(table: Table, path: str | Path) -> None:
    """Encoded rows plus the label, ready for external 2-D embedding tools."""
    matrix = encode_table(table)
    labels = table.label_values()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"dim_{i}" for i in range(matrix.shape[1])] + ["label"])
        for vec, label in zip(matrix, labels):
            writer.writerow([repr(float(x)) for x in vec] + [label])


def save_report(report: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
