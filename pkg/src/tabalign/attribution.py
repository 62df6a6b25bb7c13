"""Gradient-based feature importances, pairwise interaction maps, and
extraction of non-independent feature groups.

Per-sample scores live in encoded space and are reduced to field level by
summing the signed contributions of each one-hot block, so a categorical
field acts as a single coordinate. The interaction of fields i and j is the
baseline-relative displacement product times the model's input Hessian
evaluated at the baseline; aggregating absolute per-sample maps over a data
sample surfaces the strongest pairwise dependencies in the whole dataset.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Row, Table, TableSchema, encode_row, encode_table, field_slices, label_class_index
from .errors import DataError


@dataclass(frozen=True)
class BaselineSet:
    """Reference inputs representing 'feature absent'; vectors is (n, dim)."""

    kind: str  # "all_zeros" | "sampled"
    vectors: np.ndarray
    note: str = ""

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise DataError("baseline set needs at least one vector")

    @classmethod
    def all_zeros(cls, dim: int) -> "BaselineSet":
        return cls(kind="all_zeros", vectors=np.zeros((1, dim)), note="single all-zero baseline")

    @classmethod
    def sampled(cls, table: Table, count: int, seed: int) -> "BaselineSet":
        rng = np.random.default_rng(seed)
        idx = rng.choice(table.n_rows, size=min(count, table.n_rows), replace=False)
        rows = Table(schema=table.schema, rows=tuple(table.rows[i] for i in idx))
        return cls(kind="sampled", vectors=encode_table(rows), note=f"{len(idx)} sampled rows")


@dataclass(frozen=True)
class InteractionMap:
    """Symmetric nonnegative field-by-field interaction strengths.

    The diagonal is stored for completeness but self-interaction is not a
    pair: thresholding only ever looks off-diagonal.
    """

    gamma: np.ndarray
    sample_count: int
    threshold_gamma: float | None = None

    def __post_init__(self):
        g = self.gamma
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise DataError("interaction map must be square")
        if np.max(np.abs(g - g.T)) > 1e-9:
            raise DataError("interaction map must be symmetric")
        if np.min(g) < 0:
            raise DataError("interaction map entries must be nonnegative")

    @property
    def n_fields(self) -> int:
        return self.gamma.shape[0]

    def max_off_diagonal(self) -> float:
        if self.n_fields < 2:
            return 0.0
        mask = ~np.eye(self.n_fields, dtype=bool)
        return float(self.gamma[mask].max())


@dataclass(frozen=True)
class FeatureGroups:
    """Disjoint multi-field groups; every uncovered field is an implicit singleton."""

    groups: tuple[tuple[int, ...], ...]
    n_fields: int
    gamma_threshold: float

    def __post_init__(self):
        seen: set[int] = set()
        for group in self.groups:
            if len(group) < 2:
                raise DataError("groups must have at least two fields")
            if seen & set(group):
                raise DataError("groups must be pairwise disjoint")
            seen.update(group)
        if seen and (min(seen) < 0 or max(seen) >= self.n_fields):
            raise DataError("group field index out of range")

    def singleton_fields(self) -> tuple[int, ...]:
        covered = {f for g in self.groups for f in g}
        return tuple(f for f in range(self.n_fields) if f not in covered)

    def factors(self) -> tuple[tuple[int, ...], ...]:
        """All factorization units: multi-field groups then singletons."""
        return self.groups + tuple((f,) for f in self.singleton_fields())


def _field_reduce(enc_matrix: np.ndarray, schema: TableSchema) -> np.ndarray:
    slices = field_slices(schema)
    k = len(slices)
    indicator = np.zeros((enc_matrix.shape[0], k))
    for fi, s in enumerate(slices):
        indicator[s, fi] = 1.0
    return indicator.T @ enc_matrix @ indicator


class _HessianCache:
    """One Hessian per (baseline index, class index); with the default
    singleton zero baseline this is a single evaluation reused everywhere."""

    def __init__(self, model, baselines: BaselineSet):
        self._model = model
        self._baselines = baselines
        self._store: dict[tuple[int, int], np.ndarray] = {}

    def get(self, baseline_index: int, class_index: int) -> np.ndarray:
        key = (baseline_index, class_index)
        if key not in self._store:
            self._store[key] = self._model.input_hessian(
                self._baselines.vectors[baseline_index], class_index
            )
        return self._store[key]


def expected_gradients(model, row: Row, baselines: BaselineSet) -> np.ndarray:
    """Per-field importance: mean over baselines of (v - v_b) * dlogit/dv at v,
    for the logit of the row's own label; one-hot blocks summed per field."""
    schema: TableSchema = model.schema
    v = encode_row(row, schema)
    ci = label_class_index(row, schema)
    grad = model.input_gradient(v, ci)
    diff = v - baselines.vectors.mean(axis=0)
    per_dim = diff * grad
    slices = field_slices(schema)
    return np.array([per_dim[s].sum() for s in slices])


def _interaction_encoded(v: np.ndarray, ci: int, baselines: BaselineSet, cache: _HessianCache) -> np.ndarray:
    dim = v.size
    total = np.zeros((dim, dim))
    for bi in range(baselines.vectors.shape[0]):
        bvec = baselines.vectors[bi]
        dv = v - bvec
        total += np.outer(dv, dv) * cache.get(bi, ci)
    return total / baselines.vectors.shape[0]


def interaction_map(model, row: Row, baselines: BaselineSet) -> np.ndarray:
    """Signed per-sample field interaction matrix; the Hessian of the true-class
    logit is evaluated at each baseline, not at the sample."""
    schema: TableSchema = model.schema
    v = encode_row(row, schema)
    ci = label_class_index(row, schema)
    cache = _HessianCache(model, baselines)
    fields = _field_reduce(_interaction_encoded(v, ci, baselines, cache), schema)
    return (fields + fields.T) / 2.0


def aggregate_map(model, rows: list[Row], baselines: BaselineSet) -> InteractionMap:
    """Entrywise sum of |per-sample maps| over the given rows."""
    if not rows:
        raise DataError("aggregate_map needs at least one row")
    schema: TableSchema = model.schema
    cache = _HessianCache(model, baselines)
    total = np.zeros((schema.n_features, schema.n_features))
    for row in rows:
        v = encode_row(row, schema)
        ci = label_class_index(row, schema)
        fields = _field_reduce(_interaction_encoded(v, ci, baselines, cache), schema)
        total += np.abs((fields + fields.T) / 2.0)
    return InteractionMap(gamma=total, sample_count=len(rows))


def merge_pairs(pairs: list[tuple[int, int]], n_fields: int) -> tuple[tuple[int, ...], ...]:
    """Connected components of the pair graph, as sorted tuples of size >= 2,
    ordered by smallest member."""
    parent = list(range(n_fields))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    components: dict[int, list[int]] = {}
    for i, j in pairs:
        for f in (i, j):
            components.setdefault(find(f), []).append(f)
    groups = [tuple(sorted(set(members))) for members in components.values()]
    return tuple(sorted((g for g in groups if len(g) >= 2), key=lambda g: g[0]))


def extract_groups(im: InteractionMap, threshold_fraction: float = 0.5) -> FeatureGroups:
    """Threshold the aggregated map at threshold_fraction * (max off-diagonal
    entry) and merge surviving pairs into groups.

    The comparison is strict, except at threshold_fraction == 1.0 where ">="
    keeps the argmax pair itself. An all-zero map yields no groups.
    """
    if not 0.0 < threshold_fraction <= 1.0:
        raise DataError(f"threshold fraction must be in (0, 1], got {threshold_fraction}")
    k = im.n_fields
    peak = im.max_off_diagonal()
    cutoff = threshold_fraction * peak
    pairs: list[tuple[int, int]] = []
    if peak > 0.0:
        for i in range(k):
            for j in range(i + 1, k):
                value = im.gamma[i, j]
                if value > cutoff or (threshold_fraction == 1.0 and value >= cutoff):
                    pairs.append((i, j))
    return FeatureGroups(groups=merge_pairs(pairs, k), n_fields=k, gamma_threshold=cutoff)


def write_interaction_csv(im: InteractionMap, schema: TableSchema, path: str | Path) -> None:
    names = [schema.columns[j].name for j in schema.feature_indices]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["field", *names])
        for name, row in zip(names, im.gamma):
            writer.writerow([name, *[repr(float(x)) for x in row]])


def groups_to_dict(groups: FeatureGroups) -> dict:
    return {
        "n_fields": groups.n_fields,
        "gamma_threshold": groups.gamma_threshold,
        "groups": [list(g) for g in groups.groups],
    }


def save_groups(groups: FeatureGroups, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(groups_to_dict(groups), fh, indent=2)
        fh.write("\n")


def load_groups(path: str | Path) -> FeatureGroups:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return FeatureGroups(
        groups=tuple(tuple(g) for g in raw["groups"]),
        n_fields=raw["n_fields"],
        gamma_threshold=raw["gamma_threshold"],
    )
