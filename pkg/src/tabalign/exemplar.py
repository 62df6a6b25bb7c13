"""Cluster the original table and draw one exemplar per cluster.

Diverse exemplar sets keep few-shot prompts from collapsing onto a few
regions of the data distribution: k-means partitions the encoded rows, then
each prompt round draws one uniformly random member per cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Row, Table, encode_table
from .errors import DataError
from .seeds import derive_seed


@dataclass(frozen=True)
class ExemplarSet:
    """One drawn exemplar per cluster; cluster_ids are distinct by construction."""

    rows: tuple[Row, ...]
    cluster_ids: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if len(self.rows) != len(self.cluster_ids):
            raise DataError("rows and cluster_ids must be parallel")
        if len(set(self.cluster_ids)) != len(self.cluster_ids):
            raise DataError("one exemplar per cluster: cluster_ids must be distinct")


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # |x|^2 + |c|^2 - 2 x.c, clipped: cancellation can dip slightly below zero
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        + np.sum(centers**2, axis=1)[None, :]
        - 2.0 * points @ centers.T
    )
    return np.maximum(d2, 0.0)

def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    min_d2 = _pairwise_sq_dists(points, points[chosen[-1]][None, :])[:, 0]
    while len(chosen) < k:
        total = float(min_d2.sum())
        if total <= 0.0:
            # all remaining mass on duplicates of chosen points: pick any unchosen index
            remaining = [i for i in range(n) if i not in set(chosen)]
            idx = int(rng.choice(remaining))
        else:
            idx = int(rng.choice(n, p=min_d2 / total))
        chosen.append(idx)
        min_d2 = np.minimum(min_d2, _pairwise_sq_dists(points, points[idx][None, :])[:, 0])
    return points[chosen].copy()


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Lloyd iterations with k-means++ init; returns the assignment per row.

    Empty clusters are reseeded to the point farthest from its current
    centroid, so every cluster is nonempty on return.
    """
    n = points.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"cluster count {k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, k, rng)
    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _pairwise_sq_dists(points, centers)
        assignment = np.argmin(d2, axis=1)
        member_d2 = d2[np.arange(n), assignment]
        for c in range(k):
            if not np.any(assignment == c):
                farthest = int(np.argmax(member_d2))
                centers[c] = points[farthest]
                assignment[farthest] = c
                member_d2[farthest] = 0.0
        new_centers = np.stack([points[assignment == c].mean(axis=0) for c in range(k)])
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift < tol:
            break
    return assignment


def cluster(table: Table, n_clusters: int, seed: int) -> np.ndarray:
    """K-means assignment over the table's encoded rows."""
    if n_clusters > table.n_rows:
        raise DataError(f"cluster count {n_clusters} exceeds row count {table.n_rows}")
    return kmeans(encode_table(table), n_clusters, seed)


def draw_exemplars(
    table: Table,
    assignment: np.ndarray,
    n_clusters: int,
    seed: int,
    round_index: int = 0,
) -> ExemplarSet:
    """Uniformly draw one row per cluster; draws are independent across rounds."""
    if len(assignment) != table.n_rows:
        raise DataError("assignment must cover every row")
    rng = np.random.default_rng(derive_seed(seed, f"round:{round_index}"))
    rows = []
    for c in range(n_clusters):
        members = np.flatnonzero(assignment == c)
        if members.size == 0:
            raise DataError(f"cluster {c} is empty")
        rows.append(table.rows[int(rng.choice(members))])
    return ExemplarSet(rows=tuple(rows), cluster_ids=tuple(range(n_clusters)), seed=seed)
