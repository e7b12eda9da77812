"""Nearest neighbors, maximum-likelihood LID estimates and neighborhood LID ratios."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset

LID_MIN = 1e-3
LID_MAX = 1e6
ZERO_DISTANCE = 1e-12

_BLOCK = 1024


class LidError(ValueError):
    pass


@dataclass(frozen=True)
class NeighborTable:
    k: int
    indices: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class NlidScores:
    lid: np.ndarray
    nlid: np.ndarray
    k: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lid", "nlid"])
            for a, b in zip(self.lid, self.nlid):
                writer.writerow([repr(float(a)), repr(float(b))])


def as_points(data) -> np.ndarray:
    """Points used for neighborhoods: a Dataset contributes features and response."""
    if isinstance(data, Dataset):
        return data.joint()
    pts = np.asarray(data, dtype=float)
    return pts.reshape(-1, 1) if pts.ndim == 1 else pts


def knn(data, k: int, metric: str = "euclidean") -> NeighborTable:
    """Exact k nearest neighbors, self excluded, ties broken by lower index."""
    if metric != "euclidean":
        raise LidError(f"unsupported metric {metric!r}")
    pts = as_points(data)
    n = pts.shape[0]
    if not 1 <= k <= n - 1:
        raise LidError(f"k must be in [1, {n - 1}], got {k}")
    indices = np.empty((n, k), dtype=int)
    distances = np.empty((n, k))
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = cdist(pts[start:stop], pts)
        rows = np.arange(stop - start)
        block[rows, rows + start] = np.inf
        # stable sort keeps lower indices first among equal distances
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        indices[start:stop] = order
        distances[start:stop] = np.take_along_axis(block, order, axis=1)
    return NeighborTable(k, indices, distances)


def lid_mle(neighbors: NeighborTable) -> np.ndarray:
    """Per-sample LID estimate ``-1 / mean(log(r_i / r_max))`` over the k neighbors."""
    r = np.maximum(neighbors.distances, ZERO_DISTANCE)
    mean_log = np.mean(np.log(r / r[:, -1:]), axis=1)
    # all-equal distances give mean_log == 0, where the estimator diverges
    degenerate = mean_log >= 0
    lid = np.where(degenerate, LID_MAX, -1.0 / np.where(degenerate, -1.0, mean_log))
    return np.clip(lid, LID_MIN, LID_MAX)


def nlid(lid, neighbors: NeighborTable) -> NlidScores:
    """Mean LID of each sample's neighbors divided by its own LID."""
    lid = np.asarray(lid, dtype=float)
    if lid.shape[0] != neighbors.indices.shape[0]:
        raise LidError(f"lid has {lid.shape[0]} entries, neighbor table has {neighbors.indices.shape[0]} rows")
    ratio = lid[neighbors.indices].mean(axis=1) / lid
    return NlidScores(lid, ratio, neighbors.k)


def nlid_scores(data, k: int) -> NlidScores:
    table = knn(data, k)
    return nlid(lid_mle(table), table)


def nlid_minibatch(data, k: int, batch_size: int, seed) -> NlidScores:
    """Scores computed inside random disjoint batches instead of the whole set.

    A trailing batch smaller than ``k + 1`` is folded into the previous one.
    """
    pts = as_points(data)
    n = pts.shape[0]
    if batch_size < k + 1:
        raise LidError(f"batch_size must be at least k+1={k + 1}, got {batch_size}")
    if batch_size > n:
        raise LidError(f"batch_size {batch_size} exceeds sample count {n}")
    perm = np.random.default_rng(seed).permutation(n)
    cuts = list(range(0, n, batch_size))
    batches = [perm[c:c + batch_size] for c in cuts]
    if len(batches) > 1 and len(batches[-1]) < k + 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    lid = np.empty(n)
    ratio = np.empty(n)
    for batch in batches:
        members = np.sort(batch)
        scores = nlid_scores(pts[members], k)
        lid[members] = scores.lid
        ratio[members] = scores.nlid
    return NlidScores(lid, ratio, k)
