"""Average-linkage agglomerative clustering and clustering diagnostics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

MIN_GAP_RATIO = 2.0  # below this relative gap the data is treated as one cluster


@dataclass(frozen=True)
class Merge:
    a: int  # cluster ids: 0..n-1 are leaves, n+i is the cluster made by merge i
    b: int
    distance: float
    size: int


@dataclass(frozen=True)
class RoleClustering:
    merges: tuple[Merge, ...]
    labels: tuple[int, ...]  # cluster index per vector, 0 = largest cluster
    cut_distance: float

    @property
    def n_clusters(self) -> int:
        return len(set(self.labels))

    def sizes(self) -> list[int]:
        c = Counter(self.labels)
        return [c[i] for i in range(self.n_clusters)]


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.clip(d2, 0.0, None))


def average_linkage(x: np.ndarray) -> list[Merge]:
    """Agglomerative clustering with UPGMA (average) linkage on Euclidean distances.

    Among equally close pairs the one whose smallest member indices are
    lowest merges first.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    dist = pairwise_distances(x)
    active: dict[int, list[int]] = {i: [i] for i in range(n)}
    low = {i: i for i in range(n)}  # smallest member index per active cluster
    d: dict[tuple[int, int], float] = {(i, j): float(dist[i, j]) for i in range(n) for j in range(i + 1, n)}
    merges: list[Merge] = []
    next_id = n
    while len(active) > 1:
        best = None
        for (i, j), dij in d.items():
            li, lj = low[i], low[j]
            key = (dij, li, lj) if li < lj else (dij, lj, li)
            if best is None or key < best[0]:
                best = (key, i, j)
        _, i, j = best
        mi, mj = active.pop(i), active.pop(j)
        a, b = (i, j) if low[i] < low[j] else (j, i)
        low[next_id] = min(low[i], low[j])
        merges.append(Merge(a, b, d[(min(i, j), max(i, j))], len(mi) + len(mj)))
        new = mi + mj
        for k in active:
            dik = d.pop((min(i, k), max(i, k)))
            djk = d.pop((min(j, k), max(j, k)))
            d[(k, next_id)] = (len(mi) * dik + len(mj) * djk) / len(new)
        d.pop((min(i, j), max(i, j)))
        active[next_id] = new
        next_id += 1
    return merges


def _flat(n: int, merges: Sequence[Merge], n_merges: int) -> list[int]:
    """Raw component id per leaf after applying the first `n_merges` merges."""
    parent = list(range(n + len(merges)))

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for idx, m in enumerate(merges[:n_merges]):
        parent[find(m.a)] = n + idx
        parent[find(m.b)] = n + idx
    return [find(i) for i in range(n)]


def _relabel(raw: list[int]) -> tuple[int, ...]:
    """Clusters numbered by size (descending), ties by smallest member index."""
    members: dict[int, list[int]] = {}
    for i, r in enumerate(raw):
        members.setdefault(r, []).append(i)
    order = sorted(members.values(), key=lambda m: (-len(m), m[0]))
    out = [0] * len(raw)
    for label, m in enumerate(order):
        for i in m:
            out[i] = label
    return tuple(out)


def choose_k(merges: Sequence[Merge], n: int, max_k: int, min_gap: float = MIN_GAP_RATIO) -> int:
    """Cut at the largest relative gap between consecutive merge distances.

    Cutting to k clusters keeps the n - k lowest merges; the gap is the
    ratio between the lowest removed and the highest kept merge distance.
    Returns 1 when no admissible gap reaches `min_gap`.
    """
    h = [m.distance for m in merges]
    if n < 2 or h[-1] <= 0.0:
        return 1
    tiny = 1e-12 * h[-1]
    best_k, best_ratio = 1, 0.0
    for k in range(2, min(max_k, n) + 1):
        kept, removed = h[n - k - 1] if n - k - 1 >= 0 else 0.0, h[n - k]
        ratio = removed / max(kept, tiny)
        if ratio > best_ratio:
            best_k, best_ratio = k, ratio
    return best_k if best_ratio >= min_gap else 1


def cluster_roles(
    x: np.ndarray,
    k: int | None = None,
    distance: float | None = None,
    max_k: int | None = None,
    min_gap: float = MIN_GAP_RATIO,
) -> RoleClustering:
    """Cluster history vectors (rows of `x`).

    Give either a target `k`, a cut `distance` (merges at or below it are
    kept), or neither, in which case the dendrogram gap rule picks k (capped
    by `max_k`).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 1:
        raise ValueError("cluster_roles needs at least one vector")
    if k is not None and distance is not None:
        raise ValueError("give a target k or a cut distance, not both")
    if n == 1:
        return RoleClustering((), (0,), 0.0)
    merges = average_linkage(x)
    if distance is not None:
        if distance < 0:
            raise ValueError("cut distance must be >= 0")
        n_merges = sum(1 for m in merges if m.distance <= distance)
        cut = distance
    else:
        if k is None:
            k = choose_k(merges, n, max_k or n, min_gap)
        k = max(1, min(k, n))
        n_merges = n - k
        if n_merges == 0:
            cut = 0.0
        elif n_merges == len(merges):
            cut = merges[-1].distance
        else:
            cut = (merges[n_merges - 1].distance + merges[n_merges].distance) / 2
    return RoleClustering(tuple(merges), _relabel(_flat(n, merges, n_merges)), float(cut))


def adjusted_rand_index(labels_true: Sequence, labels_pred: Sequence) -> float:
    """Hubert-Arabie adjusted Rand index."""
    if len(labels_true) != len(labels_pred):
        raise ValueError("label sequences differ in length")
    n = len(labels_true)
    table = Counter(zip(labels_true, labels_pred))
    rows = Counter(labels_true)
    cols = Counter(labels_pred)
    index = sum(comb(c, 2) for c in table.values())
    a = sum(comb(c, 2) for c in rows.values())
    b = sum(comb(c, 2) for c in cols.values())
    total = comb(n, 2)
    if total == 0:
        return 1.0
    expected = a * b / total
    maximum = (a + b) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def nearest_neighbor_agreement(points: np.ndarray, labels: Sequence) -> float:
    """Share of points whose nearest other point carries the same label."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 2:
        return 1.0
    d = pairwise_distances(points)
    np.fill_diagonal(d, np.inf)
    nn = np.argmin(d, axis=1)  # argmin keeps the lowest index among ties
    return float(np.mean([labels[i] == labels[int(j)] for i, j in enumerate(nn)]))
