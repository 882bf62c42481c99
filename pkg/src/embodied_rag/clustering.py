"""Thresholded agglomerative clustering over point sets.

Every item being clustered owns a set of leaf points; linkage distances are
always measured between those point sets, so clustering a band of already
merged clusters continues the same dendrogram a one-shot agglomeration over
the leaves would have produced.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

LINKAGES = ("average", "single", "complete")


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _group_matrix(point_dist: np.ndarray, groups: Sequence[np.ndarray], linkage: str) -> np.ndarray:
    m = len(groups)
    if all(len(g) == 1 for g in groups):
        flat = np.array([g[0] for g in groups])
        return point_dist[np.ix_(flat, flat)].copy()
    order = np.concatenate(groups)
    starts = np.cumsum([0] + [len(g) for g in groups[:-1]])
    cols = point_dist[:, order]
    out = np.empty((m, m))
    for i, g in enumerate(groups):
        block = cols[g]
        if linkage == "single":
            row = np.minimum.reduceat(block.min(axis=0), starts)
        elif linkage == "complete":
            row = np.maximum.reduceat(block.max(axis=0), starts)
        else:
            sizes = np.array([len(h) for h in groups], dtype=float)
            row = np.add.reduceat(block.sum(axis=0), starts) / (len(g) * sizes)
        out[i] = row
    # block sums are order dependent in floating point; mirror the upper
    # triangle so the matrix is exactly symmetric
    upper = np.triu_indices(m, 1)
    out.T[upper] = out[upper]
    return out


def agglomerate(
    point_dist: np.ndarray,
    groups: Sequence[Sequence[int]],
    keys: Sequence[str],
    threshold: float,
    linkage: str = "average",
) -> list[list[int]]:
    """Merge ``groups`` while the closest pair is within ``threshold``.

    Args:
        point_dist: Leaf-point distance matrix.
        groups: For each item, the indices of the leaf points it owns.
        keys: Tie-break key per item. Among equal-distance candidates the
            pair with the lexicographically smallest (key, key) merges; a
            merged item inherits the smaller key.
        threshold: Inclusive merge distance.
        linkage: ``average`` (UPGMA over points), ``single`` or ``complete``.

    Returns:
        Clusters as lists of item indices, each sorted by key, ordered by
        their smallest key.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    m = len(groups)
    if m == 0:
        return []
    members = [[i] for i in range(m)]
    cur_keys = list(keys)
    sizes = np.array([len(g) for g in groups], dtype=float)
    dist = _group_matrix(point_dist, [np.asarray(g, dtype=int) for g in groups], linkage)
    np.fill_diagonal(dist, np.inf)
    alive = m
    while alive > 1:
        best = dist.min()
        if not best <= threshold:
            break
        rows, cols = np.nonzero(dist == best)
        candidates = []
        for i, j in zip(rows.tolist(), cols.tolist()):
            if i < j:
                a, b = sorted((cur_keys[i], cur_keys[j]))
                candidates.append(((a, b), i, j))
        _, i, j = min(candidates)
        if linkage == "single":
            merged = np.minimum(dist[i], dist[j])
        elif linkage == "complete":
            merged = np.maximum(dist[i], dist[j])
        else:
            merged = (sizes[i] * dist[i] + sizes[j] * dist[j]) / (sizes[i] + sizes[j])
        dist[i, :] = merged
        dist[:, i] = merged
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        dist[i, i] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members[j])
        members[j] = []
        cur_keys[i] = min(cur_keys[i], cur_keys[j])
        alive -= 1
    clusters = [sorted(c, key=lambda idx: keys[idx]) for c in members if c]
    clusters.sort(key=lambda c: keys[c[0]])
    return clusters


def split_oversized(
    members: Sequence[int],
    centroids: np.ndarray,
    keys: Sequence[str],
    max_children: int,
) -> list[list[int]]:
    """Recursive farthest-point bisection until every part has at most
    ``max_children`` members.

    The two farthest centroids seed the halves (ties: smallest key pair);
    every other member joins the nearer seed, equal distances going to the
    currently smaller half. Coincident centroids are halved by key order.
    """
    ordered = sorted(members, key=lambda idx: keys[idx])
    if len(ordered) <= max_children:
        return [ordered]
    pts = centroids[ordered]
    d = pairwise_distances(pts)
    far = d.max()
    if far == 0:
        half = len(ordered) // 2
        left, right = ordered[:half], ordered[half:]
    else:
        rows, cols = np.nonzero(d == far)
        pairs = [(keys[ordered[i]], keys[ordered[j]], i, j) for i, j in zip(rows.tolist(), cols.tolist()) if i < j]
        _, _, si, sj = min(pairs)
        left, right = [ordered[si]], [ordered[sj]]
        for pos, idx in enumerate(ordered):
            if pos in (si, sj):
                continue
            da, db = d[pos, si], d[pos, sj]
            if da < db or (da == db and len(left) <= len(right)):
                left.append(idx)
            else:
                right.append(idx)
    parts = split_oversized(left, centroids, keys, max_children)
    parts += split_oversized(right, centroids, keys, max_children)
    parts.sort(key=lambda p: keys[p[0]])
    return parts


def default_schedule(points: np.ndarray, max_threshold: float | None = None) -> list[float]:
    """Geometric cut schedule t, 2t, 4t, ... with t = 2 x median nearest-neighbour
    distance, extended until it reaches ``max_threshold`` (default: the point-set
    diameter, so the last band can join everything)."""
    n = len(points)
    if n < 2:
        return [1.0]
    d = pairwise_distances(points)
    np.fill_diagonal(d, np.inf)
    nearest = d.min(axis=1)
    base = 2.0 * float(np.median(nearest))
    if base <= 0:
        positive = nearest[nearest > 0]
        base = 2.0 * float(positive.min()) if positive.size else 1.0
    np.fill_diagonal(d, 0.0)
    top = float(d.max()) if max_threshold is None else float(max_threshold)
    schedule = [base]
    while schedule[-1] < top:
        schedule.append(schedule[-1] * 2.0)
    return schedule
