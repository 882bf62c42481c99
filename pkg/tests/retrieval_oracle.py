"""Independent oracles for retrieval: exhaustive ranking and the quota rule."""

from __future__ import annotations

import math

from embodied_rag.llm import hashed_bow


def brute_force_ranking(forest, text):
    """Exhaustive scan with pure-Python dot products (the oracle)."""
    q = hashed_bow(text)
    scored = []
    for leaf_id, node in forest.nodes.items():
        if node.is_leaf:
            v = hashed_bow(node.summary)
            scored.append((leaf_id, round(math.fsum(a * b for a, b in zip(q, v)), 12)))
    return sorted(scored, key=lambda t: (-t[1], t[0]))


def quota_oracle(counts, k):
    """The documented quota rule, written as a pointer walk."""
    order = sorted(counts, key=lambda r: (-counts[r], r))
    n = len(order)
    share = {r: k // n + (1 if i < k % n else 0) for i, r in enumerate(order)}
    quota = {r: min(share[r], counts[r]) for r in order}
    owed = min(k, sum(counts.values())) - sum(quota.values())
    pos = 0
    while owed:
        r = order[pos % n]
        if quota[r] < counts[r]:
            quota[r] += 1
            owed -= 1
        pos += 1
    return quota
