"""Spoke-graph clustering: balanced BFS region growing plus random baselines."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .graph import GraphCSR, _ragged_arange

STRATEGIES = ("bfs_balanced", "random", "balanced_random")


@dataclass
class Clustering:
    """Per-node cluster ids in [0, cluster_count)."""

    cluster_of: np.ndarray
    cluster_count: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_of, minlength=self.cluster_count)


def _bfs_distances(g: GraphCSR, sources: np.ndarray) -> np.ndarray:
    """Multi-source BFS hop distances, -1 where unreachable."""
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[sources] = 0
    frontier = np.asarray(sources, dtype=np.int64)
    level = 0
    while frontier.size:
        counts = g.row_offsets[frontier + 1] - g.row_offsets[frontier]
        starts = np.repeat(g.row_offsets[frontier], counts)
        nbrs = g.col_indices[starts + _ragged_arange(counts)]
        nbrs = np.unique(nbrs[dist[nbrs] < 0])
        level += 1
        dist[nbrs] = level
        frontier = nbrs
    return dist


def _farthest_point_sources(g: GraphCSR, k: int, rng: np.random.Generator) -> list[int]:
    """Greedy farthest-point sweep: each new source maximizes BFS distance
    to the current source set; unreachable nodes count as farthest.
    Ties go to the lowest node id."""
    start = int(rng.integers(g.num_nodes))
    sources: list[int] = []
    current = np.array([start], dtype=np.int64)
    for _ in range(k):
        dist = _bfs_distances(g, current if sources else np.array([start]))
        unreached = np.flatnonzero(dist < 0)
        if unreached.size:
            nxt = int(unreached[0])
        else:
            if sources:
                dist[np.asarray(sources)] = -1  # never re-pick a source
            nxt = int(np.argmax(dist))
        sources.append(nxt)
        current = np.asarray(sources, dtype=np.int64)
    return sources


def _bfs_balanced(g: GraphCSR, k: int, rng: np.random.Generator) -> np.ndarray:
    """Grow regions from spread sources, always extending the smallest
    cluster by one frontier node (FIFO). Stranded nodes of disconnected
    components join whichever cluster is smallest at that point."""
    n = g.num_nodes
    sources = _farthest_point_sources(g, k, rng)
    assigned = np.full(n, -1, dtype=np.int64)
    sizes = [0] * k
    frontiers = [deque() for _ in range(k)]
    for c, s in enumerate(sources):
        assigned[s] = c
        sizes[c] = 1
        frontiers[c].extend(int(v) for v in g.neighbors(s))
    heap = [(1, c) for c in range(k)]
    heapq.heapify(heap)
    remaining = n - k
    while remaining and heap:
        size, c = heapq.heappop(heap)
        if size != sizes[c]:
            continue  # stale entry
        node = -1
        fr = frontiers[c]
        while fr:
            cand = fr.popleft()
            if assigned[cand] < 0:
                node = cand
                break
        if node < 0:
            continue  # enclosed cluster: stop growing it
        assigned[node] = c
        sizes[c] += 1
        remaining -= 1
        fr.extend(int(v) for v in g.neighbors(node) if assigned[v] < 0)
        heapq.heappush(heap, (sizes[c], c))
    if remaining:
        for v in np.flatnonzero(assigned < 0):
            c = min(range(k), key=lambda i: (sizes[i], i))
            assigned[v] = c
            sizes[c] += 1
    _rebalance(g, assigned, sizes, k)
    return assigned


def _stays_connected_without(g: GraphCSR, labels: np.ndarray, c: int, v: int, size: int) -> bool:
    """Does cluster c remain connected after losing node v?"""
    if size <= 2:
        return True
    start = -1
    members = np.flatnonzero(labels == c)
    for u in members:
        if u != v:
            start = int(u)
            break
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for w in g.neighbors(u):
            w = int(w)
            if w != v and w not in seen and labels[w] == c:
                seen.add(w)
                stack.append(w)
    return len(seen) == size - 1


def _rebalance(g: GraphCSR, labels: np.ndarray, sizes: list[int], k: int) -> None:
    """Even out cluster sizes after growth: enclosed clusters end up small,
    so boundary nodes donate from larger clusters to adjacent smaller ones
    whenever the donor stays connected. Moves need a size gap of 2, which
    strictly lowers the size imbalance and so terminates."""
    if k < 2:
        return
    for _ in range(4 * k + 8):
        if max(sizes) - min(sizes) <= 2:
            return
        moved = False
        for v in range(g.num_nodes):
            a = int(labels[v])
            best = -1
            for w in g.neighbors(v):
                b = int(labels[w])
                if b != a and (best < 0 or (sizes[b], b) < (sizes[best], best)):
                    best = b
            if best < 0 or sizes[a] - sizes[best] < 2:
                continue
            if not _stays_connected_without(g, labels, a, v, sizes[a]):
                continue
            labels[v] = best
            sizes[a] -= 1
            sizes[best] += 1
            moved = True
            if max(sizes) - min(sizes) <= 2:
                return
        if not moved:
            return


def _stride_labels(n_items: int, n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Balanced pseudo-random group labels: a permuted coprime-stride cycle."""
    perm = rng.permutation(n_groups)
    valid = [u for u in range(1, n_groups) if math.gcd(u, n_groups) == 1] or [1]
    u = int(valid[rng.integers(len(valid))])
    return perm[(np.arange(n_items, dtype=np.int64) * u) % n_groups]


def cluster(g: GraphCSR, n_clusters: int, strategy: str, seed: int) -> Clustering:
    """Partition the graph's nodes into n_clusters groups.

    bfs_balanced is the default, dependency-free stand-in for a multilevel
    partitioner: connected, near-equal-size regions in O(nodes + edges)
    growing time. random and balanced_random are ablation baselines.
    """
    if not 1 <= n_clusters <= g.num_nodes:
        raise InvalidParameterError(
            f"n_clusters must be in [1, {g.num_nodes}], got {n_clusters}")
    rng = np.random.default_rng(seed)
    if strategy == "bfs_balanced":
        labels = _bfs_balanced(g, n_clusters, rng)
    elif strategy == "random":
        labels = rng.integers(n_clusters, size=g.num_nodes)
    elif strategy == "balanced_random":
        labels = _stride_labels(g.num_nodes, n_clusters, rng)
    else:
        raise InvalidParameterError(f"unknown clustering strategy '{strategy}'")
    return Clustering(np.asarray(labels, dtype=np.int64), n_clusters)
