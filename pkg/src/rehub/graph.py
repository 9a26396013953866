"""Graph containers, synthetic generators, batching, and JSON round-trips."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GraphFormatError, InvalidParameterError, ShapeError


@dataclass(eq=False)
class GraphCSR:
    """Undirected graph in compressed-sparse-row form.

    Every edge is stored in both directions, col indices sorted within each
    row, no self-loops. Optional edge attributes are aligned with
    col_indices; optional labels are per node (int classes) or per graph.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    node_features: np.ndarray
    edge_attrs: np.ndarray | None = None
    labels: np.ndarray | None = None

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return self.col_indices.size // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v] : self.row_offsets[v + 1]]

    def degrees(self) -> np.ndarray:
        return self.row_offsets[1:] - self.row_offsets[:-1]

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once, as sorted (u, v) pairs with u < v."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees())
        mask = src < self.col_indices
        return np.stack([src[mask], self.col_indices[mask]], axis=1)


@dataclass(eq=False)
class GraphBatch:
    """Disjoint union of graphs with per-node owning-graph indices."""

    merged: GraphCSR
    graph_index: np.ndarray
    node_counts: list[int]

    @property
    def num_graphs(self) -> int:
        return len(self.node_counts)

    @property
    def num_nodes(self) -> int:
        return self.merged.num_nodes


def _csr_from_pairs(n: int, pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build sorted CSR arrays from an array of directed (src, dst) pairs.

    Returns (row_offsets, col_indices, order) where `order` maps each CSR
    slot back to its index in `pairs`.
    """
    if pairs.size == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    src = pairs[order, 0]
    dst = pairs[order, 1]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    np.cumsum(offsets, out=offsets)
    return offsets, dst.astype(np.int64), order


def from_edges(
    num_nodes: int,
    edges: np.ndarray,
    node_features: np.ndarray,
    edge_attrs: np.ndarray | None = None,
    labels=None,
) -> GraphCSR:
    """Build a GraphCSR from undirected edges listed once each.

    edge_attrs, when given, carries one row per undirected edge and is
    duplicated onto both directions.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    both = np.vstack([edges, edges[:, ::-1]])
    offsets, cols, order = _csr_from_pairs(num_nodes, both)
    attrs = None
    if edge_attrs is not None:
        edge_attrs = np.asarray(edge_attrs, dtype=np.float64)
        attrs = np.vstack([edge_attrs, edge_attrs])[order]
    if labels is not None:
        labels = np.asarray(labels)
    return GraphCSR(num_nodes, offsets, cols,
                    np.asarray(node_features, dtype=np.float64), attrs, labels)


def random_regular(n: int, d: int, seed: int, feature_dim: int = 4, edge_dim: int = 4) -> GraphCSR:
    """Sample a random d-regular graph by the pairing model.

    Stubs are shuffled and paired; any self-loop or duplicate edge rejects
    the whole attempt and restarts. Node features and edge attributes are
    seeded uniforms in [0, 1).
    """
    if d >= n:
        raise InvalidParameterError(f"need d < n, got d={d}, n={n}")
    if (n * d) % 2 != 0:
        raise InvalidParameterError(f"n*d must be even, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n, dtype=np.int64), d)
    while True:
        rng.shuffle(stubs)
        u = stubs[0::2]
        v = stubs[1::2]
        if np.any(u == v):
            continue
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        keys = lo * n + hi
        if np.unique(keys).size != keys.size:
            continue
        edges = np.stack([lo, hi], axis=1)
        break
    feats = rng.uniform(size=(n, feature_dim))
    attrs = rng.uniform(size=(edges.shape[0], edge_dim))
    return from_edges(n, edges, feats, edge_attrs=attrs)


def gen_token_task(n: int, positive: bool, seed: int) -> GraphCSR:
    """Path graph whose every node is labeled by a global token bit.

    One uniformly chosen node carries a one-hot token when positive; all
    labels equal 1 iff a token is present anywhere, so correct prediction
    at distant nodes requires long-range communication.
    """
    if n < 4:
        raise InvalidParameterError(f"token task needs n >= 4, got {n}")
    rng = np.random.default_rng(seed)
    feats = np.zeros((n, 2))
    feats[:, 0] = 1.0
    if positive:
        tok = int(rng.integers(n))
        feats[tok] = [0.0, 1.0]
    labels = np.full(n, int(positive), dtype=np.int64)
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return from_edges(n, edges, feats, labels=labels)


def token_dataset(n_graphs: int, length: int, seed: int) -> list[GraphCSR]:
    """Seeded token-task graphs with fair-coin positives."""
    out = []
    for i in range(n_graphs):
        rng = np.random.default_rng([seed, i])
        positive = bool(rng.random() < 0.5)
        out.append(gen_token_task(length, positive, int(rng.integers(2**31))))
    return out


def batch(graphs: list[GraphCSR]) -> GraphBatch:
    """Disjoint union with node ids offset per block."""
    if not graphs:
        empty = GraphCSR(0, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64),
                         np.zeros((0, 0)))
        return GraphBatch(empty, np.zeros(0, dtype=np.int64), [])
    dim = graphs[0].node_features.shape[1]
    if any(g.node_features.shape[1] != dim for g in graphs):
        raise ShapeError("all graphs in a batch must share feature dimension")
    counts = [g.num_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    row_offsets = [np.zeros(1, dtype=np.int64)]
    cols = []
    for g, off in zip(graphs, offsets[:-1]):
        row_offsets.append(g.row_offsets[1:] + row_offsets[-1][-1])
        cols.append(g.col_indices + off)
    feats = np.vstack([g.node_features for g in graphs])
    labels = None
    if all(g.labels is not None for g in graphs):
        labels = np.concatenate([g.labels for g in graphs])
    attrs = None
    if all(g.edge_attrs is not None for g in graphs):
        attrs = np.vstack([g.edge_attrs for g in graphs])
    merged = GraphCSR(int(offsets[-1]), np.concatenate(row_offsets),
                      np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64),
                      feats, attrs, labels)
    gidx = np.repeat(np.arange(len(graphs), dtype=np.int64), counts)
    return GraphBatch(merged, gidx, counts)


def is_connected(g: GraphCSR) -> bool:
    if g.num_nodes == 0:
        return True
    seen = np.zeros(g.num_nodes, dtype=bool)
    seen[0] = True
    frontier = np.array([0], dtype=np.int64)
    while frontier.size:
        counts = g.row_offsets[frontier + 1] - g.row_offsets[frontier]
        starts = np.repeat(g.row_offsets[frontier], counts)
        nbrs = g.col_indices[starts + _ragged_arange(counts)]
        nbrs = np.unique(nbrs[~seen[nbrs]])
        seen[nbrs] = True
        frontier = nbrs
    return bool(seen.all())


def _ragged_arange(counts: np.ndarray) -> np.ndarray:
    """[0..c0), [0..c1), ... concatenated."""
    total = int(counts.sum())
    out = np.arange(total, dtype=np.int64)
    out -= np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return out


# ---------------------------------------------------------------------------
# JSON schema: {"num_nodes": int, "edges": [[u, v], ...] listed once each,
# "node_features": [[...], ...], "edge_attrs": optional, "labels": optional}


def save_graph(g: GraphCSR, path) -> None:
    doc = {
        "num_nodes": g.num_nodes,
        "edges": g.edge_list().tolist(),
        "node_features": g.node_features.tolist(),
    }
    if g.edge_attrs is not None:
        # one attr row per undirected edge; the (u<v) direction is canonical
        src = np.repeat(np.arange(g.num_nodes), g.degrees())
        mask = src < g.col_indices
        doc["edge_attrs"] = g.edge_attrs[mask].tolist()
    if g.labels is not None:
        doc["labels"] = g.labels.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_graph(path) -> GraphCSR:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise GraphFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    for key in ("num_nodes", "edges", "node_features"):
        if key not in doc:
            raise GraphFormatError(f"{path}: missing field '{key}'")
    n = doc["num_nodes"]
    edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            raise GraphFormatError(f"{path}: edge endpoint out of range [0, {n})")
        if np.any(edges[:, 0] == edges[:, 1]):
            bad = int(np.flatnonzero(edges[:, 0] == edges[:, 1])[0])
            raise GraphFormatError(f"{path}: self-loop at edges[{bad}]")
        keys = np.sort(edges, axis=1)
        keys = keys[:, 0] * n + keys[:, 1]
        if np.unique(keys).size != keys.size:
            raise GraphFormatError(f"{path}: duplicate edge after symmetrization")
    feats = np.asarray(doc["node_features"], dtype=np.float64)
    if feats.ndim == 1:
        feats = feats.reshape(n, -1) if feats.size else feats.reshape(n, 0)
    if feats.shape[0] != n:
        raise GraphFormatError(
            f"{path}: node_features has {feats.shape[0]} rows, expected {n}")
    attrs = None
    if "edge_attrs" in doc:
        attrs = np.asarray(doc["edge_attrs"], dtype=np.float64)
        if attrs.shape[0] != edges.shape[0]:
            raise GraphFormatError(f"{path}: edge_attrs misaligned with edges")
    labels = np.asarray(doc["labels"]) if "labels" in doc else None
    return from_edges(n, edges, feats, edge_attrs=attrs, labels=labels)
