"""Neural message operators: sparse bipartite attention, dense hub
self-attention, and a degree-normalized GCN step for the spoke graph.

Attention scoring follows the additive two-transform scheme: per head and
per connection (s, q), score = a^T leaky_relu(W_src K_s + W_dst Q_q), with
the source transform W_src K_s doubling as the value path. Softmax runs
per destination over its connected sources; head outputs are concatenated,
mixed by W_out, and added residually to Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError
from .tensor import (
    SegmentIndex,
    Tensor,
    add,
    add_bias,
    concat_cols,
    gather_rows,
    leaky_relu,
    matmul,
    relu,
    row_scale,
    scale,
    scatter_add_rows,
    segment_softmax,
    spmm,
)


@dataclass(eq=False)
class AttentionParams:
    """Per-head transforms plus the shared output mix."""

    w_src: list[Tensor]  # each (d, d_h)
    w_dst: list[Tensor]  # each (d, d_h)
    att: list[Tensor]    # each (d_h, 1)
    w_out: Tensor        # (heads * d_h, d)

    @property
    def heads(self) -> int:
        return len(self.w_src)


@dataclass(eq=False)
class MpnnParams:
    weight: Tensor  # (d, d)
    bias: Tensor    # (1, d)


def bipartite_attention(
    K: Tensor,
    Q: Tensor,
    conn_src: np.ndarray,
    conn_dst: np.ndarray,
    params: AttentionParams,
    want_scores: bool = False,
) -> tuple[Tensor, np.ndarray | None]:
    """Sparse attention from source rows K into destination rows Q along the
    given connection list.

    Returns the residual-updated destinations and, when requested, the
    head-averaged attention weights aligned entry-for-entry with the
    connection list. Destinations with no connections pass through
    unchanged.
    """
    if K.cols != Q.cols:
        raise ShapeError(f"source dim {K.cols} != destination dim {Q.cols}")
    conn_src = np.asarray(conn_src, dtype=np.int64)
    conn_dst = np.asarray(conn_dst, dtype=np.int64)
    if conn_src.shape != conn_dst.shape:
        raise ShapeError("connection endpoint lists differ in length")
    seg = SegmentIndex(conn_dst, Q.rows)
    head_outs = []
    alphas = []
    for w_s, w_d, a in zip(params.w_src, params.w_dst, params.att):
        kw = matmul(K, w_s)
        qw = matmul(Q, w_d)
        e = leaky_relu(add(gather_rows(kw, conn_src), gather_rows(qw, conn_dst)))
        score = matmul(e, a)
        alpha = segment_softmax(score, seg)
        weighted = row_scale(gather_rows(kw, conn_src), alpha)
        head_outs.append(scatter_add_rows(weighted, conn_dst, Q.rows))
        if want_scores:
            alphas.append(alpha.value[:, 0])
    mixed = matmul(concat_cols(head_outs), params.w_out)
    out = add(Q, mixed)
    gamma = np.mean(alphas, axis=0) if want_scores else None
    return out, gamma


def full_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All n*n ordered pairs, self included."""
    idx = np.arange(n, dtype=np.int64)
    return np.repeat(idx, n), np.tile(idx, n)


def hub_self_attention(H: Tensor, params: AttentionParams) -> Tensor:
    """Dense self-attention over hubs: K = Q = H, all pairs connected."""
    src, dst = full_pairs(H.rows)
    out, _ = bipartite_attention(H, H, src, dst, params)
    return out


def normalized_adjacency(graph) -> sp.csr_matrix:
    """Symmetric degree-normalized adjacency with self-loops:
    D~^{-1/2} (A + I) D~^{-1/2}."""
    n = graph.num_nodes
    src = np.repeat(np.arange(n, dtype=np.int64), graph.degrees())
    rows = np.concatenate([src, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([graph.col_indices, np.arange(n, dtype=np.int64)])
    deg = graph.degrees() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def gcn_layer(graph, X: Tensor, params: MpnnParams, adj: sp.csr_matrix | None = None) -> Tensor:
    """Residual GCN step: X + relu(D~^{-1/2} (A+I) D~^{-1/2} X W + b)."""
    if X.rows != graph.num_nodes:
        raise ShapeError(f"{X.rows} feature rows for {graph.num_nodes} nodes")
    if adj is None:
        adj = normalized_adjacency(graph)
    msg = add_bias(spmm(adj, matmul(X, params.weight)), params.bias)
    return add(X, relu(msg))
