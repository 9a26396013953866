"""Shared test oracles, deliberately independent of the library's own paths:
dense masked-softmax attention, a literal two-loop reassignment
transcription, and random instance builders."""

from __future__ import annotations

import numpy as np

from rehub.attention import AttentionParams
from rehub.tensor import (
    DiffGraph,
    SegmentIndex,
    add,
    add_bias,
    concat_cols,
    concat_rows,
    gather_rows,
    layer_norm,
    leaky_relu,
    matmul,
    mean_reduce,
    mul,
    relu,
    row_scale,
    scale,
    scatter_add_rows,
    segment_mean,
    segment_softmax,
    softmax_cross_entropy,
    softmax_rows,
    spmm,
    squared_error,
    sub,
    sum_reduce,
    transpose,
)

LEAKY = 0.2


def dense_attention_oracle(K, Q, conn_src, conn_dst, w_src, w_dst, att, w_out):
    """Reference bipartite attention on materialized score matrices with
    non-edges masked to -inf, softmax per destination column."""
    n_k, n_q = K.shape[0], Q.shape[0]
    mask = np.zeros((n_k, n_q), dtype=bool)
    mask[conn_src, conn_dst] = True
    head_outs = []
    for ws, wd, a in zip(w_src, w_dst, att):
        kw = K @ ws
        qw = Q @ wd
        pre = kw[:, None, :] + qw[None, :, :]
        act = np.where(pre > 0, pre, LEAKY * pre)
        scores = act @ a[:, 0]
        masked = np.where(mask, scores, -np.inf)
        has_any = mask.any(axis=0)
        col_max = np.where(has_any, masked.max(axis=0), 0.0)
        e = np.where(mask, np.exp(masked - col_max), 0.0)
        denom = e.sum(axis=0, keepdims=True)
        alpha = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
        head_outs.append(alpha.T @ kw)
    return Q + np.hstack(head_outs) @ w_out


def reassign_oracle(rows, gamma_flat, delta, k):
    """Literal transcription of the two-loop reassignment: per hub a
    bottom-k distance neighborhood, per spoke the neighborhood of its
    highest-scoring connected hub."""
    n_s, k_old = rows.shape
    n_h = delta.shape[0]
    k_eff = min(k, n_h)
    hoods = []
    for ih in range(n_h):
        order = sorted(range(n_h), key=lambda j: (delta[ih, j], j))
        hoods.append(order[:k_eff])
    scores = gamma_flat.reshape(n_s, k_old)
    out = np.empty((n_s, k_eff), dtype=np.int64)
    for i_s in range(n_s):
        best_h = None
        best = -np.inf
        for j in range(k_old):
            h = int(rows[i_s, j])
            sc = scores[i_s, j]
            if sc > best or (sc == best and h < best_h):
                best_h, best = h, sc
        out[i_s] = hoods[best_h]
    return out


def random_attention_params(rng, d, heads):
    """Raw parameter arrays for one attention block."""
    d_h = d // heads
    return (
        [rng.standard_normal((d, d_h)) for _ in range(heads)],
        [rng.standard_normal((d, d_h)) for _ in range(heads)],
        [rng.standard_normal((d_h, 1)) for _ in range(heads)],
        rng.standard_normal((heads * d_h, d)),
    )


def attach_attention_params(tape: DiffGraph, raw, requires_grad=False) -> AttentionParams:
    w_src, w_dst, att, w_out = raw
    return AttentionParams(
        w_src=[tape.leaf(w, requires_grad) for w in w_src],
        w_dst=[tape.leaf(w, requires_grad) for w in w_dst],
        att=[tape.leaf(a, requires_grad) for a in att],
        w_out=tape.leaf(w_out, requires_grad),
    )


def random_connections(rng, n_src, n_dst, max_per_dst=None):
    """Random bipartite connection lists, at least one edge, no duplicates."""
    pairs = set()
    n_edges = int(rng.integers(1, n_src * n_dst + 1))
    while len(pairs) < n_edges:
        pairs.add((int(rng.integers(n_src)), int(rng.integers(n_dst))))
    pairs = sorted(pairs, key=lambda p: (p[1], p[0]))
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    return src, dst


# ---------------------------------------------------------------------------
# primitive finite-difference cases: name -> (rng -> (point, fn))
# Each fn maps the perturbed leaf to a scalar on the leaf's own graph.


def _sumsq(t):
    return sum_reduce(mul(t, t))


def _const(x, arr):
    return x.graph.leaf(arr)


def _case_matmul_lhs(rng):
    c = rng.standard_normal((4, 3))
    return rng.standard_normal((3, 4)), lambda x: _sumsq(matmul(x, _const(x, c)))


def _case_matmul_rhs(rng):
    c = rng.standard_normal((3, 4))
    return rng.standard_normal((4, 3)), lambda x: _sumsq(matmul(_const(x, c), x))


def _case_transpose(rng):
    c = rng.standard_normal((3, 2))
    return rng.standard_normal((3, 2)), lambda x: _sumsq(matmul(transpose(x), _const(x, c)))


def _case_add(rng):
    c = rng.standard_normal((3, 3))
    return rng.standard_normal((3, 3)), lambda x: _sumsq(add(x, _const(x, c)))


def _case_sub(rng):
    c = rng.standard_normal((3, 3))
    return rng.standard_normal((3, 3)), lambda x: _sumsq(sub(_const(x, c), x))


def _case_mul(rng):
    c = rng.standard_normal((3, 3))
    return rng.standard_normal((3, 3)), lambda x: sum_reduce(mul(x, _const(x, c)))


def _case_scale(rng):
    return rng.standard_normal((3, 3)), lambda x: _sumsq(scale(x, -0.37))


def _case_row_scale_mat(rng):
    s = rng.standard_normal((4, 1))
    return rng.standard_normal((4, 3)), lambda x: _sumsq(row_scale(x, _const(x, s)))


def _case_row_scale_vec(rng):
    m = rng.standard_normal((4, 3))
    return rng.standard_normal((4, 1)), lambda x: _sumsq(row_scale(_const(x, m), x))


def _case_add_bias_mat(rng):
    b = rng.standard_normal((1, 3))
    return rng.standard_normal((4, 3)), lambda x: _sumsq(add_bias(x, _const(x, b)))


def _case_add_bias_vec(rng):
    m = rng.standard_normal((4, 3))
    return rng.standard_normal((1, 3)), lambda x: _sumsq(add_bias(_const(x, m), x))


def _case_leaky_relu(rng):
    return rng.standard_normal((3, 4)), lambda x: _sumsq(leaky_relu(x))


def _case_relu(rng):
    return rng.standard_normal((3, 4)), lambda x: _sumsq(relu(x))


def _case_concat_cols(rng):
    c = rng.standard_normal((3, 2))
    return rng.standard_normal((3, 2)), lambda x: _sumsq(concat_cols([x, _const(x, c)]))


def _case_concat_rows(rng):
    c = rng.standard_normal((2, 3))
    return rng.standard_normal((2, 3)), lambda x: _sumsq(concat_rows([_const(x, c), x]))


def _case_gather(rng):
    idx = rng.integers(0, 4, size=7)
    return rng.standard_normal((4, 3)), lambda x: _sumsq(gather_rows(x, idx))


def _case_scatter(rng):
    idx = rng.integers(0, 3, size=5)
    return rng.standard_normal((5, 2)), lambda x: _sumsq(scatter_add_rows(x, idx, 3))


def _case_segment_softmax(rng):
    seg = SegmentIndex(np.array([0, 0, 1, 1, 1, 3]), 4)  # segment 2 empty
    return rng.standard_normal((6, 1)), lambda x: _sumsq(segment_softmax(x, seg))


def _case_segment_mean(rng):
    seg = SegmentIndex(np.array([0, 0, 2, 2, 2]), 4)  # segments 1, 3 empty
    return rng.standard_normal((5, 3)), lambda x: _sumsq(segment_mean(x, seg))


def _case_sum_reduce(rng):
    return rng.standard_normal((3, 3)), lambda x: sum_reduce(mul(x, x))


def _case_mean_reduce(rng):
    return rng.standard_normal((3, 3)), lambda x: mean_reduce(mul(x, x))


def _case_layer_norm(rng):
    c = rng.standard_normal((3, 5))
    return rng.standard_normal((3, 5)), lambda x: sum_reduce(mul(layer_norm(x), _const(x, c)))


def _case_softmax_rows(rng):
    c = rng.standard_normal((3, 4))
    return rng.standard_normal((3, 4)), lambda x: sum_reduce(mul(softmax_rows(x), _const(x, c)))


def _case_spmm(rng):
    import scipy.sparse as sp

    dense = (rng.random((4, 4)) < 0.5) * rng.standard_normal((4, 4))
    adj = sp.csr_matrix(dense)
    return rng.standard_normal((4, 3)), lambda x: _sumsq(spmm(adj, x))


def _case_cross_entropy(rng):
    labels = rng.integers(0, 3, size=5)
    return rng.standard_normal((5, 3)), lambda x: softmax_cross_entropy(x, labels)


def _case_squared_error(rng):
    target = rng.standard_normal((4, 2))
    return rng.standard_normal((4, 2)), lambda x: squared_error(x, target)


PRIMITIVE_CASES = {
    "matmul_lhs": _case_matmul_lhs,
    "matmul_rhs": _case_matmul_rhs,
    "transpose": _case_transpose,
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "scale": _case_scale,
    "row_scale_mat": _case_row_scale_mat,
    "row_scale_vec": _case_row_scale_vec,
    "add_bias_mat": _case_add_bias_mat,
    "add_bias_vec": _case_add_bias_vec,
    "leaky_relu": _case_leaky_relu,
    "relu": _case_relu,
    "concat_cols": _case_concat_cols,
    "concat_rows": _case_concat_rows,
    "gather_rows": _case_gather,
    "scatter_add_rows": _case_scatter,
    "segment_softmax": _case_segment_softmax,
    "segment_mean": _case_segment_mean,
    "sum_reduce": _case_sum_reduce,
    "mean_reduce": _case_mean_reduce,
    "layer_norm": _case_layer_norm,
    "softmax_rows": _case_softmax_rows,
    "spmm": _case_spmm,
    "softmax_cross_entropy": _case_cross_entropy,
    "squared_error": _case_squared_error,
}
