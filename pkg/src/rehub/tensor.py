"""Dense 2-D tensors with reverse-mode automatic differentiation.

Everything is double precision. Operations append records to a DiffGraph
(a flat tape); `backward` replays the tape in reverse. The graph also
counts allocated value elements, which is the memory proxy used by the
scaling benchmark: in the default retaining mode the tape pins every
forward value (required for backward), while `DiffGraph(retain_values=False)`
tracks the live-element high-water mark of a forward-only pass.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

_LEAKY_SLOPE = 0.2
_LAYERNORM_EPS = 1e-5


@dataclass
class SegmentIndex:
    """Maps each entry of a flat value sequence to its destination segment."""

    entry_to_segment: np.ndarray
    segment_count: int

    def __post_init__(self):
        self.entry_to_segment = np.asarray(self.entry_to_segment, dtype=np.int64)
        if self.entry_to_segment.size and (
            self.entry_to_segment.min() < 0
            or self.entry_to_segment.max() >= self.segment_count
        ):
            raise ShapeError("segment id out of range")

    def __len__(self):
        return self.entry_to_segment.size


class Record:
    """One tape entry: the op, its input handles, and the cached output."""

    __slots__ = ("op", "inputs", "shape", "value", "aux", "requires_grad", "work")

    def __init__(self, op, inputs, shape, value, aux, requires_grad, work):
        self.op = op
        self.inputs = inputs
        self.shape = shape
        self.value = value
        self.aux = aux
        self.requires_grad = requires_grad
        self.work = work


@dataclass(eq=False)
class Tensor:
    """A rows x cols array of doubles, optionally attached to a DiffGraph."""

    value: np.ndarray
    node: int | None = None
    graph: "DiffGraph | None" = field(default=None, repr=False)

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


class DiffGraph:
    """Append-only differentiation tape with element-allocation accounting.

    With retain_values=True (default) every record keeps its forward value
    so `backward` can replay the tape; the allocation counter then grows
    monotonically over a pass. With retain_values=False values live only as
    long as callers hold their Tensors, the counter tracks the live total,
    and backward is unavailable.
    """

    def __init__(self, retain_values: bool = True):
        self.retain_values = retain_values
        self.nodes: list[Record] = []
        self.live_elements = 0
        self.peak_elements = 0
        self.work_units = 0

    def _alloc(self, n: int):
        self.live_elements += n
        if self.live_elements > self.peak_elements:
            self.peak_elements = self.live_elements

    def _note_free(self, n: int):
        self.live_elements -= n

    def reset_peak(self):
        self.peak_elements = self.live_elements

    def leaf(self, array, requires_grad: bool = False) -> Tensor:
        """Register an input (parameter or constant) as a tape leaf."""
        value = np.ascontiguousarray(array, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {value.shape}")
        return self._register("leaf", (), value, None, requires_grad, work=0)

    def _register(self, op, inputs, value, aux, requires_grad, work) -> Tensor:
        node = len(self.nodes)
        kept = value if self.retain_values else None
        self.nodes.append(
            Record(op, inputs, value.shape, kept, aux, requires_grad, work)
        )
        self._alloc(value.size)
        self.work_units += work
        t = Tensor(value, node, self)
        if not self.retain_values:
            weakref.finalize(value, self._note_free, value.size)
        return t


def _graph_of(*tensors: Tensor) -> DiffGraph:
    graphs = {t.graph for t in tensors if t.graph is not None}
    if len(graphs) != 1:
        raise ContractError("operands must live on exactly one shared DiffGraph")
    return graphs.pop()


def _needs_grad(g: DiffGraph, *tensors: Tensor) -> bool:
    return any(g.nodes[t.node].requires_grad for t in tensors)


def _op(g, name, ins, value, aux=None, work=0) -> Tensor:
    req = _needs_grad(g, *ins)
    return g._register(name, tuple(t.node for t in ins), value, aux, req, work)


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    g = _graph_of(a, b)
    out = a.value @ b.value
    return _op(g, "matmul", (a, b), out, work=a.rows * a.cols * b.cols)


def transpose(a: Tensor) -> Tensor:
    g = _graph_of(a)
    return _op(g, "transpose", (a,), np.ascontiguousarray(a.value.T), work=a.value.size)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add {a.shape} vs {b.shape}")
    g = _graph_of(a, b)
    return _op(g, "add", (a, b), a.value + b.value, work=a.value.size)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub {a.shape} vs {b.shape}")
    g = _graph_of(a, b)
    return _op(g, "sub", (a, b), a.value - b.value, work=a.value.size)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul {a.shape} vs {b.shape}")
    g = _graph_of(a, b)
    return _op(g, "mul", (a, b), a.value * b.value, work=a.value.size)


def scale(a: Tensor, c: float) -> Tensor:
    g = _graph_of(a)
    return _op(g, "scale", (a,), a.value * c, aux=c, work=a.value.size)


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale each row of x by the matching entry of the column vector s."""
    if s.cols != 1 or s.rows != x.rows:
        raise ShapeError(f"row_scale {x.shape} by {s.shape}")
    g = _graph_of(x, s)
    return _op(g, "row_scale", (x, s), x.value * s.value, work=x.value.size)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the 1 x d row vector b to every row of x."""
    if b.rows != 1 or b.cols != x.cols:
        raise ShapeError(f"add_bias {x.shape} + {b.shape}")
    g = _graph_of(x, b)
    return _op(g, "add_bias", (x, b), x.value + b.value, work=x.value.size)


def leaky_relu(x: Tensor, slope: float = _LEAKY_SLOPE) -> Tensor:
    g = _graph_of(x)
    out = np.where(x.value > 0.0, x.value, slope * x.value)
    return _op(g, "leaky_relu", (x,), out, aux=slope, work=x.value.size)


def relu(x: Tensor) -> Tensor:
    g = _graph_of(x)
    return _op(g, "relu", (x,), np.maximum(x.value, 0.0), work=x.value.size)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    rows = tensors[0].rows
    if any(t.rows != rows for t in tensors):
        raise ShapeError("concat_cols expects equal row counts")
    g = _graph_of(*tensors)
    out = np.hstack([t.value for t in tensors])
    widths = tuple(t.cols for t in tensors)
    return _op(g, "concat_cols", tuple(tensors), out, aux=widths, work=out.size)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    cols = tensors[0].cols
    if any(t.cols != cols for t in tensors):
        raise ShapeError("concat_rows expects equal column counts")
    g = _graph_of(*tensors)
    out = np.vstack([t.value for t in tensors])
    heights = tuple(t.rows for t in tensors)
    return _op(g, "concat_rows", tuple(tensors), out, aux=heights, work=out.size)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    g = _graph_of(x)
    out = x.value[idx]
    return _op(g, "gather_rows", (x,), out, aux=(idx, x.rows), work=out.size)


def scatter_add_rows(x: Tensor, idx, out_rows: int) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size != x.rows:
        raise ShapeError("scatter_add_rows index length must match row count")
    g = _graph_of(x)
    out = np.zeros((out_rows, x.cols))
    np.add.at(out, idx, x.value)
    return _op(g, "scatter_add_rows", (x,), out, aux=idx, work=x.value.size)


def segment_softmax(values: Tensor, seg: SegmentIndex) -> Tensor:
    """Softmax normalized independently within each segment.

    Stabilized by per-segment max subtraction; empty segments simply have
    no entries in the output.
    """
    if values.cols != 1 or values.rows != len(seg):
        raise ShapeError(
            f"segment_softmax values {values.shape} vs {len(seg)} entries"
        )
    g = _graph_of(values)
    ids = seg.entry_to_segment
    v = values.value[:, 0]
    maxes = np.full(seg.segment_count, -np.inf)
    np.maximum.at(maxes, ids, v)
    e = np.exp(v - maxes[ids])
    sums = np.bincount(ids, weights=e, minlength=seg.segment_count)
    out = (e / sums[ids])[:, None]
    return _op(g, "segment_softmax", (values,), out, aux=seg, work=4 * v.size)


def segment_mean(x: Tensor, seg: SegmentIndex) -> Tensor:
    """Per-segment mean of rows; empty segments yield zero rows."""
    if x.rows != len(seg):
        raise ShapeError(f"segment_mean rows {x.rows} vs {len(seg)} entries")
    g = _graph_of(x)
    ids = seg.entry_to_segment
    counts = np.bincount(ids, minlength=seg.segment_count).astype(np.float64)
    sums = np.zeros((seg.segment_count, x.cols))
    np.add.at(sums, ids, x.value)
    denom = np.maximum(counts, 1.0)[:, None]
    out = sums / denom
    return _op(g, "segment_mean", (x,), out, aux=(seg, counts), work=x.value.size + out.size)


def sum_reduce(x: Tensor) -> Tensor:
    g = _graph_of(x)
    return _op(g, "sum_reduce", (x,), np.array([[x.value.sum()]]), work=x.value.size)


def mean_reduce(x: Tensor) -> Tensor:
    g = _graph_of(x)
    return _op(g, "mean_reduce", (x,), np.array([[x.value.mean()]]), work=x.value.size)


def layer_norm(x: Tensor, eps: float = _LAYERNORM_EPS) -> Tensor:
    """Normalize each row to zero mean and unit variance (no affine part)."""
    g = _graph_of(x)
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = (x.value - mu) * inv
    return _op(g, "layer_norm", (x,), out, aux=inv, work=5 * x.value.size)


def softmax_rows(x: Tensor) -> Tensor:
    g = _graph_of(x)
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return _op(g, "softmax_rows", (x,), out, work=4 * x.value.size)


def spmm(adj, x: Tensor) -> Tensor:
    """Multiply a constant scipy CSR matrix into x."""
    if adj.shape[1] != x.rows:
        raise ShapeError(f"spmm {adj.shape} @ {x.shape}")
    g = _graph_of(x)
    out = adj @ x.value
    return _op(g, "spmm", (x,), out, aux=adj, work=adj.nnz * x.cols)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of row softmaxes against integer class labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.rows,):
        raise ShapeError(f"labels {labels.shape} vs logits {logits.shape}")
    g = _graph_of(logits)
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    out = np.array([[np.mean(lse - picked)]])
    return _op(g, "softmax_cross_entropy", (logits,), out, aux=labels, work=3 * z.size)


def squared_error(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target array."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeError(f"target {target.shape} vs pred {pred.shape}")
    g = _graph_of(pred)
    diff = pred.value - target
    out = np.array([[np.mean(diff * diff)]])
    return _op(g, "squared_error", (pred,), out, aux=target, work=3 * diff.size)


# ---------------------------------------------------------------------------
# backward


def _bwd_matmul(rec, vals, grad):
    a, b = vals
    return [grad @ b.T, a.T @ grad]


def _bwd_transpose(rec, vals, grad):
    return [np.ascontiguousarray(grad.T)]


def _bwd_add(rec, vals, grad):
    return [grad, grad]


def _bwd_sub(rec, vals, grad):
    return [grad, -grad]


def _bwd_mul(rec, vals, grad):
    a, b = vals
    return [grad * b, grad * a]


def _bwd_scale(rec, vals, grad):
    return [grad * rec.aux]


def _bwd_row_scale(rec, vals, grad):
    x, s = vals
    return [grad * s, (grad * x).sum(axis=1, keepdims=True)]


def _bwd_add_bias(rec, vals, grad):
    return [grad, grad.sum(axis=0, keepdims=True)]


def _bwd_leaky_relu(rec, vals, grad):
    (x,) = vals
    return [grad * np.where(x > 0.0, 1.0, rec.aux)]


def _bwd_relu(rec, vals, grad):
    (x,) = vals
    return [grad * (x > 0.0)]


def _bwd_concat_cols(rec, vals, grad):
    outs, c = [], 0
    for w in rec.aux:
        outs.append(np.ascontiguousarray(grad[:, c : c + w]))
        c += w
    return outs


def _bwd_concat_rows(rec, vals, grad):
    outs, r = [], 0
    for h in rec.aux:
        outs.append(np.ascontiguousarray(grad[r : r + h]))
        r += h
    return outs


def _bwd_gather_rows(rec, vals, grad):
    idx, n_in = rec.aux
    out = np.zeros((n_in, grad.shape[1]))
    np.add.at(out, idx, grad)
    return [out]


def _bwd_scatter_add_rows(rec, vals, grad):
    return [grad[rec.aux]]


def _bwd_segment_softmax(rec, vals, grad, out):
    seg = rec.aux
    ids = seg.entry_to_segment
    t = out * grad
    s = np.bincount(ids, weights=t[:, 0], minlength=seg.segment_count)
    return [out * (grad - s[ids][:, None])]


def _bwd_segment_mean(rec, vals, grad):
    seg, counts = rec.aux
    ids = seg.entry_to_segment
    denom = np.maximum(counts, 1.0)
    return [grad[ids] / denom[ids][:, None]]


def _bwd_sum_reduce(rec, vals, grad):
    (x,) = vals
    return [np.full(x.shape, grad[0, 0])]


def _bwd_mean_reduce(rec, vals, grad):
    (x,) = vals
    return [np.full(x.shape, grad[0, 0] / x.size)]


def _bwd_layer_norm(rec, vals, grad, out):
    inv = rec.aux
    gm = grad.mean(axis=1, keepdims=True)
    gym = (grad * out).mean(axis=1, keepdims=True)
    return [inv * (grad - gm - out * gym)]


def _bwd_softmax_rows(rec, vals, grad, out):
    dot = (grad * out).sum(axis=1, keepdims=True)
    return [out * (grad - dot)]


def _bwd_spmm(rec, vals, grad):
    return [rec.aux.T @ grad]


def _bwd_softmax_cross_entropy(rec, vals, grad):
    (z,) = vals
    labels = rec.aux
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(z.shape[0]), labels] -= 1.0
    return [grad[0, 0] * p / z.shape[0]]


def _bwd_squared_error(rec, vals, grad):
    (p,) = vals
    return [grad[0, 0] * 2.0 * (p - rec.aux) / p.size]


_BACKWARD = {
    "matmul": _bwd_matmul,
    "transpose": _bwd_transpose,
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "scale": _bwd_scale,
    "row_scale": _bwd_row_scale,
    "add_bias": _bwd_add_bias,
    "leaky_relu": _bwd_leaky_relu,
    "relu": _bwd_relu,
    "concat_cols": _bwd_concat_cols,
    "concat_rows": _bwd_concat_rows,
    "gather_rows": _bwd_gather_rows,
    "scatter_add_rows": _bwd_scatter_add_rows,
    "segment_mean": _bwd_segment_mean,
    "sum_reduce": _bwd_sum_reduce,
    "mean_reduce": _bwd_mean_reduce,
    "spmm": _bwd_spmm,
    "softmax_cross_entropy": _bwd_softmax_cross_entropy,
    "squared_error": _bwd_squared_error,
}

# these rules need the op's cached output as well
_BACKWARD_WITH_OUT = {
    "segment_softmax": _bwd_segment_softmax,
    "layer_norm": _bwd_layer_norm,
    "softmax_rows": _bwd_softmax_rows,
}


def backward(graph: DiffGraph, loss: Tensor) -> dict[int, Tensor]:
    """Reverse-accumulate gradients of a scalar loss over the whole tape.

    Returns a map from node handle to gradient Tensor for every node that
    requires grad and is reachable from the loss.
    """
    if not graph.retain_values:
        raise ContractError("backward needs a value-retaining DiffGraph")
    if loss.shape != (1, 1):
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
    graph._alloc(1)
    for node in range(loss.node, -1, -1):
        rec = graph.nodes[node]
        grad = grads.get(node)
        if grad is None or rec.op == "leaf" or not rec.requires_grad:
            continue
        vals = tuple(graph.nodes[i].value for i in rec.inputs)
        if rec.op in _BACKWARD_WITH_OUT:
            contribs = _BACKWARD_WITH_OUT[rec.op](rec, vals, grad, rec.value)
        else:
            contribs = _BACKWARD[rec.op](rec, vals, grad)
        for inp, contrib in zip(rec.inputs, contribs):
            if not graph.nodes[inp].requires_grad:
                continue
            if inp in grads:
                # rebind rather than mutate: rules may hand out shared buffers
                grads[inp] = grads[inp] + contrib
            else:
                grads[inp] = contrib
                graph._alloc(contrib.size)
    return {
        node: Tensor(g)
        for node, g in grads.items()
        if graph.nodes[node].requires_grad
    }


# ---------------------------------------------------------------------------
# verification oracle


@dataclass
class FiniteDiffReport:
    max_relative_error: float
    passed: bool
    n_coords: int


def finite_diff_check(fn, point, step: float = 1e-5, tolerance: float = 1e-4) -> FiniteDiffReport:
    """Compare backward-pass gradients against central differences.

    `fn` takes a leaf Tensor and must build a scalar output on that
    tensor's graph. Non-finite outputs are reported as a failed check
    rather than raised.
    """
    point = np.ascontiguousarray(point, dtype=np.float64)
    g = DiffGraph()
    x = g.leaf(point, requires_grad=True)
    out = fn(x)
    if not np.isfinite(out.value[0, 0]):
        return FiniteDiffReport(math.inf, False, point.size)
    grads = backward(g, out)
    analytic = grads[x.node].value if x.node in grads else np.zeros_like(point)

    def _eval(values: np.ndarray) -> float:
        gg = DiffGraph()
        return fn(gg.leaf(values, requires_grad=True)).value[0, 0]

    max_rel = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += step
        f_plus = _eval(bumped.reshape(point.shape))
        bumped[i] -= 2 * step
        f_minus = _eval(bumped.reshape(point.shape))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            return FiniteDiffReport(math.inf, False, point.size)
        numeric = (f_plus - f_minus) / (2 * step)
        a = analytic.ravel()[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return FiniteDiffReport(max_rel, max_rel <= tolerance, point.size)
