"""Full network assembly: initialization, stacked long-range layers,
prediction heads, loss, and the training loop.

Per layer the pipeline is: (1) local GCN step on the spoke graph,
(2) sparse spoke-to-hub attention, (3) dense hub self-attention,
(4) sparse hub-to-spoke attention returning per-connection scores, and
(5) hub reassignment driven by those scores. Hubs are per-graph blocks in
a batch; no hub structure ever crosses graph boundaries. Reassignment is
a discrete routing decision outside the gradient path.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .attention import (
    AttentionParams,
    MpnnParams,
    bipartite_attention,
    full_pairs,
    gcn_layer,
    normalized_adjacency,
)
from .errors import ConfigError, ShapeError
from .graph import GraphBatch, GraphCSR
from .hubs import (
    AssignmentMatrix,
    AttnScores,
    balanced_random_assignment,
    effective_k,
    full_assignment,
    hub_distances,
    init_hub_features,
    initial_assignment,
    num_hubs,
    random_assignment,
    reassign,
)
from .partition import Clustering, cluster
from .tensor import (
    DiffGraph,
    SegmentIndex,
    Tensor,
    add_bias,
    backward,
    layer_norm,
    matmul,
    relu,
    segment_mean,
    softmax_cross_entropy,
    squared_error,
)

HEAD_KINDS = ("node_class", "graph_class", "graph_reg")
ARCHITECTURES = ("rehub", "gcn_baseline")


@dataclass
class ModelConfig:
    hubs_ratio: float = 1.0
    k: int = 3
    layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    spoke_encoder: bool = True
    hub_init: str = "cluster_mean"        # cluster_mean | learned
    clustering: str = "bfs_balanced"      # bfs_balanced | random | balanced_random
    assignment: str = "feature_similarity"  # feature_similarity | random | balanced_random
    reassignment: str = "attention"       # attention | none | random | balanced_random
    fc_mode: bool = False
    head: str = "node_class"
    out_dim: int = 2
    layernorm: bool = True
    arch: str = "rehub"

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.hubs_ratio <= 0:
            raise ConfigError(f"hubs_ratio must be > 0, got {self.hubs_ratio}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"unknown head '{self.head}'")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture '{self.arch}'")
        if self.hub_init not in ("cluster_mean", "learned"):
            raise ConfigError(f"unknown hub_init '{self.hub_init}'")
        if self.assignment not in ("feature_similarity", "random", "balanced_random"):
            raise ConfigError(f"unknown assignment '{self.assignment}'")
        if self.reassignment not in ("attention", "none", "random", "balanced_random"):
            raise ConfigError(f"unknown reassignment '{self.reassignment}'")


@dataclass
class TrainConfig:
    lr: float = 3e-4
    steps: int = 1000
    seed: int = 0
    optimizer: str = "adam"  # adam | sgd
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class ModelState:
    """Ordered parameter arrays with deterministic seeded initialization."""

    def __init__(self, params: dict[str, np.ndarray], d_in: int):
        self.params = params
        self.d_in = d_in

    @classmethod
    def initialize(cls, cfg: ModelConfig, d_in: int, max_nodes: int, seed: int) -> "ModelState":
        rng = np.random.default_rng(seed)
        d = cfg.hidden_dim
        d_h = d // cfg.heads
        params: dict[str, np.ndarray] = {}

        def u(name, rows, cols, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=(rows, cols))

        u("enc.w", d_in, d, d_in)
        u("enc.b", 1, d, d_in)
        if cfg.spoke_encoder and cfg.arch == "rehub":
            u("spoke_enc.w", d, d, d)
            u("spoke_enc.b", 1, d, d)
        if cfg.hub_init == "learned" and cfg.arch == "rehub":
            u("hub_p", num_hubs(max_nodes, cfg.hubs_ratio), d, d)
        for layer in range(cfg.layers):
            u(f"l{layer}.mpnn.w", d, d, d)
            u(f"l{layer}.mpnn.b", 1, d, d)
            if cfg.arch == "rehub":
                for block in ("s2h", "h2h", "h2s"):
                    for h in range(cfg.heads):
                        u(f"l{layer}.{block}.w_src{h}", d, d_h, d)
                        u(f"l{layer}.{block}.w_dst{h}", d, d_h, d)
                        u(f"l{layer}.{block}.att{h}", d_h, 1, d_h)
                    u(f"l{layer}.{block}.w_out", d, d, d)
        u("head.w1", d, d, d)
        u("head.b1", 1, d, d)
        u("head.w2", d, cfg.out_dim, d)
        u("head.b2", 1, cfg.out_dim, d)
        return cls(params, d_in)

    def materialize(self, tape: DiffGraph) -> dict[str, Tensor]:
        return {name: tape.leaf(arr, requires_grad=True)
                for name, arr in self.params.items()}


def _attention_params(leaves: dict[str, Tensor], base: str, heads: int) -> AttentionParams:
    return AttentionParams(
        w_src=[leaves[f"{base}.w_src{h}"] for h in range(heads)],
        w_dst=[leaves[f"{base}.w_dst{h}"] for h in range(heads)],
        att=[leaves[f"{base}.att{h}"] for h in range(heads)],
        w_out=leaves[f"{base}.w_out"],
    )


@dataclass
class ForwardTrace:
    """Per-graph, per-layer routing record emitted by the forward pass."""

    hub_counts: list[int] = field(default_factory=list)
    assignments: list[list[AssignmentMatrix]] = field(default_factory=list)
    gammas: list[list[AttnScores]] = field(default_factory=list)
    utilization: list[list[tuple[int, float]]] = field(default_factory=list)
    connection_counts: list[list[int]] = field(default_factory=list)
    hub_features: list[np.ndarray] = field(default_factory=list)


def derive_clusterings(batch: GraphBatch, cfg: ModelConfig, seed: int) -> list[Clustering]:
    """One clustering per graph in the batch, independent of batching."""
    out = []
    for g, sub in enumerate(split_batch(batch)):
        n_h = num_hubs(sub.num_nodes, cfg.hubs_ratio)
        out.append(cluster(sub, n_h, cfg.clustering, seed + g))
    return out


def split_batch(batch: GraphBatch) -> list[GraphCSR]:
    """Recover the individual graphs of a batch as CSR views."""
    subs = []
    start = 0
    m = batch.merged
    for count in batch.node_counts:
        end = start + count
        offs = m.row_offsets[start : end + 1] - m.row_offsets[start]
        cols = m.col_indices[m.row_offsets[start] : m.row_offsets[end]] - start
        subs.append(GraphCSR(count, offs, cols, m.node_features[start:end]))
        start = end
    return subs


def _mlp(leaves, prefix, x):
    hidden = relu(add_bias(matmul(x, leaves[f"{prefix}.w1"]), leaves[f"{prefix}.b1"]))
    return add_bias(matmul(hidden, leaves[f"{prefix}.w2"]), leaves[f"{prefix}.b2"])


def forward(
    batch: GraphBatch,
    cfg: ModelConfig,
    state: ModelState,
    tape: DiffGraph | None = None,
    clusterings: list[Clustering] | None = None,
    fixed_assignments: list[list[AssignmentMatrix]] | None = None,
    seed: int = 0,
) -> tuple[Tensor, ForwardTrace]:
    """Run the full network over a batch.

    `fixed_assignments` (per graph, per layer) pins all routing decisions,
    which keeps the loss differentiable for gradient checking. `seed`
    drives clustering (when not supplied) and the stochastic reassignment
    ablations.
    """
    if tape is None:
        tape = DiffGraph()
    leaves = state.materialize(tape)
    m = batch.merged
    if m.node_features.shape[1] != state.d_in:
        raise ShapeError(
            f"batch features have dim {m.node_features.shape[1]}, model expects {state.d_in}")
    x_in = tape.leaf(m.node_features)
    X = relu(add_bias(matmul(x_in, leaves["enc.w"]), leaves["enc.b"]))
    adj = normalized_adjacency(m)
    trace = ForwardTrace()

    if cfg.arch == "gcn_baseline":
        for layer in range(cfg.layers):
            mpnn = MpnnParams(leaves[f"l{layer}.mpnn.w"], leaves[f"l{layer}.mpnn.b"])
            X = gcn_layer(m, X, mpnn, adj)
            if cfg.layernorm:
                X = layer_norm(X)
        return _apply_head(batch, cfg, leaves, X, tape), trace

    if clusterings is None:
        clusterings = derive_clusterings(batch, cfg, seed)

    n_graphs = batch.num_graphs
    hub_counts = [c.cluster_count for c in clusterings]
    hub_base = np.concatenate([[0], np.cumsum(hub_counts)]).astype(np.int64)
    node_base = np.concatenate([[0], np.cumsum(batch.node_counts)]).astype(np.int64)
    total_hubs = int(hub_base[-1])
    trace.hub_counts = hub_counts

    # hub features: per-cluster mean of (optionally re-encoded) spoke features
    cluster_seg = np.empty(m.num_nodes, dtype=np.int64)
    for g in range(n_graphs):
        sl = slice(node_base[g], node_base[g + 1])
        cluster_seg[sl] = clusterings[g].cluster_of + hub_base[g]
    if cfg.hub_init == "learned":
        H = _tiled_p(leaves, hub_counts)
    else:
        encoder = None
        if cfg.spoke_encoder:
            encoder = lambda t: relu(add_bias(matmul(t, leaves["spoke_enc.w"]),
                                              leaves["spoke_enc.b"]))
        H = init_hub_features(X, _merged_clustering(cluster_seg, total_hubs),
                              mode="cluster_mean", encoder=encoder)

    rng = np.random.default_rng(seed + 0x5EED)
    assignments: list[AssignmentMatrix] = []
    for g in range(n_graphs):
        n_g, n_h = batch.node_counts[g], hub_counts[g]
        if fixed_assignments is not None:
            a = fixed_assignments[g][0]
        elif cfg.fc_mode:
            a = full_assignment(n_g, n_h)
        elif cfg.assignment == "random":
            a = random_assignment(n_g, n_h, cfg.k, int(rng.integers(2**63)))
        elif cfg.assignment == "balanced_random":
            a = balanced_random_assignment(n_g, n_h, cfg.k, int(rng.integers(2**63)))
        else:
            block = H.value[hub_base[g] : hub_base[g + 1]]
            a = initial_assignment(clusterings[g], block, cfg.k)
        assignments.append(a)
    trace.assignments = [[] for _ in range(n_graphs)]
    trace.gammas = [[] for _ in range(n_graphs)]
    trace.utilization = [[] for _ in range(n_graphs)]
    trace.connection_counts = [[] for _ in range(n_graphs)]

    hub_pairs_src, hub_pairs_dst = _block_pairs(hub_counts, hub_base)

    for layer in range(cfg.layers):
        conn_s = np.concatenate(
            [assignments[g].conn_spokes() + node_base[g] for g in range(n_graphs)])
        conn_h = np.concatenate(
            [assignments[g].conn_hubs() + hub_base[g] for g in range(n_graphs)])
        conn_slices = np.concatenate(
            [[0], np.cumsum([assignments[g].n_connections for g in range(n_graphs)])])

        mpnn = MpnnParams(leaves[f"l{layer}.mpnn.w"], leaves[f"l{layer}.mpnn.b"])
        X = gcn_layer(m, X, mpnn, adj)
        if cfg.layernorm:
            X = layer_norm(X)

        H, _ = bipartite_attention(X, H, conn_s, conn_h,
                                   _attention_params(leaves, f"l{layer}.s2h", cfg.heads))
        if cfg.layernorm:
            H = layer_norm(H)

        H, _ = bipartite_attention(H, H, hub_pairs_src, hub_pairs_dst,
                                   _attention_params(leaves, f"l{layer}.h2h", cfg.heads))
        if cfg.layernorm:
            H = layer_norm(H)

        X, gamma = bipartite_attention(H, X, conn_h, conn_s,
                                       _attention_params(leaves, f"l{layer}.h2s", cfg.heads),
                                       want_scores=True)
        if cfg.layernorm:
            X = layer_norm(X)

        trace.hub_features.append(H.value.copy())
        next_assignments = []
        for g in range(n_graphs):
            a = assignments[g]
            scores = AttnScores(gamma[conn_slices[g] : conn_slices[g + 1]], cfg.heads)
            trace.assignments[g].append(a)
            trace.gammas[g].append(scores)
            u, pct = metrics.hub_utilization(a)
            trace.utilization[g].append((u, pct))
            trace.connection_counts[g].append(
                2 * a.n_connections + hub_counts[g] ** 2)
            if fixed_assignments is not None:
                nxt = fixed_assignments[g][min(layer + 1, cfg.layers - 1)]
            elif cfg.fc_mode or cfg.reassignment == "none":
                nxt = a
            elif cfg.reassignment == "random":
                nxt = random_assignment(a.n_spokes, a.n_hubs, cfg.k,
                                        int(rng.integers(2**63)))
            elif cfg.reassignment == "balanced_random":
                nxt = balanced_random_assignment(a.n_spokes, a.n_hubs, cfg.k,
                                                 int(rng.integers(2**63)))
            else:
                block = H.value[hub_base[g] : hub_base[g + 1]]
                nxt = reassign(scores, a, hub_distances(block), cfg.k)
            next_assignments.append(nxt)
        assignments = next_assignments

    return _apply_head(batch, cfg, leaves, X, tape), trace


def _merged_clustering(seg_ids: np.ndarray, total: int) -> Clustering:
    return Clustering(seg_ids, total)


def _tiled_p(leaves, hub_counts) -> Tensor:
    """Stack the learned hub rows for each graph's hub block."""
    from .tensor import gather_rows

    idx = np.concatenate([np.arange(c, dtype=np.int64) for c in hub_counts])
    p = leaves["hub_p"]
    if idx.size and idx.max() >= p.rows:
        raise ShapeError(
            f"graph needs {int(idx.max()) + 1} hubs but learned matrix has {p.rows} rows")
    return gather_rows(p, idx)


def _block_pairs(hub_counts, hub_base) -> tuple[np.ndarray, np.ndarray]:
    srcs, dsts = [], []
    for g, c in enumerate(hub_counts):
        s, t = full_pairs(c)
        srcs.append(s + hub_base[g])
        dsts.append(t + hub_base[g])
    return np.concatenate(srcs), np.concatenate(dsts)


def _apply_head(batch, cfg, leaves, X, tape) -> Tensor:
    if cfg.head == "node_class":
        return _mlp(leaves, "head", X)
    seg = SegmentIndex(batch.graph_index, batch.num_graphs)
    pooled = segment_mean(X, seg)
    return _mlp(leaves, "head", pooled)


def loss(predictions: Tensor, labels, head: str) -> Tensor:
    """Mean cross-entropy for classification heads, mean squared error for
    regression."""
    if head in ("node_class", "graph_class"):
        return softmax_cross_entropy(predictions, labels)
    if head == "graph_reg":
        return squared_error(predictions, labels)
    raise ConfigError(f"unknown head '{head}'")


def batch_labels(batch: GraphBatch, head: str):
    if batch.merged.labels is None:
        raise ShapeError("batch carries no labels")
    if head == "node_class":
        return batch.merged.labels
    starts = np.concatenate([[0], np.cumsum(batch.node_counts)[:-1]]).astype(np.int64)
    per_graph = batch.merged.labels[starts]
    if head == "graph_class":
        return per_graph
    return np.asarray(per_graph, dtype=np.float64).reshape(-1, 1)


def train(
    data: list[GraphBatch],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    state: ModelState | None = None,
    clusterings: list[list[Clustering]] | None = None,
) -> tuple[ModelState, list[float]]:
    """Adam/SGD training over a fixed cycle of batches; returns the final
    state and the per-step loss log. Aborts on a non-finite loss."""
    if not data:
        raise ConfigError("no training batches")
    d_in = data[0].merged.node_features.shape[1]
    max_nodes = max(max(b.node_counts) for b in data)
    if state is None:
        state = ModelState.initialize(cfg, d_in, max_nodes, tcfg.seed)
    if clusterings is None and cfg.arch == "rehub":
        clusterings = [derive_clusterings(b, cfg, tcfg.seed + 31 * i)
                       for i, b in enumerate(data)]
    adam_m = {k: np.zeros_like(v) for k, v in state.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in state.params.items()}
    log: list[float] = []
    for step in range(tcfg.steps):
        i = step % len(data)
        tape = DiffGraph()
        preds, _ = forward(data[i], cfg, state, tape=tape,
                           clusterings=None if clusterings is None else clusterings[i],
                           seed=tcfg.seed + 7919 * step)
        step_loss = loss(preds, batch_labels(data[i], cfg.head), cfg.head)
        value = float(step_loss.value[0, 0])
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite loss at step {step}")
        log.append(value)
        grads = backward(tape, step_loss)
        leaves = {name: node for name, node in _leaf_nodes(tape, state)}
        t = step + 1
        for name, node in leaves.items():
            if node not in grads:
                continue
            g = grads[node].value
            p = state.params[name]
            if tcfg.optimizer == "sgd":
                p -= tcfg.lr * g
            else:
                m = adam_m[name]
                v = adam_v[name]
                m *= tcfg.beta1
                m += (1 - tcfg.beta1) * g
                v *= tcfg.beta2
                v += (1 - tcfg.beta2) * g * g
                m_hat = m / (1 - tcfg.beta1**t)
                v_hat = v / (1 - tcfg.beta2**t)
                p -= tcfg.lr * m_hat / (np.sqrt(v_hat) + tcfg.eps)
    return state, log


def _leaf_nodes(tape: DiffGraph, state: ModelState):
    """Parameter leaves are registered first and in dict order."""
    for i, name in enumerate(state.params):
        yield name, i


def evaluate_accuracy(
    data: list[GraphBatch],
    cfg: ModelConfig,
    state: ModelState,
    with_trace: bool = False,
):
    """Classification accuracy over batches; optionally also the traces."""
    correct = 0
    total = 0
    traces = []
    for i, b in enumerate(data):
        preds, trace = forward(b, cfg, state, seed=10_000 + i)
        labels = batch_labels(b, cfg.head)
        pred_ids = preds.value.argmax(axis=1)
        correct += int((pred_ids == np.asarray(labels)).sum())
        total += len(labels)
        traces.append(trace)
    acc = correct / total if total else 0.0
    return (acc, traces) if with_trace else acc


# ---------------------------------------------------------------------------
# scaling benchmark forwards: the hub model on a single graph, and a dense
# full-attention reference used only for the memory-scaling comparison


def _init_dense_state(cfg: ModelConfig, d_in: int, seed: int) -> ModelState:
    rng = np.random.default_rng(seed)
    d = cfg.hidden_dim
    d_h = d // cfg.heads
    params: dict[str, np.ndarray] = {}

    def u(name, rows, cols, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=(rows, cols))

    u("enc.w", d_in, d, d_in)
    u("enc.b", 1, d, d_in)
    for layer in range(cfg.layers):
        u(f"l{layer}.mpnn.w", d, d, d)
        u(f"l{layer}.mpnn.b", 1, d, d)
        for h in range(cfg.heads):
            u(f"l{layer}.attn.w_q{h}", d, d_h, d)
            u(f"l{layer}.attn.w_k{h}", d, d_h, d)
            u(f"l{layer}.attn.w_v{h}", d, d_h, d)
        u(f"l{layer}.attn.w_out", d, d, d)
    u("head.w1", d, d, d)
    u("head.b1", 1, d, d)
    u("head.w2", d, cfg.out_dim, d)
    u("head.b2", 1, cfg.out_dim, d)
    return ModelState(params, d_in)


def _dense_forward(graph: GraphCSR, cfg: ModelConfig, state: ModelState,
                   tape: DiffGraph) -> Tensor:
    """Quadratic reference: per layer a GCN step plus full multi-head
    self-attention with materialized n x n score matrices."""
    from .tensor import concat_cols, scale, softmax_rows, transpose

    leaves = state.materialize(tape)
    x_in = tape.leaf(graph.node_features)
    X = relu(add_bias(matmul(x_in, leaves["enc.w"]), leaves["enc.b"]))
    adj = normalized_adjacency(graph)
    d_h = cfg.hidden_dim // cfg.heads
    for layer in range(cfg.layers):
        mpnn = MpnnParams(leaves[f"l{layer}.mpnn.w"], leaves[f"l{layer}.mpnn.b"])
        X = gcn_layer(graph, X, mpnn, adj)
        head_outs = []
        for h in range(cfg.heads):
            q = matmul(X, leaves[f"l{layer}.attn.w_q{h}"])
            k = matmul(X, leaves[f"l{layer}.attn.w_k{h}"])
            v = matmul(X, leaves[f"l{layer}.attn.w_v{h}"])
            scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_h))
            head_outs.append(matmul(softmax_rows(scores), v))
        mixed = matmul(concat_cols(head_outs), leaves[f"l{layer}.attn.w_out"])
        X = add(X, mixed)
    return _mlp(leaves, "head", X)


def dense_peak_estimate(cfg: ModelConfig) -> "callable":
    """Live-element upper-bound estimate for the dense reference, used to
    skip sizes that would blow the configured budget."""
    def estimate(n: int) -> float:
        return 2.5 * n * n + 60.0 * n * cfg.hidden_dim * cfg.layers
    return estimate


def scaling_model_factory(cfg: ModelConfig, seed: int = 0):
    """Factory for measure_scaling: mode is 'rehub' or 'dense_reference'."""
    def factory(mode: str, d_in: int):
        if mode == "rehub":
            state = ModelState.initialize(cfg, d_in, max_nodes=1, seed=seed)

            def run(graph: GraphCSR, tape: DiffGraph) -> Tensor:
                b = GraphBatch(graph, np.zeros(graph.num_nodes, dtype=np.int64),
                               [graph.num_nodes])
                preds, _ = forward(b, cfg, state, tape=tape, seed=seed)
                return preds

            return run
        if mode == "dense_reference":
            state = _init_dense_state(cfg, d_in, seed)
            return lambda graph, tape: _dense_forward(graph, cfg, state, tape)
        raise ConfigError(f"unknown scaling mode '{mode}'")
    return factory


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + little-endian float64 blob in manifest order


def save_checkpoint(state: ModelState, cfg: ModelConfig, prefix) -> None:
    manifest = {
        "config": asdict(cfg),
        "d_in": state.d_in,
        "params": [
            {"name": name, "rows": int(a.shape[0]), "cols": int(a.shape[1])}
            for name, a in state.params.items()
        ],
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(f"{prefix}.bin", "wb") as fh:
        for a in state.params.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(prefix) -> tuple[ModelConfig, ModelState]:
    with open(f"{prefix}.json") as fh:
        manifest = json.load(fh)
    cfg = ModelConfig(**manifest["config"])
    params: dict[str, np.ndarray] = {}
    with open(f"{prefix}.bin", "rb") as fh:
        blob = fh.read()
    offset = 0
    for entry in manifest["params"]:
        n = entry["rows"] * entry["cols"]
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
        params[entry["name"]] = arr.reshape(entry["rows"], entry["cols"]).astype(np.float64)
        offset += n * 8
    return cfg, ModelState(params, manifest["d_in"])
