"""Linear-complexity hub-and-spoke graph attention.

Graph nodes (spokes) talk to a sqrt-scale set of virtual nodes (hubs)
through sparse attention; each layer reassigns every spoke to the
neighborhood of its most-attended hub, so all hubs stay utilized while
per-layer cost stays linear in the node count.
"""

from .attention import AttentionParams, MpnnParams, bipartite_attention, gcn_layer, hub_self_attention
from .graph import GraphBatch, GraphCSR, batch, gen_token_task, load_graph, random_regular, save_graph
from .hubs import (
    AssignmentMatrix,
    AttnScores,
    HubDistances,
    balanced_random_assignment,
    bottom_k_indices,
    hub_distances,
    init_hub_features,
    initial_assignment,
    num_hubs,
    reassign,
)
from .metrics import (
    ScalingRecord,
    UtilizationReport,
    bhattacharyya,
    fit_loglog_slope,
    hub_utilization,
    measure_scaling,
    spoke_load_distribution,
)
from .model import (
    ModelConfig,
    ModelState,
    TrainConfig,
    evaluate_accuracy,
    forward,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
from .partition import Clustering, cluster
from .tensor import DiffGraph, SegmentIndex, Tensor, backward, finite_diff_check

__version__ = "0.1.0"
