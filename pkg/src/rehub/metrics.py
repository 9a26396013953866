"""Analytics: hub utilization, load distributions, Bhattacharyya similarity,
and the instrumented scaling benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InvalidParameterError
from .graph import random_regular
from .hubs import AssignmentMatrix
from .tensor import DiffGraph


def hub_utilization(assignment: AssignmentMatrix) -> tuple[int, float]:
    """Number and fraction of hubs with at least one connected spoke."""
    used = int(np.unique(assignment.rows).size) if assignment.rows.size else 0
    return used, used / assignment.n_hubs


def spoke_load_distribution(assignment: AssignmentMatrix) -> np.ndarray:
    """Per-hub share of all spoke-to-hub connections; sums to 1."""
    if assignment.n_spokes < 1:
        raise InvalidParameterError("need at least one spoke")
    return assignment.hub_loads() / assignment.n_connections


def bhattacharyya(p, q) -> float:
    """Similarity of two discrete distributions: sum of sqrt(p*q), in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError(f"length mismatch {p.shape} vs {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise ContractError("distributions must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ContractError("distributions must sum to 1")
    return float(np.sqrt(p * q).sum())


def utilization_histogram(pcts) -> np.ndarray:
    """Share of graphs per 10%-wide utilization bin; sums to 100."""
    pcts = np.asarray(pcts, dtype=np.float64) * 100.0
    bins = np.minimum((pcts // 10).astype(int), 9)
    hist = np.bincount(bins, minlength=10).astype(np.float64)
    return hist * (100.0 / max(len(pcts), 1))


@dataclass
class UtilizationReport:
    """Per-layer utilization counts, percentages, and 10%-bin histograms."""

    used: list[list[int]]        # [layer][graph]
    pct: list[list[float]]       # [layer][graph]
    histogram: list[np.ndarray]  # [layer], each sums to 100


def utilization_report(per_graph_layers: list[list[tuple[int, float]]]) -> UtilizationReport:
    """Aggregate forward-trace utilization entries indexed [graph][layer]."""
    n_layers = len(per_graph_layers[0])
    used = [[g[layer][0] for g in per_graph_layers] for layer in range(n_layers)]
    pct = [[g[layer][1] for g in per_graph_layers] for layer in range(n_layers)]
    hist = [utilization_histogram(p) for p in pct]
    return UtilizationReport(used, pct, hist)


# ---------------------------------------------------------------------------
# scaling benchmark


@dataclass
class ScalingRecord:
    n_nodes: int
    peak_elems: int | None
    op_count: int | None
    wall_ms: float | None
    mode: str
    budget_exceeded: bool = False


def measure_scaling(
    model_factory,
    sizes,
    mode: str,
    seed: int,
    degree: int = 3,
    feature_dim: int = 4,
    element_budget: float | None = None,
    peak_estimate=None,
) -> list[ScalingRecord]:
    """Run one forward pass per graph size and record the live-element
    high-water mark and primitive-op work.

    model_factory(mode, d_in) returns a callable (graph, tape) -> Tensor.
    Sizes whose estimated peak exceeds element_budget are recorded as
    budget-exceeded instead of being run.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise InvalidParameterError("sizes must be ascending")
    forward_fn = model_factory(mode, feature_dim)
    records = []
    for i, n in enumerate(sizes):
        if (element_budget is not None and peak_estimate is not None
                and peak_estimate(n) > element_budget):
            records.append(ScalingRecord(n, None, None, None, mode, True))
            continue
        g = random_regular(n, degree, seed + i, feature_dim=feature_dim)
        tape = DiffGraph(retain_values=False)
        tape.reset_peak()
        t0 = time.perf_counter()
        out = forward_fn(g, tape)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        assert out is not None
        records.append(ScalingRecord(n, tape.peak_elements, tape.work_units,
                                     wall_ms, mode))
    return records


def fit_loglog_slope(ns, ys, min_points: int = 2) -> float:
    """Ordinary least-squares slope of log(y) against log(n)."""
    ns = np.asarray(ns, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if ns.size < min_points:
        raise InvalidParameterError(
            f"need at least {min_points} points, got {ns.size}")
    x = np.log(ns)
    y = np.log(ys)
    x_c = x - x.mean()
    return float((x_c * (y - y.mean())).sum() / (x_c * x_c).sum())
