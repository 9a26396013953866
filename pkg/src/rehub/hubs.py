"""Hub lifecycle: counts, feature init, assignment construction, reassignment.

An AssignmentMatrix is the sparse spoke-to-hub incidence: every spoke row
lists exactly k_eff = min(k, n_hubs) distinct hubs. Reassignment keeps each
spoke's highest-scoring hub and swaps the rest for that hub's nearest
neighbors in hub-feature space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InvalidParameterError
from .partition import Clustering
from .tensor import SegmentIndex, Tensor, gather_rows, segment_mean


@dataclass(eq=False)
class AssignmentMatrix:
    """Per-spoke hub rows plus the flattened spoke-major connection list."""

    n_spokes: int
    n_hubs: int
    rows: np.ndarray  # (n_spokes, k_eff) int64

    @property
    def k_eff(self) -> int:
        return self.rows.shape[1]

    @property
    def n_connections(self) -> int:
        return self.rows.size

    def conn_spokes(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_spokes, dtype=np.int64), self.k_eff)

    def conn_hubs(self) -> np.ndarray:
        return self.rows.reshape(-1)

    def hub_loads(self) -> np.ndarray:
        return np.bincount(self.conn_hubs(), minlength=self.n_hubs)

    def validate(self) -> None:
        if self.rows.shape[0] != self.n_spokes:
            raise ContractError("row count does not match spoke count")
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= self.n_hubs):
            raise ContractError("hub id out of range")
        if self.rows.size and (np.sort(self.rows, axis=1)[:, 1:] == np.sort(self.rows, axis=1)[:, :-1]).any():
            raise ContractError("duplicate hub in a spoke row")


@dataclass(eq=False)
class AttnScores:
    """Per-connection attention weights aligned with an AssignmentMatrix."""

    values: np.ndarray  # flat, spoke-major
    head_count: int


@dataclass(eq=False)
class HubDistances:
    """Symmetric matrix of squared euclidean distances between hub features."""

    matrix: np.ndarray


def num_hubs(n_spokes: int, r: float = 1.0) -> int:
    """Hub count: round(r * sqrt(n_spokes)), at least 1, at most n_spokes."""
    if n_spokes < 1:
        raise InvalidParameterError(f"need n_spokes >= 1, got {n_spokes}")
    if r <= 0:
        raise InvalidParameterError(f"need r > 0, got {r}")
    n_h = int(math.floor(r * math.sqrt(n_spokes) + 0.5))
    return max(1, min(n_h, n_spokes))


def effective_k(k: int, n_hubs: int) -> int:
    return min(k, n_hubs)


def init_hub_features(
    spokes: Tensor,
    clusters: Clustering,
    mode: str = "cluster_mean",
    encoder=None,
    learned_p: Tensor | None = None,
) -> Tensor:
    """Initial hub features: per-cluster means of (optionally encoded) spoke
    features, or rows of a learned parameter matrix. Empty clusters get the
    zero vector."""
    if mode == "learned":
        if learned_p is None:
            raise InvalidParameterError("learned hub init requires the parameter matrix")
        if learned_p.rows < clusters.cluster_count:
            raise InvalidParameterError(
                f"learned hub matrix has {learned_p.rows} rows, need {clusters.cluster_count}")
        return gather_rows(learned_p, np.arange(clusters.cluster_count))
    if mode != "cluster_mean":
        raise InvalidParameterError(f"unknown hub init mode '{mode}'")
    feats = encoder(spokes) if encoder is not None else spokes
    seg = SegmentIndex(clusters.cluster_of, clusters.cluster_count)
    return segment_mean(feats, seg)


def hub_distances(hub_feats: np.ndarray) -> HubDistances:
    """Pairwise squared euclidean distances; exact zero diagonal."""
    sq = np.einsum("ij,ij->i", hub_feats, hub_feats)
    d = sq[:, None] + sq[None, :] - 2.0 * (hub_feats @ hub_feats.T)
    d = np.maximum(d, 0.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return HubDistances(d)


def bottom_k_indices(row, k: int) -> np.ndarray:
    """Indices of the k smallest values in (value, index) lexicographic order."""
    row = np.asarray(row, dtype=np.float64)
    if k > row.size:
        raise InvalidParameterError(f"k={k} exceeds row length {row.size}")
    return np.argsort(row, kind="stable")[:k].astype(np.int64)


def initial_assignment(clusters: Clustering, hub_feats: np.ndarray, k: int) -> AssignmentMatrix:
    """First hub is the spoke's own cluster hub; the rest are that hub's
    nearest feature-space neighbors (ties to the lowest hub id)."""
    n_h = clusters.cluster_count
    k_eff = effective_k(k, n_h)
    delta = hub_distances(hub_feats).matrix.copy()
    np.fill_diagonal(delta, np.inf)  # never re-pick the cluster hub itself
    order = np.argsort(delta, axis=1, kind="stable")[:, : k_eff - 1]
    per_cluster = np.hstack([np.arange(n_h, dtype=np.int64)[:, None], order])
    return AssignmentMatrix(clusters.cluster_of.size, n_h, per_cluster[clusters.cluster_of])


def random_assignment(n_spokes: int, n_hubs: int, k: int, seed: int) -> AssignmentMatrix:
    """Each spoke draws k distinct hubs uniformly at random."""
    k_eff = effective_k(k, n_hubs)
    rng = np.random.default_rng(seed)
    rows = np.argsort(rng.random((n_spokes, n_hubs)), axis=1)[:, :k_eff]
    return AssignmentMatrix(n_spokes, n_hubs, rows.astype(np.int64))


def valid_strides(n_hubs: int) -> list[int]:
    """Strides coprime with the hub count (full-cycle guarantee)."""
    return [u for u in range(1, n_hubs) if math.gcd(u, n_hubs) == 1] or [1]


def _stride_rows(perm: np.ndarray, u: int, n_spokes: int, k_eff: int) -> np.ndarray:
    n_h = perm.size
    pos = (np.arange(n_spokes, dtype=np.int64)[:, None] * u
           + np.arange(k_eff, dtype=np.int64)[None, :]) % n_h
    return perm[pos]


def balanced_random_assignment(n_spokes: int, n_hubs: int, k: int, seed: int) -> AssignmentMatrix:
    """Permuted coprime-stride assignment: k distinct hubs per spoke with
    hub loads balanced to within k."""
    k_eff = effective_k(k, n_hubs)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_hubs).astype(np.int64)
    strides = valid_strides(n_hubs)
    u = int(strides[rng.integers(len(strides))])
    return AssignmentMatrix(n_spokes, n_hubs, _stride_rows(perm, u, n_spokes, k_eff))


def full_assignment(n_spokes: int, n_hubs: int) -> AssignmentMatrix:
    """Every spoke connected to every hub (FC mode)."""
    rows = np.tile(np.arange(n_hubs, dtype=np.int64), (n_spokes, 1))
    return AssignmentMatrix(n_spokes, n_hubs, rows)


def reassign(gamma: AttnScores, assignment: AssignmentMatrix, delta: HubDistances, k: int) -> AssignmentMatrix:
    """Swap each spoke onto the bottom-k distance neighborhood of its
    highest-scoring connected hub (score ties to the lowest hub id)."""
    if gamma.values.size != assignment.n_connections:
        raise ContractError(
            f"{gamma.values.size} scores misaligned with "
            f"{assignment.n_connections} connections")
    n_h = assignment.n_hubs
    k_eff = effective_k(k, n_h)
    if k_eff == n_h:
        return assignment
    hood = np.argsort(delta.matrix, axis=1, kind="stable")[:, :k_eff]
    scores = gamma.values.reshape(assignment.n_spokes, assignment.k_eff)
    top = scores.max(axis=1, keepdims=True)
    tied_hubs = np.where(scores == top, assignment.rows, n_h)
    anchor = tied_hubs.min(axis=1)
    return AssignmentMatrix(assignment.n_spokes, n_h, hood[anchor])
