import math

import numpy as np
import pytest

from helpers import reassign_oracle
from rehub.errors import ContractError, InvalidParameterError
from rehub.hubs import (
    AssignmentMatrix,
    AttnScores,
    balanced_random_assignment,
    bottom_k_indices,
    effective_k,
    full_assignment,
    hub_distances,
    init_hub_features,
    initial_assignment,
    num_hubs,
    random_assignment,
    reassign,
    valid_strides,
    _stride_rows,
)
from rehub.partition import Clustering
from rehub.tensor import DiffGraph, relu


class TestNumHubs:
    def test_paper_anchor_479(self):
        assert num_hubs(479, 1.0) == 22

    def test_paper_anchor_151(self):
        assert num_hubs(151, 1.0) == 12

    def test_clamp_floor(self):
        assert num_hubs(1, 1.0) == 1

    def test_clamp_ceiling(self):
        assert num_hubs(4, 10.0) == 4

    def test_monotone_in_spokes_and_ratio(self):
        prev = 0
        for n in range(1, 400, 7):
            cur = num_hubs(n, 1.0)
            assert cur >= prev
            prev = cur
        prev = 0
        for r in (0.25, 0.5, 1.0, 2.0, 4.0):
            cur = num_hubs(100, r)
            assert cur >= prev
            prev = cur

    def test_invalid_params(self):
        with pytest.raises(InvalidParameterError):
            num_hubs(0, 1.0)
        with pytest.raises(InvalidParameterError):
            num_hubs(10, 0.0)


class TestInitHubFeatures:
    def test_cluster_mean(self):
        g = DiffGraph()
        spokes = g.leaf([[1.0, 3.0], [3.0, 5.0]])
        clusters = Clustering(np.array([0, 0]), 1)
        out = init_hub_features(spokes, clusters)
        np.testing.assert_allclose(out.value, [[2.0, 4.0]])

    def test_learned_returns_parameter_rows(self):
        g = DiffGraph()
        p = g.leaf([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], requires_grad=True)
        spokes = g.leaf(np.zeros((5, 2)))
        clusters = Clustering(np.array([0, 1, 1, 0, 1]), 2)
        out = init_hub_features(spokes, clusters, mode="learned", learned_p=p)
        np.testing.assert_array_equal(out.value, [[1.0, 2.0], [3.0, 4.0]])

    def test_identity_encoder_matches_plain(self):
        rng = np.random.default_rng(0)
        feats = rng.random((6, 3))
        clusters = Clustering(np.array([0, 1, 0, 1, 2, 2]), 3)
        g = DiffGraph()
        plain = init_hub_features(g.leaf(feats), clusters)
        encoded = init_hub_features(g.leaf(feats), clusters, encoder=lambda t: t)
        np.testing.assert_array_equal(plain.value, encoded.value)

    def test_empty_cluster_is_zero(self):
        g = DiffGraph()
        spokes = g.leaf([[1.0, 1.0], [2.0, 2.0]])
        clusters = Clustering(np.array([0, 0]), 3)
        out = init_hub_features(spokes, clusters)
        np.testing.assert_array_equal(out.value[1:], np.zeros((2, 2)))

    def test_nonlinear_encoder_applied_before_mean(self):
        g = DiffGraph()
        spokes = g.leaf([[-1.0, 2.0], [3.0, -4.0]])
        clusters = Clustering(np.array([0, 0]), 1)
        out = init_hub_features(spokes, clusters, encoder=relu)
        np.testing.assert_allclose(out.value, [[1.5, 1.0]])


class TestInitialAssignment:
    def test_nearest_by_distance(self):
        clusters = Clustering(np.array([0]), 3)
        feats = np.array([[0.0, 0.0], [5.0, 0.0], [1.0, 0.0]])
        a = initial_assignment(clusters, feats, k=2)
        assert set(a.rows[0]) == {0, 2}

    def test_k_at_least_hub_count_gives_fc(self):
        clusters = Clustering(np.array([0, 1, 2]), 3)
        feats = np.random.default_rng(0).random((3, 2))
        a = initial_assignment(clusters, feats, k=5)
        for row in a.rows:
            assert set(row) == {0, 1, 2}

    def test_k_one_equals_clustering(self):
        cluster_of = np.array([2, 0, 1, 2, 1])
        clusters = Clustering(cluster_of, 3)
        feats = np.zeros((3, 2))  # even with all-identical features
        a = initial_assignment(clusters, feats, k=1)
        np.testing.assert_array_equal(a.rows[:, 0], cluster_of)

    def test_first_hub_is_cluster_hub(self):
        rng = np.random.default_rng(5)
        clusters = Clustering(rng.integers(0, 4, size=20), 4)
        a = initial_assignment(clusters, rng.random((4, 3)), k=3)
        np.testing.assert_array_equal(a.rows[:, 0], clusters.cluster_of)
        a.validate()


class TestBalancedRandomAssignment:
    def test_stride_example(self):
        rows = _stride_rows(np.arange(6), u=5, n_spokes=2, k_eff=2)
        np.testing.assert_array_equal(rows[0], [0, 1])
        np.testing.assert_array_equal(rows[1], [5, 0])

    def test_valid_strides_for_six(self):
        assert valid_strides(6) == [1, 5]

    def test_loads_match_enumeration_9_6_2(self):
        # literal enumeration of the stride formula: 18 connections over
        # 6 hubs, spread bounded by k (exact uniformity needs N_h | N_s)
        for seed in range(10):
            a = balanced_random_assignment(9, 6, 2, seed=seed)
            loads = a.hub_loads()
            assert loads.sum() == 18
            assert loads.max() - loads.min() <= 2
            counts = np.zeros(6, dtype=int)
            for i in range(9):
                for h in a.rows[i]:
                    counts[h] += 1
            np.testing.assert_array_equal(loads, counts)

    def test_load_bound_over_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            n_h = int(rng.integers(1, 65))
            n_s = int(rng.integers(1, 513))
            k = int(rng.integers(1, 6))
            a = balanced_random_assignment(n_s, n_h, k, seed=int(rng.integers(1 << 30)))
            a.validate()
            loads = a.hub_loads()
            assert loads.max() - loads.min() <= min(k, n_h)

    def test_stride_map_is_permutation(self):
        for n_h in range(1, 65):
            for u in valid_strides(n_h):
                hit = np.sort((np.arange(n_h) * u) % n_h)
                np.testing.assert_array_equal(hit, np.arange(n_h))

    def test_deterministic(self):
        a = balanced_random_assignment(20, 7, 3, seed=5)
        b = balanced_random_assignment(20, 7, 3, seed=5)
        np.testing.assert_array_equal(a.rows, b.rows)


class TestHubDistances:
    def test_pythagorean(self):
        d = hub_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert d.matrix[0, 1] == 25.0
        assert d.matrix[1, 0] == 25.0

    def test_identical_rows_zero(self):
        d = hub_distances(np.ones((4, 3)))
        np.testing.assert_array_equal(d.matrix, np.zeros((4, 4)))

    def test_single_hub(self):
        d = hub_distances(np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(d.matrix, [[0.0]])

    def test_invariants(self):
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((8, 5))
        d = hub_distances(feats).matrix
        assert (np.diag(d) == 0).all()
        np.testing.assert_array_equal(d, d.T)
        assert (d >= 0).all()


class TestBottomK:
    def test_basic(self):
        np.testing.assert_array_equal(bottom_k_indices([0.0, 2.0, 1.0], 2), [0, 2])

    def test_tie_breaks_low_index(self):
        np.testing.assert_array_equal(bottom_k_indices([0.0, 1.0, 1.0], 2), [0, 1])

    def test_full_length_sorts_by_value(self):
        np.testing.assert_array_equal(bottom_k_indices([3.0, 1.0, 2.0], 3), [1, 2, 0])

    def test_k_too_large(self):
        with pytest.raises(InvalidParameterError):
            bottom_k_indices([1.0], 2)


def _random_instance(rng):
    n_s = int(rng.integers(1, 51))
    n_h = int(rng.integers(1, 11))
    k = int(rng.integers(1, 5))
    k_eff = effective_k(k, n_h)
    rows = np.stack([rng.permutation(n_h)[:k_eff] for _ in range(n_s)])
    a = AssignmentMatrix(n_s, n_h, rows.astype(np.int64))
    gamma = rng.random(a.n_connections)
    delta = hub_distances(rng.standard_normal((n_h, 3)))
    return a, AttnScores(gamma, 1), delta, k


class TestReassign:
    def test_hand_traced_example(self):
        # spoke 0 holds {0, 1} and prefers hub 0; hub 0's two nearest are
        # itself and hub 2 (0.16 < 1.0)
        feats = np.array([[0.0, 0.0], [1.0, 0.0], [0.4, 0.0]])
        delta = hub_distances(feats)
        a = AssignmentMatrix(2, 3, np.array([[0, 1], [1, 2]]))
        gamma = AttnScores(np.array([0.7, 0.3, 0.5, 0.5]), 1)
        out = reassign(gamma, a, delta, k=2)
        assert set(out.rows[0]) == {0, 2}

    def test_fc_mode_is_identity(self):
        a = full_assignment(5, 3)
        gamma = AttnScores(np.random.default_rng(0).random(15), 1)
        delta = hub_distances(np.random.default_rng(1).random((3, 2)))
        out = reassign(gamma, a, delta, k=3)
        np.testing.assert_array_equal(out.rows, a.rows)

    def test_identical_features_pick_first_ids(self):
        delta = hub_distances(np.ones((5, 2)))
        a = AssignmentMatrix(3, 5, np.array([[4, 3], [2, 1], [0, 4]]))
        gamma = AttnScores(np.array([1.0, 0.0, 0.0, 1.0, 0.5, 0.5]), 1)
        out = reassign(gamma, a, delta, k=2)
        for row in out.rows:
            np.testing.assert_array_equal(row, [0, 1])

    def test_score_tie_prefers_lowest_hub_id(self):
        feats = np.array([[0.0], [10.0], [20.0]])
        delta = hub_distances(feats)
        a = AssignmentMatrix(1, 3, np.array([[2, 1]]))
        gamma = AttnScores(np.array([0.5, 0.5]), 1)
        out = reassign(gamma, a, delta, k=2)
        assert set(out.rows[0]) == {1, 0}  # anchor hub 1, nearest other is 0

    def test_misaligned_scores_rejected(self):
        a = full_assignment(2, 2)
        with pytest.raises(ContractError):
            reassign(AttnScores(np.ones(3), 1), a, hub_distances(np.ones((2, 1))), 2)

    def test_matches_literal_oracle_on_100_instances(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            a, gamma, delta, k = _random_instance(rng)
            ours = reassign(gamma, a, delta, k)
            ours.validate()
            expected = reassign_oracle(a.rows, gamma.values, delta.matrix, k)
            np.testing.assert_array_equal(np.sort(ours.rows, axis=1),
                                          np.sort(expected, axis=1))


class TestAssignmentInvariants:
    def test_row_cardinality_everywhere(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            n_s = int(rng.integers(1, 40))
            n_h = int(rng.integers(1, 12))
            k = int(rng.integers(1, 6))
            seed = int(rng.integers(1 << 30))
            builders = [
                balanced_random_assignment(n_s, n_h, k, seed),
                random_assignment(n_s, n_h, k, seed),
                initial_assignment(
                    Clustering(rng.integers(0, n_h, n_s), n_h),
                    rng.standard_normal((n_h, 3)), k),
            ]
            for a in builders:
                a.validate()
                assert a.k_eff == effective_k(k, n_h)
