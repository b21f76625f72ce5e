"""Affinity propagation and hierarchy tests.

The clustering itself is checked against an exhaustive oracle: for
small K every possible exemplar subset is scored by net similarity
(sum of member-to-exemplar similarities plus preferences), and the
message-passing result must match the best partition.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from nutricluster.clustering import (
    APConfig,
    Hierarchy,
    affinity_propagation,
    build_hierarchy,
    cluster_categories,
)
from nutricluster.errors import (
    ConfigurationError,
    ConsistencyError,
    ConvergenceError,
    DegenerateInputError,
)
from nutricluster.similarity import SimilarityMatrix


def block_matrix(sizes, within=0.9, cross=0.1):
    k = sum(sizes)
    values = np.full((k, k), cross)
    start = 0
    blocks = []
    for size in sizes:
        idx = list(range(start, start + size))
        blocks.append(idx)
        for j in idx:
            for l in idx:
                values[j, l] = within
        start += size
    np.fill_diagonal(values, 1.0)
    labels = tuple(f"c{i:02d}" for i in range(k))
    return SimilarityMatrix(labels, values, {"domains": ["test"]}), blocks


def median_off_diagonal(values):
    k = values.shape[0]
    mask = ~np.eye(k, dtype=bool)
    return float(np.median(values[mask]))


def exhaustive_best_partition(values, preference):
    """Score every exemplar subset; return the best partition as index sets."""
    k = values.shape[0]
    best_net, best_ex = -np.inf, None
    for r in range(1, k + 1):
        for exemplars in itertools.combinations(range(k), r):
            net = preference * r
            for i in range(k):
                if i not in exemplars:
                    net += max(values[i, e] for e in exemplars)
            if net > best_net:
                best_net, best_ex = net, exemplars
    parts = {e: {e} for e in best_ex}
    for i in range(k):
        if i in best_ex:
            continue
        chosen = max(best_ex, key=lambda e: (values[i, e], -e))
        parts[chosen].add(i)
    return frozenset(frozenset(p) for p in parts.values()), best_net


def partition_of(assignment):
    parts = {}
    for i, e in enumerate(assignment.assignment):
        parts.setdefault(int(e), set()).add(i)
    return frozenset(frozenset(p) for p in parts.values())


class TestAPConfig:
    def test_defaults(self):
        cfg = APConfig()
        assert cfg.preference == "median"
        assert cfg.damping == 0.5
        assert cfg.max_iterations == 500
        assert cfg.convergence_window == 50

    def test_damping_range_enforced(self):
        with pytest.raises(ConfigurationError, match="damping"):
            APConfig(damping=0.49)
        with pytest.raises(ConfigurationError, match="damping"):
            APConfig(damping=1.0)

    def test_window_must_fit_in_budget(self):
        with pytest.raises(ConfigurationError, match="window"):
            APConfig(max_iterations=50, convergence_window=50)

    def test_bad_preference_rejected(self):
        with pytest.raises(ConfigurationError, match="preference"):
            APConfig(preference="auto")

    def test_negative_noise_rejected(self):
        with pytest.raises(ConfigurationError, match="noise"):
            APConfig(tie_break_noise=-1e-10)

    def test_numeric_preference_accepted(self):
        assert APConfig(preference=-2.5).preference == -2.5


class TestAffinityPropagation:
    def test_identical_pair_merges(self):
        """Two categories with similarity 1 everywhere land in one cluster."""
        sim = SimilarityMatrix(("a", "b"), np.ones((2, 2)), {})
        for seed in range(5):
            result = affinity_propagation(sim, APConfig(seed=seed))
            assert result.converged
            assert len(result.exemplars) == 1
            assert partition_of(result) == frozenset({frozenset({0, 1})})

    def test_two_blocks_recovered(self):
        sim, blocks = block_matrix((3, 3))
        result = affinity_propagation(sim, APConfig(seed=0))
        assert partition_of(result) == frozenset(frozenset(b) for b in blocks)

    def test_matches_exhaustive_oracle_on_planted_blocks(self):
        rng = np.random.default_rng(42)
        matches = 0
        for _ in range(10):
            n_blocks = int(rng.integers(2, 4))
            sizes = rng.integers(2, 4, size=n_blocks)
            while sizes.sum() > 8:
                sizes = rng.integers(2, 4, size=n_blocks)
            sim, _ = block_matrix(tuple(int(s) for s in sizes))
            result = affinity_propagation(sim, APConfig(seed=1))
            expected, _ = exhaustive_best_partition(sim.values, median_off_diagonal(sim.values))
            if partition_of(result) == expected:
                matches += 1
        assert matches == 10

    def test_membership_maximises_similarity_to_exemplar(self):
        sim, _ = block_matrix((3, 2, 3), within=0.8, cross=0.2)
        result = affinity_propagation(sim, APConfig(seed=3))
        ex = np.array(result.exemplars)
        for i, e in enumerate(result.assignment):
            if i in result.exemplars:
                assert e == i
            else:
                assert sim.values[i, e] == sim.values[i, ex].max()

    def test_high_preference_gives_singletons(self):
        sim, _ = block_matrix((2, 2), within=0.6, cross=0.1)
        result = affinity_propagation(sim, APConfig(preference=0.99, seed=0))
        assert len(result.exemplars) == 4

    def test_deterministic_for_fixed_seed(self):
        sim, _ = block_matrix((3, 3))
        a = affinity_propagation(sim, APConfig(seed=7))
        b = affinity_propagation(sim, APConfig(seed=7))
        assert a.exemplars == b.exemplars
        assert np.array_equal(a.assignment, b.assignment)
        assert a.iterations == b.iterations

    def test_partition_stable_under_permutation(self):
        sim, _ = block_matrix((3, 2, 2), within=0.85, cross=0.15)
        rng = np.random.default_rng(5)
        perm = rng.permutation(len(sim.labels))
        permuted = SimilarityMatrix(
            tuple(sim.labels[p] for p in perm), sim.values[np.ix_(perm, perm)], {}
        )

        def label_partition(mat, result):
            parts = {}
            for i, e in enumerate(result.assignment):
                parts.setdefault(int(e), set()).add(mat.labels[i])
            return frozenset(frozenset(p) for p in parts.values())

        r1 = affinity_propagation(sim, APConfig(seed=0))
        r2 = affinity_propagation(permuted, APConfig(seed=0))
        assert label_partition(sim, r1) == label_partition(permuted, r2)

    def test_single_category_rejected(self):
        sim = SimilarityMatrix(("only",), np.ones((1, 1)), {})
        with pytest.raises(DegenerateInputError):
            affinity_propagation(sim, APConfig())

    def test_non_convergence_raises_with_exemplars(self):
        sim, _ = block_matrix((3, 3))
        config = APConfig(max_iterations=4, convergence_window=3, damping=0.9)
        with pytest.raises(ConvergenceError, match="did not converge") as err:
            affinity_propagation(sim, config)
        assert hasattr(err.value, "exemplars")

    def test_preference_value_recorded(self):
        sim, _ = block_matrix((3, 3))
        result = affinity_propagation(sim, APConfig(seed=0))
        assert result.preference_value == median_off_diagonal(sim.values)


class TestHierarchy:
    def test_build_orders_clusters_by_exemplar_label(self):
        sim, blocks = block_matrix((3, 3))
        result = affinity_propagation(sim, APConfig(seed=0))
        hierarchy = build_hierarchy(result, sim.labels, config={"seed": 0})
        assert [c.id for c in hierarchy.clusters] == [0, 1]
        exemplars = [c.exemplar for c in hierarchy.clusters]
        assert exemplars == sorted(exemplars)
        for cluster in hierarchy.clusters:
            assert list(cluster.members) == sorted(cluster.members)
            assert cluster.exemplar in cluster.members

    def test_cluster_of_covers_every_category(self):
        sim, _ = block_matrix((2, 3, 3), within=0.8, cross=0.1)
        hierarchy = cluster_categories(sim, APConfig(seed=0))
        mapping = hierarchy.cluster_of()
        assert set(mapping) == set(sim.labels)
        assert set(mapping.values()) == set(range(len(hierarchy.clusters)))

    def test_json_round_trip(self):
        sim, _ = block_matrix((3, 3))
        hierarchy = cluster_categories(sim, APConfig(seed=2))
        clone = Hierarchy.from_json_obj(hierarchy.to_json_obj())
        assert clone.clusters == hierarchy.clusters
        assert clone.converged == hierarchy.converged
        assert clone.iterations == hierarchy.iterations
        assert clone.config == hierarchy.config

    def test_duplicate_member_rejected(self):
        with pytest.raises(ConsistencyError, match="once"):
            Hierarchy.from_json_obj(
                {
                    "clusters": [
                        {"id": 0, "exemplar": "a", "members": ["a", "b"]},
                        {"id": 1, "exemplar": "b", "members": ["b"]},
                    ],
                    "config": {},
                    "converged": True,
                    "iterations": 10,
                }
            )

    def test_exemplar_must_be_member(self):
        with pytest.raises(ConsistencyError, match="exemplar"):
            Hierarchy.from_json_obj(
                {
                    "clusters": [{"id": 0, "exemplar": "z", "members": ["a", "b"]}],
                    "config": {},
                    "converged": True,
                    "iterations": 10,
                }
            )

    def test_ids_must_be_dense_and_ordered(self):
        with pytest.raises(ConsistencyError, match="id"):
            Hierarchy.from_json_obj(
                {
                    "clusters": [{"id": 1, "exemplar": "a", "members": ["a"]}],
                    "config": {},
                    "converged": True,
                    "iterations": 1,
                }
            )

    def test_singleton_clusters_allowed(self):
        sim, _ = block_matrix((2, 2), within=0.6, cross=0.1)
        hierarchy = cluster_categories(sim, APConfig(preference=0.99, seed=0))
        assert len(hierarchy.clusters) == 4
        assert all(len(c.members) == 1 for c in hierarchy.clusters)
