import itertools

import numpy as np
import pytest

from jcgraph.graph import Graph, gen_sbm
from jcgraph.partition import (ClusterAssignment, CutStats, _multilevel,
                               edge_cut_stats, partition_kmeans,
                               partition_metis_like, partition_random,
                               read_assignment, write_assignment)

from conftest import rng_graph


def two_triangle_bridge():
    return Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])


def brute_force_min_cut(g: Graph, cap: int) -> int:
    """Enumerate all balanced bipartitions (both sides within cap) and
    return the minimum edge cut. Oracle for the multilevel partitioner."""
    n = g.num_nodes
    pairs = g.edge_pairs()
    best = None
    for r in range(1, n // 2 + 1):
        if r > cap or n - r > cap:
            continue
        for side in itertools.combinations(range(n), r):
            s = np.zeros(n, dtype=bool)
            s[list(side)] = True
            cut = int((s[pairs[:, 0]] != s[pairs[:, 1]]).sum())
            if best is None or cut < best:
                best = cut
    return best


class TestMetisLike:
    def test_m1_all_zero(self):
        g = two_triangle_bridge()
        a = partition_metis_like(g, 1, seed=0)
        assert (a.assign == 0).all()
        assert edge_cut_stats(g, a).between_links == 0

    def test_bridge_graph_min_cut(self):
        g = two_triangle_bridge()
        # brute force over balanced bipartitions confirms the optimum is 1
        assert brute_force_min_cut(g, cap=4) == 1
        a = partition_metis_like(g, 2, seed=0)
        assert edge_cut_stats(g, a).between_links == 1
        assert set(a.assign[:3]) != set(a.assign[3:])

    def test_disjoint_cliques(self):
        edges = [(u, v) for u in range(4) for v in range(u + 1, 4)]
        edges += [(u + 4, v + 4) for u, v in edges]
        g = Graph.from_edges(8, edges)
        assert brute_force_min_cut(g, cap=5) == 0
        a = partition_metis_like(g, 2, seed=0)
        assert edge_cut_stats(g, a).between_links == 0

    def test_within_1_25x_of_brute_force(self):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(40):
            n = int(rng.integers(4, 13))
            g = rng_graph(rng, n, float(rng.uniform(0.2, 0.7)))
            if g.num_edges == 0:
                continue
            cap = int(np.ceil(1.2 * n / 2))
            opt = brute_force_min_cut(g, cap)
            got = edge_cut_stats(g, partition_metis_like(g, 2, seed=1)).between_links
            assert got <= max(1.25 * opt, opt), f"n={n}: got {got}, optimum {opt}"
            checked += 1
        assert checked >= 25

    def test_balance_tolerance(self):
        ds = gen_sbm(5, 60, 0.1, 0.005, 3, 0.5, seed=3)
        for m in (3, 5, 7):
            a = partition_metis_like(ds.graph, m, seed=2)
            assert a.sizes().min() >= 1
            assert a.sizes().max() <= int(np.ceil(1.2 * 300 / m))

    def test_deterministic(self):
        ds = gen_sbm(4, 40, 0.2, 0.02, 3, 0.5, seed=5)
        a = partition_metis_like(ds.graph, 4, seed=9)
        b = partition_metis_like(ds.graph, 4, seed=9)
        assert (a.assign == b.assign).all()

    def test_refinement_cut_non_increasing(self):
        # trace covers the coarsest initial cut plus one entry per level
        ds = gen_sbm(4, 120, 0.08, 0.003, 4, 0.5, seed=3)
        _, trace = _multilevel(ds.graph, 4, seed=5)
        assert len(trace) >= 2  # coarsening actually happened
        assert all(trace[i + 1] <= trace[i] for i in range(len(trace) - 1))

    def test_beats_random_on_sbm(self):
        ds = gen_sbm(4, 60, 0.15, 0.01, 3, 0.5, seed=8)
        metis_rate = edge_cut_stats(ds.graph, partition_metis_like(ds.graph, 4, 0)).rate
        rand_rate = edge_cut_stats(ds.graph, partition_random(240, 4, 0)).rate
        assert metis_rate > 5 * rand_rate

    def test_bad_m(self):
        g = two_triangle_bridge()
        with pytest.raises(ValueError):
            partition_metis_like(g, 0, seed=0)
        with pytest.raises(ValueError):
            partition_metis_like(g, 7, seed=0)


class TestRandomPartition:
    def test_m1_all_zero(self):
        assert (partition_random(4, 1, seed=0).assign == 0).all()

    def test_expected_spread(self):
        # n=1000, m=10: each cluster lands in [50, 150] for these seeds
        for seed in range(5):
            sizes = partition_random(1000, 10, seed).sizes()
            assert sizes.min() >= 50 and sizes.max() <= 150

    def test_deterministic(self):
        a = partition_random(100, 7, seed=3)
        b = partition_random(100, 7, seed=3)
        assert (a.assign == b.assign).all()

    def test_small_n_flags_empty(self):
        a = partition_random(4, 4, seed=1)
        sizes = a.sizes()
        assert sizes.sum() == 4
        assert set(a.empty_clusters) == set(np.flatnonzero(sizes == 0))


class TestKmeans:
    def test_separated_blobs(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(0, 0.1, (20, 2)), rng.normal(10, 0.1, (20, 2))])
        a = partition_kmeans(x, 2, seed=1)
        assert len(set(a.assign[:20])) == 1
        assert len(set(a.assign[20:])) == 1
        assert a.assign[0] != a.assign[20]

    def test_singletons_when_m_equals_n(self):
        x = np.arange(6, dtype=float).reshape(6, 1) * 10
        a = partition_kmeans(x, 6, seed=0)
        assert sorted(a.assign) == list(range(6))

    def test_identical_rows_terminate(self):
        x = np.ones((5, 3))
        a = partition_kmeans(x, 2, seed=0, max_iter=50)
        assert a.sizes().sum() == 5
        assert a.sizes().min() >= 1  # repair fills the empty cluster

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(40, 3))
        assert (partition_kmeans(x, 4, seed=5).assign == partition_kmeans(x, 4, seed=5).assign).all()

    def test_bad_m(self):
        with pytest.raises(ValueError):
            partition_kmeans(np.ones((3, 2)), 0, seed=0)
        with pytest.raises(ValueError):
            partition_kmeans(np.ones((3, 2)), 4, seed=0)


class TestCutStats:
    def test_single_cluster(self):
        g = two_triangle_bridge()
        cs = edge_cut_stats(g, ClusterAssignment(1, np.zeros(6, dtype=np.int64)))
        assert cs == CutStats(7, 0)
        assert cs.rate == float("inf")

    def test_triangle_partition_by_hand(self):
        g = two_triangle_bridge()
        a = ClusterAssignment(2, np.array([0, 0, 0, 1, 1, 1]))
        cs = edge_cut_stats(g, a)
        assert (cs.within_links, cs.between_links) == (6, 1)
        assert cs.rate == 6.0

    def test_counts_partition_edge_total(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 30))
            g = rng_graph(rng, n, 0.3)
            m = int(rng.integers(1, 5))
            a = partition_random(n, m, seed=int(rng.integers(100)))
            cs = edge_cut_stats(g, a)
            assert cs.within_links + cs.between_links == g.num_edges

    def test_size_mismatch(self):
        g = two_triangle_bridge()
        with pytest.raises(ValueError):
            edge_cut_stats(g, ClusterAssignment(2, np.zeros(4, dtype=np.int64)))


class TestAssignmentFile:
    def test_roundtrip(self, tmp_path):
        a = partition_random(25, 4, seed=6)
        write_assignment(tmp_path / "a.txt", a)
        b = read_assignment(tmp_path / "a.txt")
        assert b.num_clusters == 4
        assert (a.assign == b.assign).all()

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.txt").write_text("5 x\n0\n")
        with pytest.raises(ValueError):
            read_assignment(tmp_path / "bad.txt")
