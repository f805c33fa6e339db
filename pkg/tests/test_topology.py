import networkx as nx
import numpy as np
import pytest

from topkq import topology as tp


def check_mixing(mt: tp.MixingTopology):
    W = mt.dense()
    n = mt.n
    assert np.allclose(W, W.T, atol=1e-12)
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-10)
    off = ~np.eye(n, dtype=bool)
    A = np.zeros((n, n), dtype=bool)
    for i, j in mt.graph.edges:
        A[i, j] = A[j, i] = True
    assert np.all(W[off & ~A] == 0)
    assert 0 <= mt.sigma2 < 1


class TestGraph:
    def test_rejects_self_loop_and_duplicates(self):
        with pytest.raises(ValueError):
            tp.Graph(3, ((0, 0),))
        with pytest.raises(ValueError):
            tp.Graph(3, ((0, 1), (1, 0)))
        with pytest.raises(ValueError):
            tp.Graph(3, ((0, 3),))

    def test_neighbors(self):
        assert tp.neighbors(tp.gen_ring(5), 0) == {1, 4}
        assert tp.neighbors(tp.gen_complete(4), 2) == {0, 1, 3}
        assert tp.neighbors(tp.Graph(2, ((0, 1),)), 0) == {1}
        with pytest.raises(IndexError):
            tp.neighbors(tp.gen_ring(5), 5)

    def test_ring(self):
        g = tp.gen_ring(5)
        assert g.num_edges == 5 and np.all(g.degrees == 2)
        assert tp.gen_ring(4).diameter() == 2
        assert set(tp.gen_ring(3).edges) == set(tp.gen_complete(3).edges)
        with pytest.raises(ValueError):
            tp.gen_ring(2)

    def test_laplacian_matches_networkx(self):
        g = tp.gen_erdos_renyi(30, 60, seed=4)
        G = nx.Graph(list(g.edges))
        G.add_nodes_from(range(30))
        ref = nx.laplacian_matrix(G, nodelist=range(30)).toarray()
        assert np.array_equal(g.laplacian(), ref)

    def test_diameter_matches_networkx(self):
        g = tp.gen_erdos_renyi(40, 60, seed=9)
        assert g.diameter() == nx.diameter(nx.Graph(list(g.edges)))

    def test_io_roundtrip(self, tmp_path):
        g = tp.gen_erdos_renyi(12, 20, seed=1)
        tp.write_graph(tmp_path / "g.txt", g)
        assert tp.read_graph(tmp_path / "g.txt") == g


class TestErdosRenyi:
    def test_forced_cases(self):
        assert tp.gen_erdos_renyi(2, 1, seed=0).edges == ((0, 1),)
        assert set(tp.gen_erdos_renyi(4, 6, seed=3).edges) == set(tp.gen_complete(4).edges)

    def test_connected_with_exact_edge_count(self):
        g = tp.gen_erdos_renyi(100, 300, seed=7)
        assert g.num_edges == 300 and g.is_connected()
        assert nx.is_connected(nx.Graph(list(g.edges)))

    def test_reproducible(self):
        assert tp.gen_erdos_renyi(50, 120, seed=5) == tp.gen_erdos_renyi(50, 120, seed=5)
        assert tp.gen_erdos_renyi(50, 120, seed=5) != tp.gen_erdos_renyi(50, 120, seed=6)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            tp.gen_erdos_renyi(10, 8, seed=0)
        with pytest.raises(ValueError):
            tp.gen_erdos_renyi(4, 7, seed=0)

    def test_edge_decoding(self):
        n = 9
        i, j = tp._pair_from_index(np.arange(n * (n - 1) // 2), n)
        ri, rj = np.triu_indices(n, k=1)
        assert np.array_equal(i, ri) and np.array_equal(j, rj)


class TestMixingMatrix:
    def test_triangle(self):
        mt = tp.mixing_matrix(tp.gen_ring(3))
        assert mt.rho == pytest.approx(1 / 3)
        assert np.allclose(mt.dense(), np.full((3, 3), 1 / 3), atol=1e-12)
        assert mt.sigma2 == pytest.approx(0.0, abs=1e-12)

    def test_single_edge(self):
        mt = tp.mixing_matrix(tp.Graph(2, ((0, 1),)))
        assert mt.rho == pytest.approx(0.5)
        assert np.allclose(mt.dense(), 0.5)
        assert mt.sigma2 == pytest.approx(0.0, abs=1e-12)

    def test_complete_graph_averages(self):
        mt = tp.mixing_matrix(tp.gen_complete(7))
        assert np.allclose(mt.dense(), 1 / 7)
        assert mt.sigma2 == pytest.approx(0.0, abs=1e-12)

    def test_disconnected(self):
        with pytest.raises(ValueError):
            tp.mixing_matrix(tp.Graph(4, ((0, 1), (2, 3))))

    def test_sigma2_is_second_singular_value(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n = int(rng.integers(5, 40))
            m = int(rng.integers(n, n * (n - 1) // 2 + 1))
            mt = tp.mixing_matrix(tp.gen_erdos_renyi(n, m, int(rng.integers(1 << 30))))
            sv = np.linalg.svd(mt.dense(), compute_uv=False)
            assert mt.sigma2 == pytest.approx(np.sort(sv)[-2], abs=1e-10)
            check_mixing(mt)

    def test_sigma2_weakly_decreases_with_added_edges(self):
        # checked on sampled nested graphs, not a general property of this rho
        rng = np.random.default_rng(1)
        worse = 0
        for _ in range(20):
            g = tp.gen_erdos_renyi(30, 45, int(rng.integers(1 << 30)))
            missing = [(i, j) for i in range(30) for j in range(i + 1, 30) if (i, j) not in set(g.edges)]
            extra = [missing[t] for t in rng.choice(len(missing), 40, replace=False)]
            g2 = tp.Graph(30, g.edges + tuple(extra))
            worse += tp.mixing_matrix(g2).sigma2 > tp.mixing_matrix(g).sigma2 + 1e-12
        assert worse == 0

    def test_rows_sum_to_one_and_sparse_form(self):
        g = tp.gen_ring(6)
        mt = tp.mixing_matrix(g)
        x = np.ones(6)
        assert np.allclose(mt.mix(x), x)
        assert mt.scalars_per_round == 12
