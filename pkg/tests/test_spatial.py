"""Leroux CAR field: conditionals, joint density, exact sampling."""

import numpy as np
import pytest

from arealrt import (
    AdjacencyGraph,
    LerouxField,
    conditional_moments,
    log_density,
    path_graph,
    sample_field,
)
from conftest import connected_graphs


def dense_log_density(graph, v, rho, sigma2):
    I = graph.I
    Q = (rho * graph.structure_matrix() + (1 - rho) * np.eye(I)) / sigma2
    _, logdet = np.linalg.slogdet(Q)
    return 0.5 * logdet - 0.5 * v @ Q @ v - 0.5 * I * np.log(2 * np.pi)


class TestAdjacencyGraph:
    def test_path_counts(self):
        g = path_graph(3)
        np.testing.assert_array_equal(g.n, [1, 2, 1])
        assert list(g.neighbors[1]) == [0, 2]

    def test_four_cycle(self):
        g = AdjacencyGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        np.testing.assert_array_equal(g.n, [2, 2, 2, 2])

    def test_symmetry_and_dedup(self):
        g = AdjacencyGraph.from_edges(3, [(0, 1), (1, 0), (2, 1)])
        assert g.edges.shape == (2, 2)
        for i in range(3):
            for j in g.neighbors[i]:
                assert i in g.neighbors[j]

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            AdjacencyGraph.from_edges(3, [(1, 1)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            AdjacencyGraph.from_edges(3, [(0, 3)])

    def test_islands_detected(self):
        g = AdjacencyGraph.from_edges(3, [(0, 1)])
        assert g.has_islands


class TestEigenstructure:
    def test_eigenvalues_real_nonnegative_with_zero(self):
        for edges in [[(0, 1), (1, 2)], [(0, 1), (1, 2), (2, 3), (3, 0)]]:
            g = AdjacencyGraph.from_edges(max(max(e) for e in edges) + 1,
                                          edges)
            fld = LerouxField.from_graph(g)
            assert np.all(fld.eigenvalues >= 0)
            assert fld.eigenvalues.min() < 1e-8


class TestConditionalMoments:
    def test_rho_zero_is_heterogeneous(self):
        fld = LerouxField.from_graph(path_graph(3))
        mean, var = conditional_moments(fld, np.array([5.0, -2.0, 7.0]), 1,
                                        0.0, 2.5)
        assert mean == 0.0
        assert var == 2.5

    def test_intrinsic_limit(self):
        # middle node of a path, neighbours (2, 4): ICAR limit averages them
        fld = LerouxField.from_graph(path_graph(3))
        values = np.array([2.0, 0.0, 4.0])
        mean, var = conditional_moments(fld, values, 1, 1 - 1e-9, 1.0)
        np.testing.assert_allclose(mean, 3.0, atol=1e-7)
        np.testing.assert_allclose(var, 0.5, atol=1e-7)

    def test_hand_computed_case(self):
        # rho=0.5, n_i=2, neighbour sum 6, sigma2=1
        fld = LerouxField.from_graph(path_graph(3))
        values = np.array([2.0, 0.0, 4.0])
        mean, var = conditional_moments(fld, values, 1, 0.5, 1.0)
        np.testing.assert_allclose(mean, 0.5 * 6 / 1.5)
        np.testing.assert_allclose(var, 1 / 1.5)
        assert mean == pytest.approx(2.0)

    def test_index_out_of_range(self):
        fld = LerouxField.from_graph(path_graph(3))
        with pytest.raises(IndexError):
            conditional_moments(fld, np.zeros(3), 3, 0.5, 1.0)

    def test_matches_schur_complement(self):
        rng = np.random.default_rng(1)
        for n in (2, 4, 6):
            for edges in connected_graphs(n)[::7]:
                g = AdjacencyGraph.from_edges(n, edges)
                fld = LerouxField.from_graph(g)
                rho = rng.uniform(0, 0.99)
                s2 = rng.uniform(0.2, 3.0)
                v = rng.standard_normal(n)
                Q = (rho * g.structure_matrix()
                     + (1 - rho) * np.eye(n)) / s2
                for i in range(n):
                    var_d = 1.0 / Q[i, i]
                    mean_d = -var_d * (np.delete(Q[i], i) @ np.delete(v, i))
                    mean, var = conditional_moments(fld, v, i, rho, s2)
                    np.testing.assert_allclose(mean, mean_d, atol=1e-10)
                    np.testing.assert_allclose(var, var_d, atol=1e-10)


class TestLogDensity:
    def test_rho_zero_is_iid_normal(self):
        fld = LerouxField.from_graph(path_graph(4))
        v = np.array([0.3, -1.2, 0.8, 2.0])
        s2 = 1.7
        expected = np.sum(
            -0.5 * v**2 / s2 - 0.5 * np.log(2 * np.pi * s2)
        )
        np.testing.assert_allclose(log_density(fld, v, 0.0, s2), expected,
                                   atol=1e-12)

    def test_path_graph_vs_dense_oracle(self):
        g = path_graph(3)
        fld = LerouxField.from_graph(g)
        rng = np.random.default_rng(2)
        v = rng.standard_normal(3)
        got = log_density(fld, v, 0.4, 2.0)
        want = dense_log_density(g, v, 0.4, 2.0)
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_zero_vector_closed_form(self):
        g = path_graph(4)
        fld = LerouxField.from_graph(g)
        rho, s2 = 0.6, 0.9
        expected = (
            0.5 * np.log((rho * fld.eigenvalues + 1 - rho) / s2).sum()
            - 2.0 * np.log(2 * np.pi)
        )
        np.testing.assert_allclose(log_density(fld, np.zeros(4), rho, s2),
                                   expected, atol=1e-12)

    def test_rho_bounds(self):
        fld = LerouxField.from_graph(path_graph(3))
        with pytest.raises(ValueError):
            log_density(fld, np.zeros(3), 1.0, 1.0)
        with pytest.raises(ValueError):
            log_density(fld, np.zeros(3), -0.1, 1.0)

    def test_continuity_in_rho(self):
        g = AdjacencyGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4),
                                          (4, 0), (1, 3)])
        fld = LerouxField.from_graph(g)
        rng = np.random.default_rng(4)
        v = rng.standard_normal(5)
        s2 = 1.3
        grid = np.linspace(0.0, 1 - 1e-6, 2001)
        vals = np.array([log_density(fld, v, r, s2) for r in grid])
        assert np.all(np.isfinite(vals))
        lam = fld.eigenvalues
        quad_slope = 0.5 * abs(fld.structure_quad(v) - v @ v) / s2
        det_slope = 0.5 * np.max(
            np.abs(lam - 1)[None, :] / (np.outer(grid, lam)
                                        + (1 - grid)[:, None]).clip(1e-9)
        ).sum()
        bound = (quad_slope + det_slope) * np.diff(grid)[0] * 1.5 + 1e-9
        assert np.abs(np.diff(vals)).max() <= bound

    def test_isomorphic_relabeling_invariance(self):
        g1 = path_graph(4)
        perm = np.array([3, 2, 1, 0])  # reverse the path: isomorphic
        g2 = AdjacencyGraph.from_edges(
            4, [(perm[a], perm[b]) for a, b in g1.edges]
        )
        f1, f2 = LerouxField.from_graph(g1), LerouxField.from_graph(g2)
        rng = np.random.default_rng(5)
        v = rng.standard_normal(4)
        v2 = np.empty(4)
        v2[perm] = v
        np.testing.assert_allclose(
            log_density(f1, v, 0.7, 1.1), log_density(f2, v2, 0.7, 1.1),
            atol=1e-10,
        )


class TestSampleField:
    def test_rho_zero_marginal_variance(self):
        fld = LerouxField.from_graph(path_graph(3))
        rng = np.random.default_rng(6)
        draws = np.array([sample_field(fld, 0.0, 2.0, rng)
                          for _ in range(100000)])
        np.testing.assert_allclose(draws.var(axis=0), 2.0, rtol=0.03)

    def test_fixed_seed_reproducible(self):
        fld = LerouxField.from_graph(path_graph(4))
        a = sample_field(fld, 0.5, 1.0, np.random.default_rng(9))
        b = sample_field(fld, 0.5, 1.0, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_covariance_matches_inverse_precision(self):
        g = AdjacencyGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        fld = LerouxField.from_graph(g)
        rho, s2 = 0.7, 1.0
        rng = np.random.default_rng(10)
        n = 200000
        draws = np.array([sample_field(fld, rho, s2, rng) for _ in range(n)])
        emp = np.cov(draws.T)
        Q = (rho * g.structure_matrix() + (1 - rho) * np.eye(4)) / s2
        cov = np.linalg.inv(Q)
        se = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / n)
        assert np.all(np.abs(emp - cov) < 3 * se)
