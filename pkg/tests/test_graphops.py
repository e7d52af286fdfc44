# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""Tests of graformer/graphops.py"""

import math

import numpy as np
import pytest

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from graformer import graphops
from graformer.autodiff import Tensor, make_rng
from graformer.exceptions import ContractError, DegenerateSpectrum, GraphError, ShapeError
from graformer.graphops import (
    SkeletonGraph, chebyshev_basis, chebyshev_polynomials, graph_laplacian, hand21, human16,
    load_skeleton, max_eigenvalue, normalized_adjacency, parse_skeleton, path_graph,
    read_matrix_csv, rescaled_laplacian, skeleton_preset, write_matrix_csv,
)

from tests.graformertest import GraformerTest
from tests.helpers import random_graph


def two_path():
    return SkeletonGraph(2, [(0, 1)])


def single():
    return SkeletonGraph(1, [])


def chebyshev_oracle(lt, x, k):
    """T_k(lt) x from explicit matrix powers and power-series coefficients."""
    coeffs = np.polynomial.chebyshev.cheb2poly([0] * k + [1])
    out = np.zeros_like(x)
    for power, c in enumerate(coeffs):
        out += c * (np.linalg.matrix_power(lt, power) @ x)
    return out


class SkeletonGraphTest(GraformerTest):
    """Tests of SkeletonGraph construction and its queries."""

    run_in_temp_dir = False

    def test_presets(self):
        h = human16()
        assert h.joint_count == 16
        assert len(h.edges) == 15
        assert h.root_index == 0
        assert h.joint_names[h.root_index] == "pelvis"
        g = hand21()
        assert g.joint_count == 21
        assert len(g.edges) == 20
        assert g.joint_names[g.root_index] == "wrist"

    def test_presets_are_trees(self):
        for g in [human16(), hand21()]:
            dist = g.hop_distances()
            assert (dist >= 0).all()
            parents, order = g.kinematic_parents()
            assert sorted(order) == list(range(g.joint_count))
            assert parents[g.root_index] == -1
            seen = set()
            for v in order:
                if parents[v] != -1:
                    assert parents[v] in seen
                seen.add(v)

    def test_skeleton_preset_by_name(self):
        assert skeleton_preset("human16") == human16()
        assert skeleton_preset("hand21") == hand21()
        with pytest.raises(GraphError, match="Unknown skeleton 'spider'"):
            skeleton_preset("spider")

    @pytest.mark.parametrize("edges, root, msg", [
        ([(0, 3)], 0, r"outside \[0, 3\)"),
        ([(-1, 2)], 0, r"outside \[0, 3\)"),
        ([(1, 1)], 0, "self-loop"),
        ([(0, 1), (1, 0)], 0, "listed twice"),
        ([(0, 1)], 3, r"Root index 3 is outside"),
    ])
    def test_invalid_graphs(self, edges, root, msg):
        with pytest.raises(GraphError, match=msg):
            SkeletonGraph(3, edges, root_index=root)

    def test_bad_joint_count(self):
        with pytest.raises(GraphError, match="positive integer"):
            SkeletonGraph(0, [])

    def test_edges_are_canonical(self):
        g = SkeletonGraph(3, [(2, 1), (1, 0)])
        assert g.edges == ((1, 2), (0, 1))
        assert g == SkeletonGraph(3, [(0, 1), (1, 2)], name="other")
        assert hash(g) == hash(SkeletonGraph(3, [(0, 1), (1, 2)]))

    def test_neighbors_and_distances(self):
        g = path_graph(5)
        assert g.neighbors(0) == [1]
        assert g.neighbors(2) == [1, 3]
        assert g.hop_distances()[0].tolist() == [0, 1, 2, 3, 4]

    def test_disconnected_distances(self):
        g = SkeletonGraph(4, [(0, 1), (2, 3)])
        dist = g.hop_distances()
        assert dist[0, 2] == -1
        assert dist[2, 3] == 1
        parents, order = g.kinematic_parents()
        assert order == [0, 1]
        assert parents == [-1, 0, -1, -1]


class SkeletonFileTest(GraformerTest):
    """Tests of the skeleton text format."""

    def test_round_trip(self):
        g = human16()
        self.make_file("human.txt", g.to_text())
        g2 = load_skeleton("human.txt")
        assert g2 == g
        assert g2.name == "human"

    def test_comments_and_blanks(self):
        g = parse_skeleton("""\
            # a little chain
            3 1

            0 1
            1 2
            """)
        assert g == SkeletonGraph(3, [(0, 1), (1, 2)], root_index=1)

    @pytest.mark.parametrize("text, msg", [
        ("", "empty"),
        ("3 0\n0 x\n", "Line 2: expected integers"),
        ("3 0\n0 1 2\n", "Line 2: expected two integers"),
        ("3 0\n0 5\n", "outside"),
    ])
    def test_bad_text(self, text, msg):
        with pytest.raises(GraphError, match=msg):
            parse_skeleton(text)

    def test_missing_file(self):
        with pytest.raises(GraphError, match="Couldn't read skeleton file"):
            load_skeleton("nothing_here.txt")

    def test_matrix_csv_round_trip(self):
        m = rescaled_laplacian(human16())
        write_matrix_csv(m, "out/lt.csv")
        # Shortest round-trip formatting reproduces every bit.
        assert np.array_equal(read_matrix_csv("out/lt.csv"), m)
        with open("out/lt.csv") as f:
            lines = f.read().splitlines()
        assert len(lines) == 16
        assert all(len(line.split(",")) == 16 for line in lines)


class NormalizedAdjacencyTest(GraformerTest):
    """Tests of normalized_adjacency."""

    run_in_temp_dir = False

    def test_single_node(self):
        assert normalized_adjacency(single()).tolist() == [[1.0]]

    def test_two_path(self):
        np.testing.assert_allclose(normalized_adjacency(two_path()), [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)

    def test_human16_sparsity(self):
        g = human16()
        a = normalized_adjacency(g)
        expected = np.eye(16, dtype=bool)
        for i, k in g.edges:
            expected[i, k] = expected[k, i] = True
        assert np.array_equal(a != 0, expected)
        assert np.array_equal(a, a.T)

    def test_deterministic(self):
        assert np.array_equal(normalized_adjacency(hand21()), normalized_adjacency(hand21()))


class LaplacianTest(GraformerTest):
    """Tests of graph_laplacian, max_eigenvalue, and rescaled_laplacian."""

    run_in_temp_dir = False

    def test_two_path(self):
        np.testing.assert_allclose(graph_laplacian(two_path()), [[1, -1], [-1, 1]], atol=1e-15)

    def test_single_node(self):
        assert graph_laplacian(single()).tolist() == [[1.0]]

    def test_three_path(self):
        r = 1 / math.sqrt(2)
        expected = [[1, -r, 0], [-r, 1, -r], [0, -r, 1]]
        np.testing.assert_allclose(graph_laplacian(path_graph(3)), expected, atol=1e-15)

    def test_isolated_node(self):
        g = SkeletonGraph(3, [(0, 1)])
        lap = graph_laplacian(g)
        assert lap[2].tolist() == [0.0, 0.0, 1.0]

    @pytest.mark.parametrize("m, expected", [
        ([[1, -1], [-1, 1]], 2.0),
        (np.eye(3), 1.0),
        (np.zeros((3, 3)), 0.0),
    ])
    def test_max_eigenvalue(self, m, expected):
        assert max_eigenvalue(np.array(m, dtype=float)) == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_max_eigenvalue_not_symmetric(self):
        with pytest.raises(ContractError, match="not symmetric"):
            max_eigenvalue(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_max_eigenvalue_not_square(self):
        with pytest.raises(ContractError, match="square"):
            max_eigenvalue(np.zeros((2, 3)))

    def test_rescaled_two_path(self):
        np.testing.assert_allclose(rescaled_laplacian(two_path()), [[0, -1], [-1, 0]], atol=1e-15)

    def test_rescaled_single(self):
        assert rescaled_laplacian(single()).tolist() == [[1.0]]

    def test_rescaled_human16_spectrum(self):
        ev = np.linalg.eigvalsh(rescaled_laplacian(human16()))
        assert ev.min() >= -1 - 1e-9
        assert ev.max() <= 1 + 1e-9
        assert ev.max() == pytest.approx(1.0, abs=1e-9)

    def test_degenerate_spectrum(self, monkeypatch):
        monkeypatch.setattr(graphops, "graph_laplacian", lambda g: np.zeros((g.joint_count,) * 2))
        with pytest.raises(DegenerateSpectrum, match="lambda_max"):
            rescaled_laplacian(path_graph(3))


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 21), st.integers(0, 2**32 - 1), st.floats(0.05, 0.9))
def test_spectral_properties_on_random_graphs(joint_count, seed, density):
    g = random_graph(make_rng(seed), joint_count, density)

    a = normalized_adjacency(g)
    assert np.max(np.abs(a - a.T)) <= 1e-12
    assert (a >= 0).all()

    ev = np.linalg.eigvalsh(graph_laplacian(g))
    assert ev.min() >= -1e-9
    assert ev.max() <= 2 + 1e-9
    assert ev.min() <= 1e-9 or not g.edges

    rev = np.linalg.eigvalsh(rescaled_laplacian(g))
    assert rev.min() >= -1 - 1e-9
    assert rev.max() <= 1 + 1e-9


class ChebyshevTest(GraformerTest):
    """Tests of chebyshev_basis and chebyshev_polynomials."""

    run_in_temp_dir = False

    def test_order_one(self, rng):
        x = rng.standard_normal((4, 3))
        terms = chebyshev_basis(rescaled_laplacian(path_graph(4)), x, 1)
        assert len(terms) == 1
        assert terms[0] is x

    def test_two_path_order_three(self):
        terms = chebyshev_polynomials(rescaled_laplacian(two_path()), 3)
        np.testing.assert_allclose(terms[0], np.eye(2), atol=1e-15)
        np.testing.assert_allclose(terms[1], [[0, -1], [-1, 0]], atol=1e-15)
        np.testing.assert_allclose(terms[2], np.eye(2), atol=1e-15)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_matches_polynomial_oracle(self, k):
        rng = make_rng(k)
        for _ in range(20):
            g = random_graph(rng, 5, 0.5)
            lt = rescaled_laplacian(g)
            x = rng.standard_normal((5, 3))
            terms = chebyshev_basis(lt, x, k)
            for n, term in enumerate(terms):
                assert np.max(np.abs(term - chebyshev_oracle(lt, x, n))) <= 1e-10

    def test_batched_features(self, rng):
        lt = rescaled_laplacian(human16())
        x = rng.standard_normal((3, 16, 4))
        terms = chebyshev_basis(lt, x, 3)
        for b in range(3):
            np.testing.assert_allclose(terms[2][b], chebyshev_basis(lt, x[b], 3)[2], rtol=1e-13, atol=1e-13)

    def test_works_on_tensors(self, rng):
        lt = rescaled_laplacian(path_graph(4))
        x = rng.standard_normal((4, 2))
        terms = chebyshev_basis(lt, Tensor(x), 3)
        assert all(isinstance(t, Tensor) for t in terms)
        np.testing.assert_allclose(terms[2].values, chebyshev_basis(lt, x, 3)[2], rtol=1e-14)

    def test_bad_order(self):
        with pytest.raises(ContractError, match="at least 1"):
            chebyshev_basis(np.eye(2), np.ones((2, 1)), 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError, match="doesn't match"):
            chebyshev_basis(np.eye(3), np.ones((2, 1)), 2)
        with pytest.raises(ShapeError, match="square"):
            chebyshev_basis(np.ones((2, 3)), np.ones((2, 1)), 2)
