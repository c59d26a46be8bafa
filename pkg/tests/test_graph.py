import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import L_FIVE
from etconsensus.graph import (
    GraphError,
    WeightedDigraph,
    apply_laplacian,
    is_strongly_connected,
    is_weight_balanced,
    laplacian,
    ring,
)


def test_five_agent_laplacian(graph5):
    np.testing.assert_array_equal(laplacian(graph5), L_FIVE)


def test_five_agent_edge_count(graph5):
    assert len(graph5.edges) == np.count_nonzero(L_FIVE - np.diag(np.diag(L_FIVE)))


def test_pair_laplacian():
    np.testing.assert_array_equal(laplacian(ring(2)), [[1, -1], [-1, 1]])


def test_single_agent_rejected():
    with pytest.raises(GraphError, match="out-degree"):
        WeightedDigraph(1, ())


@pytest.mark.parametrize(
    "edges, msg",
    [
        (((0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)), "self-loop"),
        (((0, 1, -1.0), (1, 0, 1.0)), "positive"),
        (((0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0)), "duplicate"),
        (((0, 2, 1.0), (1, 0, 1.0)), "outside"),
    ],
)
def test_invalid_edges(edges, msg):
    with pytest.raises(GraphError, match=msg):
        WeightedDigraph(2, edges)


def test_balance_examples(graph5):
    assert is_weight_balanced(graph5)
    assert np.allclose(L_FIVE.sum(axis=0), 0.0)
    assert is_weight_balanced(ring(2))
    assert not is_weight_balanced(WeightedDigraph(2, ((0, 1, 1.0), (1, 0, 2.0))))


def test_single_directed_edge_rejected():
    # agent 1 has no out-neighbour, so the graph never exists to be unbalanced
    with pytest.raises(GraphError, match="out-degree"):
        WeightedDigraph(2, ((0, 1, 1.0),))


def test_connectivity_examples(graph5):
    assert is_strongly_connected(graph5)
    assert is_strongly_connected(ring(2))
    two_islands = WeightedDigraph(4, ((0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)))
    assert not is_strongly_connected(two_islands)


def test_apply_laplacian_examples(graph5):
    xhat = np.array([-1.0, 0.0, 2.0, 1.0, 2.0])
    np.testing.assert_allclose(apply_laplacian(graph5, xhat), L_FIVE @ xhat)
    np.testing.assert_allclose(apply_laplacian(graph5, xhat), [-4, -4, 6, -1, 3])
    np.testing.assert_allclose(apply_laplacian(graph5, np.full(5, 3.7)), 0.0, atol=1e-12)
    np.testing.assert_allclose(apply_laplacian(ring(2), [1.0, -1.0]), [2, -2])


def test_apply_laplacian_dimension_mismatch(graph5):
    with pytest.raises(GraphError, match="length"):
        apply_laplacian(graph5, np.zeros(4))


def test_laplacian_round_trip(graph5):
    g2 = WeightedDigraph.from_laplacian(laplacian(graph5))
    np.testing.assert_array_equal(laplacian(g2), laplacian(graph5))
    d = graph5.to_dict()
    g3 = WeightedDigraph.from_edges(d["n"], d["edges"])
    np.testing.assert_array_equal(laplacian(g3), L_FIVE)


def test_from_laplacian_rejects_bad_rows():
    with pytest.raises(GraphError, match="row"):
        WeightedDigraph.from_laplacian([[1.0, -2.0], [-1.0, 1.0]])
    with pytest.raises(GraphError, match="positive"):
        WeightedDigraph.from_laplacian([[-1.0, 1.0], [-1.0, 1.0]])


# --- random graphs against brute-force oracles ---------------------------------


@st.composite
def digraphs(draw):
    n = draw(st.integers(2, 8))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, min_size=1, max_size=len(pairs)))
    # every agent needs an out-edge
    have = {i for i, _ in chosen}
    chosen += [(i, (i + 1) % n) for i in range(n) if i not in have and (i, (i + 1) % n) not in chosen]
    weights = draw(st.lists(st.sampled_from([0.5, 1.0, 2.0, 3.0]), min_size=len(chosen), max_size=len(chosen)))
    return WeightedDigraph(n, tuple((i, j, w) for (i, j), w in zip(chosen, weights)))


def floyd_warshall_reach(n, edges):
    reach = np.eye(n, dtype=bool)
    for i, j, _ in edges:
        reach[i, j] = True
    for k, i, j in itertools.product(range(n), repeat=3):
        reach[i, j] |= reach[i, k] and reach[k, j]
    return reach


@settings(max_examples=150, deadline=None)
@given(digraphs())
def test_strong_connectivity_matches_floyd_warshall(g):
    assert is_strongly_connected(g) == bool(floyd_warshall_reach(g.n, g.edges).all())


@settings(max_examples=150, deadline=None)
@given(digraphs())
def test_balance_matches_column_sums(g):
    lap = np.zeros((g.n, g.n))
    for i, j, w in g.edges:
        lap[i, j] -= w
        lap[i, i] += w
    assert is_weight_balanced(g) == bool(np.all(np.abs(lap.sum(axis=0)) <= 1e-9))
    np.testing.assert_allclose(laplacian(g).sum(axis=1), 0.0, atol=1e-12)


@st.composite
def balanced_graphs(draw):
    # positive combinations of directed cycles are weight-balanced
    n = draw(st.integers(2, 8))
    w = {}
    for _ in range(draw(st.integers(1, 4))):
        perm = draw(st.permutations(range(n)))
        k = draw(st.integers(2, n))
        c = draw(st.floats(0.1, 3.0))
        cyc = perm[:k]
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            w[(a, b)] = w.get((a, b), 0.0) + c
    for i in range(n):
        if not any(a == i for a, _ in w):
            j = (i + 1) % n
            w[(i, j)] = w.get((i, j), 0.0) + 1.0
            w[(j, i)] = w.get((j, i), 0.0) + 1.0
    return WeightedDigraph(n, tuple((a, b, v) for (a, b), v in w.items()))


@settings(max_examples=150, deadline=None)
@given(balanced_graphs(), st.integers(0, 2**32 - 1))
def test_balanced_graph_preserves_sum(g, seed):
    assert is_weight_balanced(g)
    v = np.random.default_rng(seed).normal(size=g.n) * 10
    assert abs(apply_laplacian(g, v).sum()) <= 1e-9 * max(1.0, np.abs(v).max())
