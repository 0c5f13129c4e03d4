import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urbanmfg.network import (
    NetworkError,
    build_network,
    discretize,
    edge_point,
    geodesic_distance_matrix,
    transition_probabilities,
)

from conftest import MU, SEGMENT, SQUARE, STAR, TRIANGLE

SQRT3 = math.sqrt(3.0)


def simple_path_lengths(net, start, goal):
    """All simple vertex-path lengths from start to goal by depth-first enumeration."""
    out = []

    def walk(v, seen, length):
        if v == goal:
            out.append(length)
            return
        for edge_id, _ in net.adjacency[v]:
            other = net.edges[edge_id].other(v)
            if other not in seen:
                walk(other, seen | {other}, length + net.edges[edge_id].length)

    walk(start, {start}, 0.0)
    return out


def brute_force_distance(net, loc_a, loc_b):
    (ea, ya), (eb, yb) = loc_a, loc_b
    A, B = net.edges[ea], net.edges[eb]
    best = abs(ya - yb) if ea == eb else math.inf
    for p, dp in ((A.tail, ya), (A.head, A.length - ya)):
        for q, dq in ((B.tail, yb), (B.head, B.length - yb)):
            best = min(best, dp + dq + min(simple_path_lengths(net, p, q)))
    return best


def test_triangle_lengths(triangle):
    for e in triangle.edges:
        assert e.length == pytest.approx(SQRT3, abs=1e-12)
        assert np.linalg.norm(e.unit_vector) == pytest.approx(1.0, abs=1e-15)
    assert triangle.total_length == pytest.approx(3 * SQRT3)


def test_segment_has_reflecting_ends():
    net = build_network(SEGMENT, mu=MU)
    assert net.edges[0].length == 1.0
    assert net.is_reflecting(0) and net.is_reflecting(1)


def test_square_degrees(square):
    assert [square.degree(j) for j in range(4)] == [3, 2, 3, 2]
    assert len(square.edges) == 5


def test_kirchhoff_normalization(square):
    for p in range(2):
        for j in range(4):
            total = sum(square.gamma[p][(j, a)] * square.edges[a].mu[p] for a in square.incident_edges(j))
            assert total == pytest.approx(1.0, abs=1e-14)


def test_edge_point(triangle):
    e = triangle.edges[0]
    assert np.allclose(edge_point(triangle, 0, 0.0), [1.0, 0.0])
    assert np.allclose(edge_point(triangle, 0, e.length), triangle.vertices[1].coords)
    mid = ((1 + math.cos(2 * math.pi / 3)) / 2, math.sin(2 * math.pi / 3) / 2)
    assert np.allclose(edge_point(triangle, 0, e.length / 2), mid, atol=1e-15)


def test_transition_probabilities(star):
    assert transition_probabilities(star, 0, 1) == pytest.approx({0: 1 / 3, 1: 1 / 3, 2: 1 / 3})
    assert transition_probabilities(star, 1, 1) == {0: 1.0}
    # gamma * mu products proportional to (2, 1, 1)
    gamma = {(0, 0): (0.5 / 0.4, 0.5 / 0.2), (0, 1): (0.25 / 0.4, 0.25 / 0.2), (0, 2): (0.25 / 0.4, 0.25 / 0.2)}
    net = build_network(STAR, mu=MU, gamma=gamma)
    for pop in (1, 2):
        assert transition_probabilities(net, 0, pop) == pytest.approx({0: 0.5, 1: 0.25, 2: 0.25})


def test_exit_probabilities_sum_to_one(square):
    for pop in (1, 2):
        for j in range(4):
            assert math.fsum(transition_probabilities(square, j, pop).values()) == 1.0


def test_invalid_networks():
    with pytest.raises(NetworkError):
        build_network({"vertices": [(0, 0, 0), (1, 1, 0), (2, 2, 0), (3, 3, 0)],
                       "edges": [{"tail": 0, "head": 1}, {"tail": 2, "head": 3}]}, mu=MU)
    with pytest.raises(NetworkError):
        build_network({"vertices": [(0, 0, 0), (1, 1, 0)],
                       "edges": [{"tail": 0, "head": 1}, {"tail": 0, "head": 1}]}, mu=MU)
    with pytest.raises(NetworkError):
        build_network(SEGMENT, mu=(0.0, 0.2))
    with pytest.raises(NetworkError):
        build_network(STAR, mu=MU, gamma={(0, 0): (1.0, 1.0)})


def test_round_trip_spec(square):
    again = build_network(square.to_spec())
    assert again.to_spec() == square.to_spec()
    assert [e.length for e in again.edges] == [e.length for e in square.edges]


def test_discretize_unit_edge():
    g = discretize(build_network(SEGMENT, mu=MU), 0.25)
    assert np.allclose(g.node_arclength, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.n_per_edge.tolist() == [5]
    assert g.weights.sum() == pytest.approx(1.0)


def test_discretize_triangle_count(triangle):
    g = discretize(triangle, 0.01)
    assert g.size == 3 * (math.ceil(SQRT3 / 0.01) + 1)
    assert np.all(g.spacing <= 0.01)
    for e in triangle.edges:
        y = g.node_arclength[g.edge_slice(e.id)]
        assert y[0] == 0.0 and y[-1] == e.length
        assert np.allclose(np.diff(y), g.spacing[e.id])


def test_discretize_rejects_coarse(triangle):
    with pytest.raises(NetworkError):
        discretize(triangle, 2.0)


def test_geodesic_basics(triangle_grid):
    d = geodesic_distance_matrix(triangle_grid)
    assert np.all(np.diag(d) == 0.0)
    assert np.allclose(d, d.T)
    k = triangle_grid.offsets[1]
    assert d[k, k + 1] == pytest.approx(triangle_grid.spacing[1])
    v0 = triangle_grid.node_of_vertex(0, 0)
    v1 = triangle_grid.node_of_vertex(1, 0)
    assert d[v0, v1] == pytest.approx(SQRT3)
    assert min(simple_path_lengths(triangle_grid.network, 0, 1)) == pytest.approx(SQRT3)


@pytest.mark.parametrize("name", ["triangle_grid", "square_grid", "star_grid"])
def test_geodesic_matches_path_enumeration(name, request):
    grid = request.getfixturevalue(name)
    d = geodesic_distance_matrix(grid)
    rng = np.random.default_rng(7)
    for i, j in rng.integers(0, grid.size, size=(150, 2)):
        loc_i = (int(grid.node_edge[i]), float(grid.node_arclength[i]))
        loc_j = (int(grid.node_edge[j]), float(grid.node_arclength[j]))
        assert d[i, j] == pytest.approx(brute_force_distance(grid.network, loc_i, loc_j), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_geodesic_triangle_inequality(a, b, c):
    from urbanmfg.network import build_network as bn

    grid = _square_grid()
    d = geodesic_distance_matrix(grid)
    i, j, k = a % grid.size, b % grid.size, c % grid.size
    assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


_CACHE = {}


def _square_grid():
    if "g" not in _CACHE:
        _CACHE["g"] = discretize(build_network(SQUARE, mu=MU), 0.1)
    return _CACHE["g"]
