"""Metric graph, its parametrization and the per-edge spatial grid.

Populations are indexed 1 (workers) and 2 (firms) in the public API; per
population tuples are stored 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

# Kirchhoff normalization is checked to this absolute tolerance.
GAMMA_TOL = 1e-9


class NetworkError(ValueError):
    """Invalid network declaration or discretization request."""


@dataclass(frozen=True)
class Vertex:
    id: int
    coords: tuple[float, float]


@dataclass(frozen=True)
class HousingProfile:
    """Piecewise-constant housing cost along an edge.

    ``values[i]`` applies on ``[breaks[i-1], breaks[i])`` with implicit
    ``breaks[-1] = 0`` and a final piece extending to the edge end.
    """

    values: tuple[float, ...]
    breaks: tuple[float, ...] = ()

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(np.asarray(self.breaks, dtype=float), y, side="right")
        return np.asarray(self.values, dtype=float)[idx]

    @classmethod
    def constant(cls, value: float) -> "HousingProfile":
        return cls(values=(float(value),))


@dataclass(frozen=True)
class Edge:
    id: int
    tail: int
    head: int
    length: float
    unit_vector: tuple[float, float]
    mu: tuple[float, float]
    housing: tuple[HousingProfile, HousingProfile]
    control_bounds: tuple[tuple[float, float], tuple[float, float]] = ((-5.0, 5.0), (-5.0, 5.0))

    def other(self, vertex: int) -> int:
        return self.head if vertex == self.tail else self.tail

    def orientation(self, vertex: int) -> int:
        """n_{j alpha}: +1 if ``vertex`` is the head (arclength = length), -1 if the tail."""
        if vertex == self.head:
            return 1
        if vertex == self.tail:
            return -1
        raise NetworkError(f"vertex {vertex} is not an endpoint of edge {self.id}")

    def arclength_of(self, vertex: int) -> float:
        return self.length if self.orientation(vertex) == 1 else 0.0


@dataclass(frozen=True)
class Network:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    # adjacency[j] = ((edge id, n_{j alpha}), ...) in increasing edge id order
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    # gamma[pop-1][(j, alpha)]
    gamma: tuple[Mapping[tuple[int, int], float], Mapping[tuple[int, int], float]]

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def degree(self, vertex: int) -> int:
        return len(self.adjacency[vertex])

    def is_reflecting(self, vertex: int) -> bool:
        """Degree-1 vertices reflect trajectories (zero-flux condition)."""
        return len(self.adjacency[vertex]) == 1

    def incident_edges(self, vertex: int) -> list[int]:
        return [a for a, _ in self.adjacency[vertex]]

    def min_length(self) -> float:
        return min(e.length for e in self.edges)

    def max_mu(self) -> float:
        return max(max(e.mu) for e in self.edges)

    def to_spec(self) -> dict[str, Any]:
        """Serializable declaration that :func:`build_network` maps back to ``self``."""
        edges = []
        for e in self.edges:
            entry: dict[str, Any] = {
                "tail": e.tail,
                "head": e.head,
                "mu": list(e.mu),
                "gamma": [
                    [self.gamma[p][(e.tail, e.id)], self.gamma[p][(e.head, e.id)]] for p in range(2)
                ],
                "housing": [
                    {"values": list(h.values), "breaks": list(h.breaks)} for h in e.housing
                ],
                "control_bounds": [list(b) for b in e.control_bounds],
            }
            edges.append(entry)
        return {
            "vertices": [{"id": v.id, "x": v.coords[0], "y": v.coords[1]} for v in self.vertices],
            "edges": edges,
        }


def _as_pair(value, name: str) -> tuple[float, float]:
    if isinstance(value, (int, float)):
        return (float(value), float(value))
    if len(value) != 2:
        raise NetworkError(f"{name}: expected a scalar or a per-population pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def _housing(value) -> HousingProfile:
    if isinstance(value, HousingProfile):
        return value
    if isinstance(value, (int, float)):
        return HousingProfile.constant(value)
    values = tuple(float(v) for v in value["values"])
    breaks = tuple(float(b) for b in value.get("breaks", ()))
    if len(values) != len(breaks) + 1:
        raise NetworkError("housing profile needs len(values) == len(breaks) + 1")
    return HousingProfile(values=values, breaks=breaks)


def _vertex_entry(v) -> tuple[int, float, float]:
    if isinstance(v, Mapping):
        return int(v["id"]), float(v["x"]), float(v["y"])
    vid, x, y = v
    return int(vid), float(x), float(y)


def build_network(
    spec: Mapping[str, Any],
    mu: Sequence[float] | float | None = None,
    housing: Sequence[Any] | float = 0.0,
    control_bounds: Sequence[Sequence[float]] | None = None,
    gamma: Mapping[tuple[int, int], Sequence[float]] | None = None,
) -> Network:
    """Build a validated :class:`Network` from a vertex/edge declaration.

    Parameters
    ----------
    spec : mapping
        ``{"vertices": [...], "edges": [...]}``. Vertices are ``{"id", "x", "y"}``
        mappings or ``(id, x, y)`` triples; edges carry ``tail``/``head`` and
        optionally ``mu``, ``gamma`` (per population ``[tail, head]`` pairs),
        ``housing`` and ``control_bounds``.
    mu, housing, control_bounds : per-population defaults for edges that do
        not declare their own.
    gamma : optional ``{(vertex, edge): (g1, g2)}`` overrides. Without any
        override the Kirchhoff weights are ``1 / (deg(j) * mu)``.

    Raises
    ------
    NetworkError
        On disconnected graphs, duplicate or degenerate edges, nonpositive
        viscosity, or Kirchhoff weights violating ``sum gamma * mu = 1``.
    """
    raw_vertices = sorted((_vertex_entry(v) for v in spec["vertices"]), key=lambda t: t[0])
    ids = [v[0] for v in raw_vertices]
    if ids != list(range(len(ids))):
        raise NetworkError(f"vertex ids must be contiguous from 0, got {ids}")
    vertices = tuple(Vertex(vid, (x, y)) for vid, x, y in raw_vertices)

    default_mu = _as_pair(mu, "mu") if mu is not None else None
    if isinstance(housing, (int, float, HousingProfile)) or isinstance(housing, Mapping):
        default_housing = (_housing(housing), _housing(housing))
    else:
        default_housing = (_housing(housing[0]), _housing(housing[1]))
    default_bounds = (
        tuple((float(lo), float(hi)) for lo, hi in control_bounds)
        if control_bounds is not None
        else ((-5.0, 5.0), (-5.0, 5.0))
    )

    edges: list[Edge] = []
    seen: set[tuple[int, int]] = set()
    declared_gamma: dict[tuple[int, int], tuple[float, float]] = {}
    for eid, e in enumerate(spec["edges"]):
        tail, head = int(e["tail"]), int(e["head"])
        if not (0 <= tail < len(vertices) and 0 <= head < len(vertices)):
            raise NetworkError(f"edge {eid}: unknown endpoint")
        if tail >= head:
            raise NetworkError(f"edge {eid}: expected tail < head, got ({tail}, {head})")
        if (tail, head) in seen:
            raise NetworkError(f"edge {eid}: duplicate edge ({tail}, {head})")
        seen.add((tail, head))
        p, q = np.array(vertices[tail].coords), np.array(vertices[head].coords)
        length = float(np.hypot(*(q - p)))
        if length <= 0.0:
            raise NetworkError(f"edge {eid}: zero length")
        unit = tuple(float(c) for c in (q - p) / length)
        edge_mu = _as_pair(e["mu"], f"edge {eid} mu") if "mu" in e else default_mu
        if edge_mu is None:
            raise NetworkError(f"edge {eid}: no viscosity given and no default")
        if min(edge_mu) <= 0.0:
            raise NetworkError(f"edge {eid}: viscosity must be positive, got {edge_mu}")
        if "housing" in e:
            h = e["housing"]
            if isinstance(h, (int, float)) or isinstance(h, Mapping):
                edge_housing = (_housing(h), _housing(h))
            else:
                edge_housing = (_housing(h[0]), _housing(h[1]))
        else:
            edge_housing = default_housing
        bounds = (
            tuple((float(lo), float(hi)) for lo, hi in e["control_bounds"])
            if "control_bounds" in e
            else default_bounds
        )
        for lo, hi in bounds:
            if not lo <= 0.0 <= hi:
                raise NetworkError(f"edge {eid}: control bounds must contain 0, got {bounds}")
        if "gamma" in e:
            g = e["gamma"]
            declared_gamma[(tail, eid)] = (float(g[0][0]), float(g[1][0]))
            declared_gamma[(head, eid)] = (float(g[0][1]), float(g[1][1]))
        edges.append(Edge(eid, tail, head, length, unit, edge_mu, edge_housing, bounds))

    adjacency: list[list[tuple[int, int]]] = [[] for _ in vertices]
    for e in edges:
        adjacency[e.tail].append((e.id, -1))
        adjacency[e.head].append((e.id, 1))

    n = len(vertices)
    rows = [e.tail for e in edges]
    cols = [e.head for e in edges]
    graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp != 1:
        raise NetworkError(f"network must be connected, found {n_comp} components")

    if gamma:
        declared_gamma.update({k: _as_pair(v, f"gamma{k}") for k, v in gamma.items()})

    gam: tuple[dict, dict] = ({}, {})
    for j, adj in enumerate(adjacency):
        for p in range(2):
            if any((j, a) in declared_gamma for a, _ in adj):
                missing = [a for a, _ in adj if (j, a) not in declared_gamma]
                if missing:
                    raise NetworkError(f"vertex {j}: gamma given for some incident edges only")
                total = sum(declared_gamma[(j, a)][p] * edges[a].mu[p] for a, _ in adj)
                if abs(total - 1.0) > GAMMA_TOL:
                    raise NetworkError(
                        f"vertex {j}, population {p + 1}: sum gamma*mu = {total:.12g}, expected 1"
                    )
                for a, _ in adj:
                    if declared_gamma[(j, a)][p] <= 0.0:
                        raise NetworkError(f"vertex {j}: gamma must be positive")
                    gam[p][(j, a)] = declared_gamma[(j, a)][p]
            else:
                for a, _ in adj:
                    gam[p][(j, a)] = 1.0 / (len(adj) * edges[a].mu[p])

    return Network(
        vertices=vertices,
        edges=tuple(edges),
        adjacency=tuple(tuple(adj) for adj in adjacency),
        gamma=gam,
    )


def edge_point(network: Network, edge: int | Edge, y: float) -> np.ndarray:
    """Planar coordinates of arclength ``y`` on ``edge``."""
    e = network.edges[edge] if isinstance(edge, (int, np.integer)) else edge
    if not -1e-12 <= y <= e.length + 1e-12:
        raise NetworkError(f"arclength {y} outside [0, {e.length}] on edge {e.id}")
    tail = np.asarray(network.vertices[e.tail].coords)
    head = np.asarray(network.vertices[e.head].coords)
    return (y * head + (e.length - y) * tail) / e.length


def transition_probabilities(network: Network, vertex: int, pop: int) -> dict[int, float]:
    """Exit probabilities ``p_{j alpha}`` over the edges incident to ``vertex``."""
    p = pop - 1
    weights = {a: network.gamma[p][(vertex, a)] * network.edges[a].mu[p]
               for a in network.incident_edges(vertex)}
    total = math.fsum(weights.values())
    return {a: w / total for a, w in weights.items()}


@dataclass(frozen=True)
class Grid:
    """Uniform per-edge discretization with a global node index.

    Vertices appear once per incident edge (``N = sum_alpha N_alpha``);
    ``vertex_nodes[j]`` lists those copies.
    """

    network: Network
    dx: float
    n_per_edge: np.ndarray
    offsets: np.ndarray
    spacing: np.ndarray
    node_edge: np.ndarray
    node_arclength: np.ndarray
    node_coords: np.ndarray
    node_vertex: np.ndarray
    weights: np.ndarray
    vertex_nodes: tuple[tuple[int, ...], ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return int(self.node_edge.size)

    @property
    def total_length(self) -> float:
        return self.network.total_length

    def edge_slice(self, edge: int) -> slice:
        start = int(self.offsets[edge])
        return slice(start, start + int(self.n_per_edge[edge]))

    def edge_nodes(self, edge: int) -> np.ndarray:
        return np.arange(self.offsets[edge], self.offsets[edge] + self.n_per_edge[edge])

    def node_of_vertex(self, vertex: int, edge: int) -> int:
        e = self.network.edges[edge]
        k = 0 if e.orientation(vertex) == -1 else int(self.n_per_edge[edge]) - 1
        return int(self.offsets[edge]) + k

    def interior_mask(self) -> np.ndarray:
        return self.node_vertex < 0

    def adjacency_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grid-graph arcs (i, j, length), including zero-length links between vertex copies."""
        ii, jj, ww = [], [], []
        for e in self.network.edges:
            idx = np.arange(self.offsets[e.id], self.offsets[e.id] + self.n_per_edge[e.id])
            ii.append(idx[:-1])
            jj.append(idx[1:])
            ww.append(np.full(idx.size - 1, self.spacing[e.id]))
        for copies in self.vertex_nodes:
            for c in copies[1:]:
                ii.append(np.array([copies[0]]))
                jj.append(np.array([c]))
                ww.append(np.array([0.0]))
        return np.concatenate(ii), np.concatenate(jj), np.concatenate(ww)


def discretize(network: Network, dx: float) -> Grid:
    """Uniform grid with ``N_alpha = ceil(l_alpha / dx) + 1`` nodes per edge."""
    if dx <= 0.0:
        raise NetworkError("dx must be positive")
    if dx >= network.min_length():
        raise NetworkError(
            f"dx = {dx} too large: must be below the shortest edge length {network.min_length():.6g}"
        )
    counts, spacing = [], []
    for e in network.edges:
        # guard against ceil(1.0000000000000002)
        n_cells = max(1, math.ceil(e.length / dx - 1e-9))
        counts.append(n_cells + 1)
        spacing.append(e.length / n_cells)
    counts_arr = np.asarray(counts, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts_arr)[:-1]]).astype(np.int64)
    node_edge, node_y, node_xy, node_v, weights = [], [], [], [], []
    vertex_nodes: list[list[int]] = [[] for _ in network.vertices]
    for e, n, h, off in zip(network.edges, counts, spacing, offsets):
        y = np.arange(n) * h
        y[-1] = e.length
        tail = np.asarray(network.vertices[e.tail].coords)
        head = np.asarray(network.vertices[e.head].coords)
        node_edge.append(np.full(n, e.id))
        node_y.append(y)
        node_xy.append((y[:, None] * head + (e.length - y)[:, None] * tail) / e.length)
        v = np.full(n, -1)
        v[0], v[-1] = e.tail, e.head
        node_v.append(v)
        w = np.full(n, h)
        w[0] = w[-1] = h / 2.0
        weights.append(w)
        vertex_nodes[e.tail].append(int(off))
        vertex_nodes[e.head].append(int(off + n - 1))
    return Grid(
        network=network,
        dx=float(dx),
        n_per_edge=counts_arr,
        offsets=offsets,
        spacing=np.asarray(spacing),
        node_edge=np.concatenate(node_edge),
        node_arclength=np.concatenate(node_y),
        node_coords=np.concatenate(node_xy),
        node_vertex=np.concatenate(node_v),
        weights=np.concatenate(weights),
        vertex_nodes=tuple(tuple(sorted(v)) for v in vertex_nodes),
    )


def geodesic_distance_matrix(grid: Grid) -> np.ndarray:
    """All-pairs shortest-path distances along the network between grid nodes.

    Cached on the grid; treat the returned array as read-only.
    """
    if "geodesic" in grid._cache:
        return grid._cache["geodesic"]
    # collapse vertex copies to one graph node so every arc has positive weight
    n = grid.size
    point = np.arange(n)
    for copies in grid.vertex_nodes:
        point[list(copies)] = copies[0]
    _, point = np.unique(point, return_inverse=True)
    ii, jj, ww = grid.adjacency_pairs()
    keep = ww > 0
    n_points = int(point.max()) + 1
    graph = coo_matrix((ww[keep], (point[ii[keep]], point[jj[keep]])), shape=(n_points, n_points))
    d_points = shortest_path(graph.tocsr(), method="D", directed=False)
    dist = d_points[np.ix_(point, point)]
    np.fill_diagonal(dist, 0.0)
    # exact symmetry regardless of the heap order inside Dijkstra
    dist = np.minimum(dist, dist.T)
    dist.setflags(write=False)
    grid._cache["geodesic"] = dist
    return dist
