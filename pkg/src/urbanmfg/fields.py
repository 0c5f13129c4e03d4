"""Grid functions: quadrature, P1 interpolation, vertex coupling, Wasserstein-1.

Fields are plain float arrays indexed by global grid node. A value field
holds one value per vertex (all copies equal); a density field may differ
across the copies of a vertex, subject to the Kirchhoff ratio condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, hstack

from .network import Grid, NetworkError

MASS_TOL = 1e-9
SNAP_TOL = 1e-10


@dataclass(frozen=True)
class BasisWeights:
    nodes: tuple[int, ...]
    weights: tuple[float, ...]

    def apply(self, field: np.ndarray) -> float:
        return float(sum(w * field[k] for k, w in zip(self.nodes, self.weights)))


def averaged_integral(grid: Grid, field: np.ndarray) -> float:
    """Trapezoidal integral over the network divided by ``|Gamma|``."""
    return float(np.dot(grid.weights, field) / grid.total_length)


def node_masses(grid: Grid, density: np.ndarray) -> np.ndarray:
    """Discrete measure of a density: ``w_i m_i / |Gamma|``."""
    return grid.weights * density / grid.total_length


def density_from_masses(grid: Grid, masses: np.ndarray) -> np.ndarray:
    return masses * grid.total_length / grid.weights


def _locate(grid: Grid, edge: int, y: float) -> tuple[int, float]:
    e = grid.network.edges[edge]
    if not -1e-12 <= y <= e.length + 1e-12:
        raise NetworkError(f"arclength {y} outside [0, {e.length}] on edge {edge}")
    y = min(max(y, 0.0), e.length)
    h = grid.spacing[edge]
    n = int(grid.n_per_edge[edge])
    r = y / h
    # snap points that sit on a node up to rounding
    near = round(r)
    if abs(r - near) <= SNAP_TOL:
        r = float(near)
    k = min(int(r), n - 2)
    theta = min(max(r - k, 0.0), 1.0)
    return int(grid.offsets[edge]) + k, theta


def basis_weights(grid: Grid, location: tuple[int, float]) -> BasisWeights:
    """Hat-function values of the bracketing nodes at ``(edge, arclength)``."""
    edge, y = location
    k, theta = _locate(grid, edge, y)
    if theta == 0.0:
        return BasisWeights((k,), (1.0,))
    if theta == 1.0:
        return BasisWeights((k + 1,), (1.0,))
    return BasisWeights((k, k + 1), (1.0 - theta, theta))


def interpolate(grid: Grid, field: np.ndarray, location: tuple[int, float]) -> float:
    return basis_weights(grid, location).apply(field)


def basis_matrix(grid: Grid, edges: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`basis_weights`: returns (point index, node, weight) triplets."""
    edges = np.asarray(edges, dtype=np.int64)
    ys = np.asarray(ys, dtype=float)
    h = grid.spacing[edges]
    n = grid.n_per_edge[edges]
    lengths = np.array([e.length for e in grid.network.edges])[edges]
    ys = np.clip(ys, 0.0, lengths)
    r = ys / h
    near = np.round(r)
    r = np.where(np.abs(r - near) <= SNAP_TOL, near, r)
    k = np.minimum(np.floor(r).astype(np.int64), n - 2)
    theta = np.clip(r - k, 0.0, 1.0)
    base = grid.offsets[edges] + k
    pts = np.arange(ys.size)
    rows = np.concatenate([pts, pts])
    cols = np.concatenate([base, base + 1])
    vals = np.concatenate([1.0 - theta, theta])
    keep = vals != 0.0
    return rows[keep], cols[keep], vals[keep]


def vertex_ratio_projection(grid: Grid, density: np.ndarray, pop: int) -> np.ndarray:
    """Redistribute vertex values so that ``m_alpha / gamma_{j alpha}`` agrees on every copy.

    The trapezoidal mass carried by the copies of each vertex is preserved.
    """
    out = np.array(density, dtype=float, copy=True)
    gam = grid.network.gamma[pop - 1]
    for j, copies in enumerate(grid.vertex_nodes):
        if len(copies) < 2:
            continue
        idx = np.asarray(copies)
        g = np.array([gam[(j, int(grid.node_edge[k]))] for k in copies])
        w = grid.weights[idx]
        local = np.dot(w, out[idx])
        out[idx] = g * (local / np.dot(w, g))
    return out


def enforce_vertex_continuity(grid: Grid, field: np.ndarray) -> np.ndarray:
    """Replace the copies of each vertex by their weighted mean (value-field form)."""
    out = np.array(field, dtype=float, copy=True)
    for copies in grid.vertex_nodes:
        idx = np.asarray(copies)
        out[idx] = np.dot(grid.weights[idx], out[idx]) / grid.weights[idx].sum()
    return out


def _flow_problem(grid: Grid):
    if "w1_flow" not in grid._cache:
        ii, jj, ww = grid.adjacency_pairs()
        n_arcs = ii.size
        arcs = np.arange(n_arcs)
        # node-arc incidence for f = f_plus - f_minus
        inc = coo_matrix(
            (np.concatenate([np.ones(n_arcs), -np.ones(n_arcs)]),
             (np.concatenate([ii, jj]), np.concatenate([arcs, arcs]))),
            shape=(grid.size, n_arcs),
        ).tocsr()
        a_eq = hstack([inc, -inc]).tocsr()
        cost = np.concatenate([ww, ww])
        grid._cache["w1_flow"] = (a_eq, cost)
    return grid._cache["w1_flow"]


def wasserstein1(
    grid: Grid,
    m1: np.ndarray,
    m2: np.ndarray,
    dist: np.ndarray | None = None,
    method: str = "flow",
) -> float:
    """Wasserstein-1 distance between two densities under the geodesic metric.

    ``method="lp"`` solves the Kantorovich problem with the dense geodesic
    cost matrix; ``method="flow"`` solves the equivalent min-cost flow on
    the grid graph, which is much smaller.
    """
    a = node_masses(grid, m1)
    b = node_masses(grid, m2)
    if abs(a.sum() - b.sum()) > MASS_TOL:
        raise ValueError(f"unbalanced masses: {a.sum():.15g} vs {b.sum():.15g}")
    a = a / a.sum()
    b = b / b.sum()
    if method == "lp":
        from .network import geodesic_distance_matrix
        from .ot import exact_ot_lp

        if dist is None:
            dist = geodesic_distance_matrix(grid)
        return exact_ot_lp(a, b, dist).cost
    if method != "flow":
        raise ValueError(f"unknown method {method!r}")
    a_eq, cost = _flow_problem(grid)
    res = linprog(cost, A_eq=a_eq, b_eq=a - b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"W1 flow problem failed: {res.message}")
    return max(float(res.fun), 0.0)

