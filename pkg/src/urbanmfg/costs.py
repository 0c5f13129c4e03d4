"""Running costs, interaction kernel, rent couplings and commuting costs."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .network import Grid, Network, geodesic_distance_matrix


@dataclass(frozen=True)
class PopulationParams:
    """Per-population model parameters (mobility, thresholds, rent weights)."""

    rho: float
    a: float
    b: float
    C: float
    mu: float
    control_bounds: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not 0.0 <= self.a < 1.0:
            raise ValueError(f"a must lie in [0, 1), got {self.a}")
        if self.b <= 0:
            raise ValueError(f"b must be positive, got {self.b}")
        if self.C < 0:
            raise ValueError(f"C must be nonnegative, got {self.C}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        lo, hi = self.control_bounds
        if not lo <= 0.0 <= hi:
            raise ValueError(f"control bounds must contain 0, got {self.control_bounds}")


@dataclass(frozen=True)
class InteractionParams:
    delta: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.delta <= 0 or self.epsilon <= 0:
            raise ValueError("delta and epsilon must be positive")


class CommutingCostKind(str, enum.Enum):
    LINEAR = "lin"
    SQUARE_ROOT = "sqr"
    QUADRATIC = "quad"

    @classmethod
    def parse(cls, value) -> "CommutingCostKind":
        if isinstance(value, cls):
            return value
        aliases = {"linear": "lin", "square_root": "sqr", "sqrt": "sqr", "quadratic": "quad"}
        return cls(aliases.get(str(value), str(value)))


def hamiltonian(rho: float, p, housing=0.0):
    """``|p|^2 / (2 rho) + A``."""
    p = np.asarray(p, dtype=float)
    return p * p / (2.0 * rho) + housing


def lagrangian(rho: float, u, housing=0.0):
    u = np.asarray(u, dtype=float)
    return 0.5 * rho * u * u + housing


def optimal_control(rho: float, p, bounds: tuple[float, float] = (-5.0, 5.0)):
    """Minimizer of ``u p + L(u)`` over the control interval: ``clip(-p / rho)``."""
    return np.clip(-np.asarray(p, dtype=float) / rho, bounds[0], bounds[1])


def housing_field(grid: Grid, pop: int) -> np.ndarray:
    """Nodal housing cost; vertices take the length-weighted mean of their copies."""
    out = np.empty(grid.size)
    for e in grid.network.edges:
        sl = grid.edge_slice(e.id)
        out[sl] = e.housing[pop - 1](grid.node_arclength[sl])
    for copies in grid.vertex_nodes:
        idx = np.asarray(copies)
        out[idx] = np.dot(grid.weights[idx], out[idx]) / grid.weights[idx].sum()
    return out


def _hat_integrals(h: float, n: int, p: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrals of the P1 hat functions of a uniform edge grid over ``[p, q]``."""
    cells = np.arange(n - 1)
    left = cells * h
    right = left + h
    s0 = np.maximum(p, left)
    s1 = np.minimum(q, right)
    ok = s1 > s0
    cells, left, right, s0, s1 = cells[ok], left[ok], right[ok], s0[ok], s1[ok]
    w_left = ((right - s0) ** 2 - (right - s1) ** 2) / (2.0 * h)
    w_right = ((s1 - left) ** 2 - (s0 - left) ** 2) / (2.0 * h)
    return np.concatenate([cells, cells + 1]), np.concatenate([w_left, w_right])


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if hi <= lo:
            continue
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(lo, hi) for lo, hi in out]


def ball_integration_matrix(grid: Grid, delta: float) -> csr_matrix:
    """Row ``x`` integrates a P1 field exactly over the geodesic ball ``B_delta(x)``."""
    key = ("ball", float(delta))
    if key in grid._cache:
        return grid._cache[key]
    net: Network = grid.network
    dist = geodesic_distance_matrix(grid)
    vertex_col = [copies[0] for copies in grid.vertex_nodes]
    rows, cols, vals = [], [], []
    done: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    for x in range(grid.size):
        d_vertex = dist[x, vertex_col]
        ex, yx = int(grid.node_edge[x]), float(grid.node_arclength[x])
        # vertex copies share a ball
        v = int(grid.node_vertex[x])
        sig = ("v", v) if v >= 0 else ("n", x)
        if sig in done:
            c, w = done[sig]
            rows.append(np.full(c.size, x))
            cols.append(c)
            vals.append(w)
            continue
        c_all, w_all = [], []
        for e in net.edges:
            pieces = []
            if d_vertex[e.tail] < delta:
                pieces.append((0.0, min(e.length, delta - d_vertex[e.tail])))
            if d_vertex[e.head] < delta:
                pieces.append((max(0.0, e.length - (delta - d_vertex[e.head])), e.length))
            if e.id == ex:
                pieces.append((max(0.0, yx - delta), min(e.length, yx + delta)))
            for p, q in _merge(pieces):
                local, w = _hat_integrals(grid.spacing[e.id], int(grid.n_per_edge[e.id]), p, q)
                c_all.append(local + grid.offsets[e.id])
                w_all.append(w)
        c = np.concatenate(c_all) if c_all else np.zeros(0, dtype=np.int64)
        w = np.concatenate(w_all) if w_all else np.zeros(0)
        done[sig] = (c, w)
        rows.append(np.full(c.size, x))
        cols.append(c)
        vals.append(w)
    mat = csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    )
    mat.sum_duplicates()
    grid._cache[key] = mat
    return mat


def kernel_average(grid: Grid, density: np.ndarray, delta: float, node: int | None = None):
    """``(1 / 2 delta) * integral of m over B_delta(x)`` at one node or at all nodes.

    ``density`` may also be a 2-D array with one column per field.
    """
    mat = ball_integration_matrix(grid, delta)
    if node is not None:
        return float((mat.getrow(node) @ density)[0]) / (2.0 * delta)
    return (mat @ density) / (2.0 * delta)


def separation_cost(r, s, a: float, epsilon: float):
    """``(r / (r + s + eps) - a)^-`` with ``(x)^- = max(-x, 0)``."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    return np.maximum(a - r / (r + s + epsilon), 0.0)


def overcrowding_cost(avg_total, b: float, C: float):
    """``C (avg - b)^+`` where ``avg`` is the ball average of ``(m1 + m2) / 2``."""
    return C * np.maximum(np.asarray(avg_total, dtype=float) - b, 0.0)


def coupling_cost(
    grid: Grid,
    m1: np.ndarray,
    m2: np.ndarray,
    pop: int,
    params: PopulationParams,
    interaction: InteractionParams,
) -> np.ndarray:
    """Rent ``R = S + O`` for population ``pop``; works slice-wise on 2-D inputs."""
    k1 = kernel_average(grid, m1, interaction.delta)
    k2 = kernel_average(grid, m2, interaction.delta)
    own, other = (k1, k2) if pop == 1 else (k2, k1)
    sep = separation_cost(own, other, params.a, interaction.epsilon)
    over = overcrowding_cost(0.5 * (k1 + k2), params.b, params.C)
    return sep + over


def distance_matrix(grid: Grid, metric: str = "geodesic") -> np.ndarray:
    if metric == "geodesic":
        return geodesic_distance_matrix(grid)
    if metric == "euclidean":
        xy = grid.node_coords
        diff = xy[:, None, :] - xy[None, :, :]
        return np.sqrt((diff**2).sum(-1))
    raise ValueError(f"unknown metric {metric!r}")


def commuting_cost_matrix(dist: np.ndarray, kind) -> np.ndarray:
    kind = CommutingCostKind.parse(kind)
    if kind is CommutingCostKind.LINEAR:
        return np.array(dist, dtype=float)
    if kind is CommutingCostKind.SQUARE_ROOT:
        return np.sqrt(dist)
    return np.asarray(dist, dtype=float) ** 2
