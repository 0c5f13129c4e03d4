"""One-step branch expansion of the controlled diffusion on the network.

An agent at ``x`` on edge ``alpha`` with control ``u`` first drifts to
``Y = x + dt * u`` and then receives a symmetric noise kick of size
``sqrt(2 dt mu)``. Whenever the drift or the noise reaches a vertex the
agent is redistributed over the incident edges with the exit
probabilities ``p_{j beta}``; a noise kick that reaches a vertex continues
on the chosen edge with the unused fraction of its length. Instead of
sampling, all sub-cases are enumerated with their probabilities, which
makes the value and density schemes deterministic and exact transposes of
each other.

Controls are signed along the edge orientation (positive towards the
head). A control applied at a vertex has no direction; its magnitude is
used as the inward speed on whichever edge the agent enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, diags

from .costs import housing_field
from .fields import basis_matrix
from .network import Grid, Network, NetworkError, edge_point, transition_probabilities

# bounded number of reflections before a step is declared too large
MAX_REFLECTIONS = 4


@dataclass(frozen=True)
class BranchSet:
    """Probability-weighted destinations ``(p, (edge, arclength))`` of one step."""

    branches: tuple[tuple[float, tuple[int, float]], ...]
    source: tuple[int, float]
    control: float
    dt: float
    reflections: int = 0

    @property
    def total_probability(self) -> float:
        return math.fsum(p for p, _ in self.branches)

    def __len__(self) -> int:
        return len(self.branches)

    def __iter__(self):
        return iter(self.branches)


def noise_scale(mu: float, dt: float) -> float:
    return math.sqrt(2.0 * dt * mu)


def check_time_step(network: Network, dt: float) -> None:
    """Reject steps whose noise kick exceeds half of the shortest edge."""
    if dt <= 0.0:
        raise NetworkError("dt must be positive")
    kick = noise_scale(network.max_mu(), dt)
    if kick > 0.5 * network.min_length():
        raise NetworkError(
            f"dt = {dt} too large for this network: noise kick {kick:.4g} exceeds half the "
            f"shortest edge ({0.5 * network.min_length():.4g})"
        )


class _Walker:
    """Accumulates branches and counts reflections for one call."""

    def __init__(self, network: Network):
        self.network = network
        self.out: list[tuple[float, tuple[int, float]]] = []
        self.reflections = 0

    def fold(self, edge: int, y: float) -> float:
        length = self.network.edges[edge].length
        for _ in range(MAX_REFLECTIONS):
            if y < 0.0:
                y = -y
            elif y > length:
                y = 2.0 * length - y
            else:
                return y
            self.reflections += 1
        raise NetworkError("dt too large for this network: repeated vertex crossings in one step")

    def add(self, p: float, edge: int, y: float) -> None:
        self.out.append((p, (edge, self.fold(edge, y))))

    def add_from_vertex(self, p: float, vertex: int, edge: int, dist: float) -> None:
        """Branch at distance ``dist`` from ``vertex`` into ``edge``."""
        e = self.network.edges[edge]
        y = dist if e.tail == vertex else e.length - dist
        self.add(p, edge, y)


def _enter_from_vertex(
    walk: _Walker, vertex: int, speed: float, remaining: float, pop: int, weight: float
) -> None:
    """Agent sits at ``vertex`` with ``remaining`` time and inward ``speed``."""
    net = walk.network
    probs = transition_probabilities(net, vertex, pop)
    for beta, p_beta in probs.items():
        e = net.edges[beta]
        drift = remaining * speed
        kick = noise_scale(e.mu[pop - 1], remaining)
        if drift >= kick:
            walk.add_from_vertex(weight * p_beta * 0.5, vertex, beta, drift - kick)
            walk.add_from_vertex(weight * p_beta * 0.5, vertex, beta, drift + kick)
        else:
            walk.add_from_vertex(weight * p_beta * 0.5, vertex, beta, drift + kick)
            # the kick back first spends ``drift`` to return to the vertex
            used = drift / kick
            for gamma_edge, p_gamma in probs.items():
                back = noise_scale(net.edges[gamma_edge].mu[pop - 1], remaining) * (1.0 - used)
                walk.add_from_vertex(weight * p_beta * p_gamma * 0.5, vertex, gamma_edge, back)


def branch_step(
    network: Network, source: tuple[int, float], u: float, pop: int, dt: float
) -> BranchSet:
    """Enumerate the destinations of one Euler step from ``source`` under control ``u``.

    Parameters
    ----------
    network : Network
    source : (edge id, arclength)
        Starting location. Arclength ``0`` or ``length`` denotes the vertex.
    u : float
        Control, signed along the edge orientation.
    pop : {1, 2}
    dt : float
        Time step.

    Returns
    -------
    BranchSet
        Branch probabilities sum to one.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    edge_id, y = source
    e = network.edges[edge_id]
    if not -1e-12 <= y <= e.length + 1e-12:
        raise NetworkError(f"source arclength {y} outside edge {edge_id}")
    y = min(max(float(y), 0.0), e.length)
    u = float(u)
    walk = _Walker(network)

    if y == 0.0 or y == e.length:
        vertex = e.tail if y == 0.0 else e.head
        _enter_from_vertex(walk, vertex, abs(u), dt, pop, 1.0)
        return BranchSet(tuple(walk.out), (edge_id, y), u, dt, walk.reflections)

    mu = e.mu[pop - 1]
    kick = noise_scale(mu, dt)
    target = y + dt * u
    # a drift that ends exactly on a vertex is a crossing with no time left
    if 0.0 < target < e.length:
        to_tail, to_head = target, e.length - target
        if min(to_tail, to_head) >= kick:
            walk.add(0.5, edge_id, target - kick)
            walk.add(0.5, edge_id, target + kick)
        else:
            vertex, d, away = (e.tail, to_tail, 1.0) if to_tail <= to_head else (e.head, to_head, -1.0)
            walk.add(0.5, edge_id, target + away * kick)
            # the kick towards the vertex spends d of its length reaching it;
            # the rest continues on the chosen edge at that edge's noise scale
            used = d / kick
            probs = transition_probabilities(network, vertex, pop)
            for beta, p_beta in probs.items():
                dist = noise_scale(network.edges[beta].mu[pop - 1], dt) * (1.0 - used)
                walk.add_from_vertex(0.5 * p_beta, vertex, beta, dist)
    else:
        vertex, d = (e.tail, y) if target <= 0.0 else (e.head, e.length - y)
        hit_time = d / abs(u)
        _enter_from_vertex(walk, vertex, abs(u), max(dt - hit_time, 0.0), pop, 1.0)
    return BranchSet(tuple(walk.out), (edge_id, y), u, dt, walk.reflections)


def mean_position(network: Network, branches: BranchSet) -> np.ndarray:
    """Probability-weighted planar position of the branch destinations."""
    pts = np.array([edge_point(network, edge, y) for _, (edge, y) in branches])
    probs = np.array([p for p, _ in branches])
    return probs @ pts


def _sorted_samples(lo: float, hi: float, count: int) -> np.ndarray:
    """Uniform samples of ``[lo, hi]`` ordered by ``|u|`` then negative first."""
    values = np.linspace(lo, hi, count)
    if 0.0 not in values:
        values = np.append(values, 0.0)
    order = np.lexsort((values > 0.0, np.abs(values)))
    return values[order]


class SLScheme:
    """Semi-Lagrangian transfer operators for one population on one grid.

    Rows of the transfer matrix for control ``u`` hold the weights of
    ``sum_c p_c I[Phi](Psi_c(x_i, u, dt))``. Value updates apply it,
    density updates apply its transpose.

    Parameters
    ----------
    grid : Grid
    pop : {1, 2}
    rho : float
        Mobility cost weight of the quadratic Lagrangian.
    dt : float
    control_samples : int
        Number of uniform control samples per node (zero is always added).
    """

    def __init__(self, grid: Grid, pop: int, rho: float, dt: float, control_samples: int = 41):
        if control_samples < 1:
            raise ValueError("control_samples must be at least 1")
        check_time_step(grid.network, dt)
        self.grid = grid
        self.network = grid.network
        self.pop = pop
        self.rho = float(rho)
        self.dt = float(dt)
        self.housing = housing_field(grid, pop)
        self.reflections = 0
        n = grid.size
        lengths = np.array([e.length for e in self.network.edges])
        self._edge_length = lengths[grid.node_edge]
        self._edge_mu = np.array([e.mu[pop - 1] for e in self.network.edges])[grid.node_edge]
        self._kick = np.sqrt(2.0 * self.dt * self._edge_mu)
        is_vertex = grid.node_vertex >= 0
        self._is_vertex = is_vertex
        # every node maps to itself, vertex copies to their first copy
        self.representative = np.arange(n)
        for copies in grid.vertex_nodes:
            self.representative[list(copies)] = copies[0]

        lo = np.empty(n)
        hi = np.empty(n)
        for e in self.network.edges:
            sl = grid.edge_slice(e.id)
            lo[sl], hi[sl] = e.control_bounds[pop - 1]
        for j, copies in enumerate(grid.vertex_nodes):
            reach = min(min(-self.network.edges[a].control_bounds[pop - 1][0],
                            self.network.edges[a].control_bounds[pop - 1][1])
                        for a in self.network.incident_edges(j))
            lo[list(copies)], hi[list(copies)] = -reach, reach
        self.lower, self.upper = lo, hi
        cols = [_sorted_samples(lo[i], hi[i], control_samples) for i in range(n)]
        width = max(c.size for c in cols)
        # pad with repeats of the first (smallest |u|) sample
        self.samples = np.stack([np.concatenate([c, np.full(width - c.size, c[0])]) for c in cols], axis=1)
        self.n_samples = width
        self.stacked = self._build_stacked()
        self._build_pieces()

    # transfer rows -----------------------------------------------------

    def _vertex_rows(self, controls: np.ndarray, nodes: np.ndarray, row_ids: np.ndarray):
        rows, cols, vals = [], [], []
        for r, i, u in zip(row_ids, nodes, controls):
            bs = branch_step(self.network, (int(self.grid.node_edge[i]), float(self.grid.node_arclength[i])),
                             float(u), self.pop, self.dt)
            self.reflections += bs.reflections
            edges = np.array([d[0] for _, d in bs])
            ys = np.array([d[1] for _, d in bs])
            probs = np.array([p for p, _ in bs])
            pr, pc, pv = basis_matrix(self.grid, edges, ys)
            rows.append(np.full(pr.size, r))
            cols.append(pc)
            vals.append(probs[pr] * pv)
        if not rows:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def _regular_mask(self, nodes: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Nodes whose step stays inside the edge with full noise clearance."""
        target = self.grid.node_arclength[nodes] + self.dt * controls
        clearance = np.minimum(target, self._edge_length[nodes] - target)
        return (~self._is_vertex[nodes]) & (clearance >= self._kick[nodes])

    def _regular_rows(self, nodes: np.ndarray, controls: np.ndarray, row_ids: np.ndarray):
        target = self.grid.node_arclength[nodes] + self.dt * controls
        kick = self._kick[nodes]
        edges = self.grid.node_edge[nodes]
        pr, pc, pv = basis_matrix(self.grid, np.concatenate([edges, edges]),
                                  np.concatenate([target - kick, target + kick]))
        ids = np.concatenate([row_ids, row_ids])
        return ids[pr], pc, 0.5 * pv

    def _rows(self, nodes: np.ndarray, controls: np.ndarray, row_ids: np.ndarray):
        regular = self._regular_mask(nodes, controls)
        parts = [self._regular_rows(nodes[regular], controls[regular], row_ids[regular])]
        irregular = ~regular
        parts.append(self._vertex_rows(controls[irregular], nodes[irregular], row_ids[irregular]))
        return tuple(np.concatenate(x) for x in zip(*parts))

    def _build_stacked(self) -> csr_matrix:
        n, s = self.grid.size, self.n_samples
        nodes = np.tile(np.arange(n), s)
        controls = self.samples.reshape(-1)
        rows, cols, vals = self._rows(nodes, controls, np.arange(n * s))
        mat = csr_matrix((vals, (rows, cols)), shape=(n * s, n))
        mat.sum_duplicates()
        return mat

    def transfer_matrix(self, controls: np.ndarray) -> csr_matrix:
        """Transfer matrix for an arbitrary control field (one control per node)."""
        controls = np.asarray(controls, dtype=float)
        n = self.grid.size
        if controls.shape != (n,):
            raise ValueError(f"expected {n} controls, got shape {controls.shape}")
        if np.any(controls < self.lower - 1e-12) or np.any(controls > self.upper + 1e-12):
            raise ValueError("controls outside the admissible bounds")
        hit = self.samples == controls[None, :]
        found = hit.any(axis=0)
        k = np.argmax(hit, axis=0)
        nodes = np.arange(n)
        picked = self.stacked[k * n + nodes]
        if found.all():
            return picked.tocsr()
        picked = diags(found.astype(float)) @ picked
        rest = np.flatnonzero(~found)
        rows, cols, vals = self._rows(rest, controls[rest], rest)
        extra = csr_matrix((vals, (rows, cols)), shape=(n, n))
        out = (picked + extra).tocsr()
        out.sum_duplicates()
        return out

    # continuous minimization in the regular regime -----------------------

    def _build_pieces(self) -> None:
        """Pieces of the displacement range on which the interpolated value is affine.

        For an interior node whose whole step stays on its edge, the value of
        control ``u`` is ``(I[Phi](Y - s) + I[Phi](Y + s)) / 2`` with ``Y = y + z``,
        ``z = dt * u``; it is affine in ``z`` between grid-crossing breakpoints.
        """
        g = self.grid
        node, za, zb, c1, c2 = [], [], [], [], []
        for e in self.network.edges:
            h = g.spacing[e.id]
            n_e = int(g.n_per_edge[e.id])
            off = int(g.offsets[e.id])
            kick = noise_scale(e.mu[self.pop - 1], self.dt)
            grid_pts = np.arange(n_e) * h
            for k in range(1, n_e - 1):
                i = off + k
                y = g.node_arclength[i]
                lo = max(self.dt * self.lower[i], kick - y)
                hi = min(self.dt * self.upper[i], e.length - kick - y)
                if hi <= lo:
                    continue
                brk = np.concatenate([grid_pts - y + kick, grid_pts - y - kick, [lo, hi]])
                brk = np.unique(brk[(brk >= lo) & (brk <= hi)])
                a, b = brk[:-1], brk[1:]
                keep = b - a > 1e-14
                a, b = a[keep], b[keep]
                mid = 0.5 * (a + b)
                node.append(np.full(a.size, i))
                za.append(a)
                zb.append(b)
                c1.append(off + np.clip(np.floor((y + mid - kick) / h).astype(np.int64), 0, n_e - 2))
                c2.append(off + np.clip(np.floor((y + mid + kick) / h).astype(np.int64), 0, n_e - 2))
        cat = (lambda x, t: np.concatenate(x) if x else np.zeros(0, dtype=t))
        self.piece_node = cat(node, np.int64)
        self.piece_lo = cat(za, float)
        self.piece_hi = cat(zb, float)
        self.piece_cell_left = cat(c1, np.int64)
        self.piece_cell_right = cat(c2, np.int64)

    def continuous_candidates(self, phi_next: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Best value and control per piece: returns (node, value, control).

        The value excludes the ``dt * (A + rhs)`` part, which does not depend on ``u``.
        """
        g = self.grid
        i = self.piece_node
        h = g.spacing[g.node_edge[i]]
        kick = self._kick[i]
        y = g.node_arclength[i]
        k1, k2 = self.piece_cell_left, self.piece_cell_right
        slope = 0.5 * ((phi_next[k1 + 1] - phi_next[k1]) + (phi_next[k2 + 1] - phi_next[k2])) / h
        z = np.clip(-slope * self.dt / self.rho, self.piece_lo, self.piece_hi)
        t1 = np.clip((y + z - kick - g.node_arclength[k1]) / h, 0.0, 1.0)
        t2 = np.clip((y + z + kick - g.node_arclength[k2]) / h, 0.0, 1.0)
        interp = 0.5 * ((1.0 - t1) * phi_next[k1] + t1 * phi_next[k1 + 1]
                        + (1.0 - t2) * phi_next[k2] + t2 * phi_next[k2 + 1])
        value = interp + self.rho * z * z / (2.0 * self.dt)
        return i, value, np.clip(z / self.dt, self.lower[i], self.upper[i])
