"""Fixed-point iteration for the coupled value / density / transport system."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from threadpoolctl import threadpool_limits

from .costs import commuting_cost_matrix, coupling_cost, distance_matrix, kernel_average
from .dynamics import SLScheme
from .fields import averaged_integral, wasserstein1
from .fp import DensityTrajectory, solve_fp
from .hj import ValueTrajectory, solve_hj
from .network import Grid, discretize
from .ot import ot_at_time
from .scenario import ScenarioConfig, initial_density

log = logging.getLogger(__name__)

CLUSTER_FACTOR = 1.5


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    metric: float
    mass_error: float
    min_density: float
    min_transported: float
    theta1_mean: float
    ot_converged: bool
    monotonicity: float | None = None


@dataclass
class EquilibriumSolution:
    """Densities, values, controls and transport data of the last outer iterate.

    Arrays are indexed ``[population - 1, time slice, node]``.
    """

    config: ScenarioConfig
    grid: Grid
    densities: np.ndarray
    values: np.ndarray
    controls: np.ndarray
    theta: np.ndarray
    transport_cost: np.ndarray
    history: list[IterationRecord]
    converged: bool
    reflections: int = 0
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.densities.shape[1]) * self.config.dt

    def density(self, pop: int) -> DensityTrajectory:
        return DensityTrajectory(self.densities[pop - 1], self.config.dt)

    def value(self, pop: int) -> ValueTrajectory:
        return ValueTrajectory(self.values[pop - 1], self.controls[pop - 1], self.config.dt)


def overlap_index(grid: Grid, m1: np.ndarray, m2: np.ndarray) -> float:
    """Averaged integral of ``min(m1, m2)``: 1 for identical densities, near 0 when disjoint."""
    return averaged_integral(grid, np.minimum(m1, m2))


def cluster_count(grid: Grid, density: np.ndarray, factor: float = CLUSTER_FACTOR) -> int:
    """Connected groups of grid nodes where the density exceeds ``factor`` times its mean."""
    high = density > factor * averaged_integral(grid, density)
    if not high.any():
        return 0
    ii, jj, _ = grid.adjacency_pairs()
    keep = high[ii] & high[jj]
    graph = coo_matrix((np.ones(int(keep.sum())), (ii[keep], jj[keep])), shape=(grid.size, grid.size))
    _, labels = connected_components(graph, directed=False)
    return int(np.unique(labels[high]).size)


def diagnostics(solution: EquilibriumSolution) -> dict[str, list]:
    """Per-slice overlap index and cluster counts of both populations."""
    g = solution.grid
    m = solution.densities
    return {
        "overlap": [overlap_index(g, m[0, n], m[1, n]) for n in range(m.shape[1])],
        "clusters1": [cluster_count(g, m[0, n]) for n in range(m.shape[1])],
        "clusters2": [cluster_count(g, m[1, n]) for n in range(m.shape[1])],
    }


def monotonicity_gap(grid: Grid, config: ScenarioConfig, old: np.ndarray, new: np.ndarray) -> float:
    """Smallest per-slice value of ``sum_i <R_i[new] - R_i[old], new_i - old_i>``.

    Nonnegative values are consistent with a monotone coupling.
    """
    r_old = _couplings(grid, config, old)
    r_new = _couplings(grid, config, new)
    gap = sum(((r_new[p] - r_old[p]) * (new[p] - old[p])) @ grid.weights for p in range(2))
    return float(np.min(gap) / grid.total_length)


def _couplings(grid: Grid, config: ScenarioConfig, m: np.ndarray) -> np.ndarray:
    """Rents for all slices: shape (2, slices, N)."""
    m1, m2 = m[0].T, m[1].T
    return np.stack([
        coupling_cost(grid, m1, m2, p, config.populations[p - 1], config.interaction).T
        for p in (1, 2)
    ])


def _distance(grid: Grid, metric: str, a: np.ndarray, b: np.ndarray) -> float:
    if metric == "linf":
        return float(np.max(np.abs(a - b)))
    return wasserstein1(grid, a, b)


def run_fixed_point(
    config: ScenarioConfig,
    threads: int = 1,
    check_monotonicity: bool = False,
    callback=None,
) -> EquilibriumSolution:
    """Solve the coupled system by relaxed fixed-point iteration on the density paths.

    Each outer iteration solves the transport problem on every time slice,
    assembles the value right-hand sides ``R_i + theta_i``, solves both value
    equations backward and both density equations forward, and relaxes the
    density paths with weight ``config.relaxation``. Iteration stops when the
    largest Wasserstein-1 (or max-norm) change over slices and populations
    drops below ``config.tol``.

    Parameters
    ----------
    config : ScenarioConfig
    threads : int
        Worker threads for slice-parallel and population-parallel work.
        Results do not depend on this number.
    check_monotonicity : bool
        Record :func:`monotonicity_gap` between successive iterates.
    callback : callable, optional
        Called with each :class:`IterationRecord`.
    """
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return _run(config, pool, check_monotonicity, callback)


def _run(config: ScenarioConfig, pool: ThreadPoolExecutor, check_monotonicity: bool, callback):
    timings = {"setup": 0.0, "ot": 0.0, "hj_fp": 0.0, "metric": 0.0}
    start = time.perf_counter()
    grid = discretize(config.network, config.dx)
    n_t = config.n_steps
    cost = commuting_cost_matrix(distance_matrix(grid, config.distance), config.cost)
    schemes = list(pool.map(
        lambda p: SLScheme(grid, p, config.populations[p - 1].rho, config.dt, config.control_samples),
        (1, 2),
    ))
    m0 = [initial_density(config, p, grid) for p in (1, 2)]
    m = np.stack([np.tile(m0[p], (n_t + 1, 1)) for p in range(2)])
    if config.metric == "w1":
        wasserstein1(grid, m0[0], m0[0])  # builds the cached flow problem before threading
    kernel_average(grid, m0[0], config.interaction.delta)
    timings["setup"] = time.perf_counter() - start

    history: list[IterationRecord] = []
    warm: list[np.ndarray | None] = [None] * (n_t + 1)
    converged = False
    values = controls = theta = transport = None
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        slices = list(pool.map(
            lambda n: ot_at_time(grid, m[0, n], m[1, n], cost, config.sigma, tol=config.sinkhorn_tol,
                                 max_iter=config.sinkhorn_max_iter,
                                 log_domain_below=config.log_domain_below, init=warm[n]),
            range(n_t + 1),
        ))
        warm = [s.solution.theta2 if config.sigma > 0 else None for s in slices]
        theta = np.stack([np.stack([s.theta1 for s in slices]), np.stack([s.theta2 for s in slices])])
        transport = np.array([s.cost for s in slices])
        ot_ok = all(s.solution.converged for s in slices)
        if not ot_ok:
            log.warning("iteration %d: some transport solves hit the iteration cap", it)
        rhs = _couplings(grid, config, m) + theta
        t1 = time.perf_counter()

        def population(p: int):
            vt = solve_hj(schemes[p], rhs[p])
            dt_ = solve_fp(schemes[p], m0[p], vt.controls)
            return vt, dt_

        results = list(pool.map(population, (0, 1)))
        values = np.stack([r[0].values for r in results])
        controls = np.stack([r[0].controls for r in results])
        new = np.stack([r[1].densities for r in results])
        t2 = time.perf_counter()
        metric = max(pool.map(
            lambda pn: _distance(grid, config.metric, new[pn[0], pn[1]], m[pn[0], pn[1]]),
            [(p, n) for p in range(2) for n in range(n_t + 1)],
        ))
        t3 = time.perf_counter()
        gap = monotonicity_gap(grid, config, m, new) if check_monotonicity else None
        m = (1.0 - config.relaxation) * m + config.relaxation * new
        mass = np.einsum("pnk,k->pn", np.concatenate([m, new], axis=1), grid.weights) / grid.total_length
        record = IterationRecord(
            iteration=it,
            metric=float(metric),
            mass_error=float(np.max(np.abs(mass - 1.0))),
            min_density=float(m.min()),
            min_transported=float(new.min()),
            theta1_mean=float(np.max(np.abs(theta[0] @ grid.weights)) / grid.total_length),
            ot_converged=ot_ok,
            monotonicity=gap,
        )
        history.append(record)
        timings["ot"] += t1 - t0
        timings["hj_fp"] += t2 - t1
        timings["metric"] += t3 - t2
        log.info("iteration %d: change %.3e", it, metric)
        if callback is not None:
            callback(record)
        if metric <= config.tol:
            converged = True
            break

    return EquilibriumSolution(
        config=config,
        grid=grid,
        densities=m,
        values=values,
        controls=controls,
        theta=theta,
        transport_cost=transport,
        history=history,
        converged=converged,
        reflections=sum(s.reflections for s in schemes),
        timings=timings,
    )
