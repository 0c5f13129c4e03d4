"""Discrete optimal transport between the two populations.

Entropic problems are solved with Sinkhorn iterations (log-domain for small
regularization); small exact problems with a linear program. Potentials are
returned as the pair added to the two value equations, with the first one
normalized to zero average over the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from scipy.special import logsumexp

from .fields import node_masses
from .network import Grid

LP_SIZE_CAP = 600
BALANCE_TOL = 1e-12


@dataclass(frozen=True)
class TransportSolution:
    """Plan, potentials and diagnostics of one transport problem.

    ``sigma`` is 0 for exact solutions. For entropic solutions ``theta1`` and
    ``theta2`` are the marginal-relative dual potentials, so that
    ``plan = a b^T exp((theta1 + theta2^T - C) / sigma)``.
    """

    plan: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    cost: float
    sigma: float
    iterations: int
    marginal_error: float
    converged: bool = True


def _check_marginals(a: np.ndarray, b: np.ndarray, cost: np.ndarray, strict: bool) -> None:
    if a.ndim != 1 or b.ndim != 1 or cost.shape != (a.size, b.size):
        raise ValueError(f"shape mismatch: a {a.shape}, b {b.shape}, cost {cost.shape}")
    if strict and (np.any(a <= 0.0) or np.any(b <= 0.0)):
        raise ValueError("marginals must be strictly positive")
    if np.any(a < 0.0) or np.any(b < 0.0):
        raise ValueError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > BALANCE_TOL * max(1.0, a.sum()):
        raise ValueError(f"unbalanced marginals: {a.sum():.17g} vs {b.sum():.17g}")


def _sinkhorn_plain(a, b, cost, sigma, tol, max_iter, init):
    kernel = np.exp(-cost / sigma)
    v = np.ones_like(b) if init is None else np.exp(init / sigma) * b
    u = np.ones_like(a)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        kv = kernel @ v
        if it > 1:
            err = float(np.max(np.abs(u * kv - a)))
            if err <= tol:
                break
        u = a / kv
        v = b / (kernel.T @ u)
    plan = u[:, None] * kernel * v[None, :]
    with np.errstate(divide="ignore"):
        f = sigma * np.log(u / a)
        g = sigma * np.log(v / b)
    return plan, f, g, it, err


def _sinkhorn_log(a, b, cost, sigma, tol, max_iter, init):
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b) if init is None else np.array(init, dtype=float)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f_new = -sigma * logsumexp(log_b[None, :] + (g[None, :] - cost) / sigma, axis=1)
        if it > 1:
            # row sums of the current plan are a * exp((f - f_new) / sigma)
            err = float(np.max(np.abs(a * np.expm1((f - f_new) / sigma))))
            if err <= tol:
                break
        f = f_new
        g = -sigma * logsumexp(log_a[:, None] + (f[:, None] - cost) / sigma, axis=0)
    plan = np.exp((f[:, None] + g[None, :] - cost) / sigma + log_a[:, None] + log_b[None, :])
    return plan, f, g, it, err


def sinkhorn(
    a: np.ndarray,
    b: np.ndarray,
    cost: np.ndarray,
    sigma: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    log_domain: bool | None = None,
    log_domain_below: float = 0.05,
    init: np.ndarray | None = None,
) -> TransportSolution:
    """Entropic transport between masses ``a`` and ``b`` with cost matrix ``cost``.

    Parameters
    ----------
    a, b : ndarray
        Strictly positive masses with equal totals.
    cost : ndarray, shape (len(a), len(b))
    sigma : float
        Entropic regularization.
    tol : float
        Stop when the largest row-marginal violation of the plan is below
        ``tol`` (column marginals are exact after each sweep).
    max_iter : int
    log_domain : bool, optional
        Force the stabilized iterations; by default they are used when
        ``sigma < log_domain_below``.
    init : ndarray, optional
        Warm start for the second potential.

    Returns
    -------
    TransportSolution
        ``converged`` is False when ``max_iter`` was reached first.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    _check_marginals(a, b, cost, strict=True)
    if log_domain is None:
        log_domain = sigma < log_domain_below
    solver = _sinkhorn_log if log_domain else _sinkhorn_plain
    plan, f, g, it, _ = solver(a, b, cost, sigma, tol, max_iter, init)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        if log_domain:
            raise FloatingPointError("Sinkhorn potentials are not finite")
        plan, f, g, it, _ = _sinkhorn_log(a, b, cost, sigma, tol, max_iter, init)
    err = max(float(np.max(np.abs(plan.sum(axis=1) - a))), float(np.max(np.abs(plan.sum(axis=0) - b))))
    return TransportSolution(
        plan=plan,
        theta1=f,
        theta2=g,
        cost=float(np.sum(plan * cost)),
        sigma=float(sigma),
        iterations=it,
        marginal_error=err,
        converged=err <= tol,
    )


def normalize_potentials(
    theta1: np.ndarray, theta2: np.ndarray, weights: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Shift ``theta1`` to zero weighted mean and move the constant into ``theta2``."""
    theta1 = np.asarray(theta1, dtype=float)
    weights = np.ones_like(theta1) if weights is None else np.asarray(weights, dtype=float)
    shift = np.dot(weights, theta1) / weights.sum()
    out1 = theta1 - shift
    # second pass removes the rounding left by the first
    residual = np.dot(weights, out1) / weights.sum()
    out1 -= residual
    return out1, np.asarray(theta2, dtype=float) + (shift + residual)


def recover_potentials(
    u: np.ndarray,
    v: np.ndarray,
    sigma: float,
    a: np.ndarray,
    b: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized potentials from Sinkhorn scalings ``u``, ``v``.

    The raw potentials ``sigma log(u / a)`` and ``sigma log(v / b)`` are the
    soft c-transforms of each other, hence Lipschitz in the cost. The first
    one is shifted to zero weighted mean and the constant is moved to the
    second, which leaves ``theta1(x) + theta2(y)`` unchanged.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(u <= 0.0) or np.any(v <= 0.0):
        raise ValueError("scalings must be strictly positive")
    return normalize_potentials(sigma * np.log(u / a), sigma * np.log(v / b), weights)


def exact_ot_lp(a: np.ndarray, b: np.ndarray, cost: np.ndarray, cap: int = LP_SIZE_CAP) -> TransportSolution:
    """Exact transport plan and dual potentials of the Kantorovich linear program."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    _check_marginals(a, b, cost, strict=False)
    n, m = a.size, b.size
    if max(n, m) > cap:
        raise ValueError(f"problem size {max(n, m)} exceeds the exact solver cap {cap}")
    idx = np.arange(n * m)
    rows = np.concatenate([idx // m, n + idx % m])
    a_eq = coo_matrix((np.ones(2 * n * m), (rows, np.concatenate([idx, idx]))), shape=(n + m, n * m))
    # tiny imbalance is absorbed by rescaling b
    b_eq = np.concatenate([a, b * (a.sum() / b.sum())])
    res = linprog(cost.reshape(-1), A_eq=a_eq.tocsr(), b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    duals = res.eqlin.marginals
    plan = res.x.reshape(n, m)
    err = max(float(np.max(np.abs(plan.sum(axis=1) - a))), float(np.max(np.abs(plan.sum(axis=0) - b))))
    return TransportSolution(
        plan=plan,
        theta1=np.asarray(duals[:n]),
        theta2=np.asarray(duals[n:]),
        cost=float(res.fun),
        sigma=0.0,
        iterations=int(res.nit),
        marginal_error=err,
    )


@dataclass(frozen=True)
class SliceTransport:
    theta1: np.ndarray
    theta2: np.ndarray
    cost: float
    solution: TransportSolution


def ot_at_time(
    grid: Grid,
    m1: np.ndarray,
    m2: np.ndarray,
    cost: np.ndarray,
    sigma: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    log_domain_below: float = 0.05,
    init: np.ndarray | None = None,
) -> SliceTransport:
    """Transport between two densities on ``grid``; potentials as nodal value fields.

    ``sigma = 0`` selects the exact linear program.
    """
    a = node_masses(grid, m1)
    b = node_masses(grid, m2)
    # balance the totals to rounding level before solving
    b = b * (a.sum() / b.sum())
    if sigma == 0.0:
        sol = exact_ot_lp(a, b, cost)
    else:
        sol = sinkhorn(a, b, cost, sigma, tol=tol, max_iter=max_iter,
                       log_domain_below=log_domain_below, init=init)
    theta1, theta2 = normalize_potentials(sol.theta1, sol.theta2, grid.weights)
    return SliceTransport(theta1=theta1, theta2=theta2, cost=sol.cost, solution=sol)
