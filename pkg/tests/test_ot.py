import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urbanmfg.fields import averaged_integral, node_masses
from urbanmfg.network import geodesic_distance_matrix
from urbanmfg.ot import (
    exact_ot_lp,
    normalize_potentials,
    ot_at_time,
    recover_potentials,
    sinkhorn,
)


def polytope_vertex_optimum(a, b, cost):
    """Minimum cost over all basic feasible plans (n + m - 1 basic cells)."""
    n, m = a.size, b.size
    cells = list(itertools.product(range(n), range(m)))
    best, best_plan = math.inf, None
    for basis in itertools.combinations(cells, n + m - 1):
        mat = np.zeros((n + m, n + m - 1))
        for c, (i, j) in enumerate(basis):
            mat[i, c] = 1.0
            mat[n + j, c] = 1.0
        rhs = np.concatenate([a, b])
        x, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        if np.linalg.norm(mat @ x - rhs) > 1e-12 or x.min() < -1e-12:
            continue
        plan = np.zeros((n, m))
        for c, (i, j) in enumerate(basis):
            plan[i, j] = x[c]
        value = float(np.sum(plan * cost))
        if value < best - 1e-14:
            best, best_plan = value, plan
    return best, best_plan


def random_instance(rng, n):
    pts = np.sort(rng.uniform(0, 3, n))
    cost = np.abs(pts[:, None] - pts[None, :])
    a = rng.uniform(0.1, 1, n)
    b = rng.uniform(0.1, 1, n)
    return a / a.sum(), b / b.sum(), cost


def test_three_point_lp_against_polytope_vertices():
    a = np.array([0.5, 0.3, 0.2])
    b = np.array([0.2, 0.3, 0.5])
    x = np.arange(3.0)
    cost = np.abs(x[:, None] - x[None, :])
    value, plan = polytope_vertex_optimum(a, b, cost)
    sol = exact_ot_lp(a, b, cost)
    assert sol.cost == pytest.approx(value, abs=1e-12)
    assert value == pytest.approx(0.6, abs=1e-12)
    assert np.allclose(sol.plan.sum(axis=1), a, atol=1e-12)
    assert np.allclose(sol.plan.sum(axis=0), b, atol=1e-12)


def test_lp_random_against_polytope_vertices(rng):
    for _ in range(5):
        a, b, cost = random_instance(rng, 3)
        value, _ = polytope_vertex_optimum(a, b, cost)
        assert exact_ot_lp(a, b, cost).cost == pytest.approx(value, abs=1e-12)


def test_lp_identity_and_duality(rng):
    a = rng.uniform(0.1, 1, 6)
    a /= a.sum()
    pts = rng.uniform(0, 1, 6)
    cost = np.abs(pts[:, None] - pts[None, :])
    sol = exact_ot_lp(a, a, cost)
    assert sol.cost == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(sol.plan, np.diag(a), atol=1e-14)
    for n in range(2, 9):
        a, b, cost = random_instance(rng, n)
        sol = exact_ot_lp(a, b, cost)
        dual = sol.theta1 @ a + sol.theta2 @ b
        assert dual == pytest.approx(sol.cost, abs=1e-10)
        slack = cost - sol.theta1[:, None] - sol.theta2[None, :]
        assert slack.min() >= -1e-10
        assert np.all(np.abs(slack[sol.plan > 1e-12]) <= 1e-10)


def test_lp_cap_and_validation():
    with pytest.raises(ValueError):
        exact_ot_lp(np.ones(3) / 3, np.ones(3) / 3, np.zeros((3, 3)), cap=2)
    with pytest.raises(ValueError):
        exact_ot_lp(np.array([0.5, 0.5]), np.array([0.2, 0.2]), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        sinkhorn(np.array([1.0, 0.0]), np.array([0.5, 0.5]), np.zeros((2, 2)), 0.1)


def test_sinkhorn_constant_cost(rng):
    a = rng.uniform(0.1, 1, 5)
    b = rng.uniform(0.1, 1, 7)
    a /= a.sum()
    b /= b.sum()
    sol = sinkhorn(a, b, np.full((5, 7), 2.0), 0.3)
    assert np.allclose(sol.plan, np.outer(a, b), atol=1e-12)
    t1, t2 = recover_potentials(np.exp(sol.theta1 / 0.3) * a, np.exp(sol.theta2 / 0.3) * b, 0.3, a, b)
    assert np.allclose(t1, 0.0, atol=1e-12)
    assert np.allclose(t2, 2.0, atol=1e-12)


def test_sinkhorn_two_point():
    a = b = np.array([0.5, 0.5])
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    for log_domain in (False, True):
        sol = sinkhorn(a, b, cost, 0.01, log_domain=log_domain)
        assert np.allclose(sol.plan, np.diag([0.5, 0.5]), atol=1e-3)
        assert sol.cost <= 1e-3
        assert sol.converged


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 10), st.sampled_from([0.5, 0.1, 0.02]))
def test_sinkhorn_marginals_and_domains(seed, n, sigma):
    r = np.random.default_rng(seed)
    a, b, cost = random_instance(r, n)
    plain = sinkhorn(a, b, cost, sigma, log_domain=False)
    logd = sinkhorn(a, b, cost, sigma, log_domain=True)
    for sol in (plain, logd):
        assert sol.marginal_error <= 1e-8
        assert sol.plan.min() >= 0.0
    assert np.allclose(plain.plan, logd.plan, atol=1e-7)


def test_dual_feasibility_shrinks_with_sigma(rng):
    a, b, cost = random_instance(rng, 8)
    viol = []
    for sigma in (0.5, 0.1, 0.02):
        sol = sinkhorn(a, b, cost, sigma)
        viol.append(float(np.max(sol.theta1[:, None] + sol.theta2[None, :] - cost)))
    assert viol[0] > viol[1] > viol[2]
    assert viol[2] < 0.02 * 5


def test_sinkhorn_objective_identity(rng):
    a, b, cost = random_instance(rng, 6)
    sigma = 0.2
    sol = sinkhorn(a, b, cost, sigma, tol=1e-13)
    plan = sol.plan
    # with marginal-relative potentials the regularizer is KL(plan | a b^T)
    kl = float(np.sum(plan * np.log(plan / np.outer(a, b))))
    dual = sol.theta1 @ a + sol.theta2 @ b
    assert dual == pytest.approx(sol.cost + sigma * kl, abs=1e-10)


def test_normalize_potentials(rng):
    t1 = rng.normal(size=9)
    t2 = rng.normal(size=9)
    w = rng.uniform(0.5, 1, 9)
    n1, n2 = normalize_potentials(t1, t2, w)
    assert abs(np.dot(w, n1)) <= 1e-15
    assert np.allclose(n1[:, None] + n2[None, :], t1[:, None] + t2[None, :], atol=1e-14)


def test_ot_at_time_equal_marginals(triangle_grid):
    g = triangle_grid
    m = 1.0 + 0.3 * np.sin(g.node_arclength)
    m /= averaged_integral(g, m)
    cost = geodesic_distance_matrix(g)
    res = ot_at_time(g, m, m, cost, 0.05)
    assert averaged_integral(g, res.theta1) == pytest.approx(0.0, abs=1e-12)
    assert res.cost <= 2 * 0.05 * np.log(g.size)
    exact = ot_at_time(g, m, m, cost, 0.0)
    assert exact.cost == pytest.approx(0.0, abs=1e-12)
    assert averaged_integral(g, exact.theta1) == pytest.approx(0.0, abs=1e-12)


def test_ot_at_time_swap(triangle_grid):
    g = triangle_grid
    m1 = 1.0 + 0.5 * np.cos(2 * g.node_arclength)
    m2 = 1.0 + 0.5 * np.sin(g.node_edge + g.node_arclength)
    m1 /= averaged_integral(g, m1)
    m2 /= averaged_integral(g, m2)
    cost = geodesic_distance_matrix(g)
    fwd = ot_at_time(g, m1, m2, cost, 0.5)
    bwd = ot_at_time(g, m2, m1, cost, 0.5)
    assert fwd.cost == pytest.approx(bwd.cost, rel=1e-8)
    s1 = fwd.theta1[:, None] + fwd.theta2[None, :]
    s2 = bwd.theta2[:, None] + bwd.theta1[None, :]
    assert np.allclose(s1, s2, atol=1e-6)


def test_potential_lipschitz(triangle_grid):
    g = triangle_grid
    m1 = 1.0 + 0.8 * np.cos(g.node_arclength * 2 + g.node_edge)
    m2 = np.ones(g.size)
    m1 /= averaged_integral(g, m1)
    d = geodesic_distance_matrix(g)
    res = ot_at_time(g, m1, m2, d, 0.5)
    for theta in (res.theta1, res.theta2):
        gap = np.abs(theta[:, None] - theta[None, :]) - d
        assert gap.max() <= 1e-9
