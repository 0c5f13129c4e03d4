"""Backward semi-Lagrangian solver for the value functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SLScheme


@dataclass(frozen=True)
class ValueTrajectory:
    """Values ``values[n]`` and feedback controls ``controls[n]`` at ``t_n = n dt``.

    ``controls[n]`` drives the step ``t_n -> t_{n+1}``; the last row is zero.
    """

    values: np.ndarray
    controls: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1


def _key_less(u_a: np.ndarray, u_b: np.ndarray) -> np.ndarray:
    """``u_a`` precedes ``u_b`` in the tie order: smaller ``|u|``, then negative."""
    abs_a, abs_b = np.abs(u_a), np.abs(u_b)
    return (abs_a < abs_b) | ((abs_a == abs_b) & (u_a < u_b))


def hj_backward_step(scheme: SLScheme, phi_next: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One backward step ``Phi = min_u E[I Phi_next(Psi)] + dt (rho u^2 / 2 + A + rhs)``.

    The minimum runs over the control samples of ``scheme`` and, for nodes
    whose step stays inside their edge, over the exact minimizers of the
    piecewise-quadratic objective. Ties prefer smaller ``|u|``, then negative.

    Returns
    -------
    phi : ndarray
        Values at the earlier time.
    control : ndarray
        Minimizing control per node.
    """
    n = scheme.grid.size
    phi_next = np.asarray(phi_next, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    samples = scheme.samples
    expected = (scheme.stacked @ phi_next).reshape(samples.shape)
    objective = expected + (0.5 * scheme.rho * scheme.dt) * samples * samples
    # samples are pre-sorted in tie order, argmin keeps the first minimum
    best = np.argmin(objective, axis=0)
    cols = np.arange(n)
    value = objective[best, cols]
    control = samples[best, cols]

    if scheme.piece_node.size:
        node, cand, u = scheme.continuous_candidates(phi_next)
        order = np.lexsort((u > 0.0, np.abs(u), cand, node))
        node, cand, u = node[order], cand[order], u[order]
        first = np.ones(node.size, dtype=bool)
        first[1:] = node[1:] != node[:-1]
        node, cand, u = node[first], cand[first], u[first]
        better = (cand < value[node]) | ((cand == value[node]) & _key_less(u, control[node]))
        value[node[better]] = cand[better]
        control[node[better]] = u[better]

    phi = value + scheme.dt * (scheme.housing + rhs)
    # one stored value per vertex
    rep = scheme.representative
    return phi[rep], control[rep]


def solve_hj(scheme: SLScheme, rhs: np.ndarray) -> ValueTrajectory:
    """Backward recursion from ``Phi^{N_T} = 0`` with ``rhs[n]`` used on step ``n``.

    Parameters
    ----------
    scheme : SLScheme
    rhs : ndarray, shape (N_T + 1, N)
        Right-hand side (rent plus transport potential) per time slice.
    """
    rhs = np.asarray(rhs, dtype=float)
    n_t = rhs.shape[0] - 1
    values = np.zeros_like(rhs)
    controls = np.zeros_like(rhs)
    for step in range(n_t - 1, -1, -1):
        values[step], controls[step] = hj_backward_step(scheme, values[step + 1], rhs[step])
    return ValueTrajectory(values=values, controls=controls, dt=scheme.dt)
