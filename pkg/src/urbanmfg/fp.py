"""Forward density transport: the adjoint of the value transfer operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import SLScheme
from .fields import density_from_masses, node_masses, vertex_ratio_projection


@dataclass(frozen=True)
class DensityTrajectory:
    """Densities ``densities[n]`` at ``t_n = n dt`` (averaged integral one each)."""

    densities: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.densities.shape[0] - 1


def fp_forward_step(scheme: SLScheme, density: np.ndarray, controls: np.ndarray, project: bool = True) -> np.ndarray:
    """Push nodal masses through the branch sets and deposit them on the grid.

    Nodal masses ``w_k m_k / |Gamma|`` are multiplied by the transpose of the
    transfer matrix for ``controls``; the result is converted back to a
    density and, by default, projected onto the vertex ratio condition.
    """
    density = np.asarray(density, dtype=float)
    if np.any(density < 0.0):
        raise ValueError("density must be nonnegative")
    grid = scheme.grid
    moved = scheme.transfer_matrix(controls).T @ node_masses(grid, density)
    out = density_from_masses(grid, moved)
    if project:
        out = vertex_ratio_projection(grid, out, scheme.pop)
    return out


def solve_fp(scheme: SLScheme, m0: np.ndarray, controls: np.ndarray) -> DensityTrajectory:
    """Forward recursion ``M^{n+1} = FP(M^n, controls[n])`` from ``M^0 = m0``."""
    controls = np.asarray(controls, dtype=float)
    n_t = controls.shape[0] - 1
    out = np.empty((n_t + 1, scheme.grid.size))
    out[0] = m0
    for step in range(n_t):
        out[step + 1] = fp_forward_step(scheme, out[step], controls[step])
    return DensityTrajectory(densities=out, dt=scheme.dt)
