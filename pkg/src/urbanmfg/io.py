"""Snapshot CSV and run metadata output."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .solver import EquilibriumSolution, diagnostics

SNAPSHOT_HEADER = "time,edge,arclength,m1,m2,phi1,phi2,theta1,theta2,u1,u2"
SNAPSHOT_FILE = "snapshots.csv"
METADATA_FILE = "metadata.json"


def snapshot_slices(n_steps: int, stride: int) -> list[int]:
    """Slices ``0, stride, 2 stride, ...`` plus the final slice."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    slices = list(range(0, n_steps + 1, stride))
    if slices[-1] != n_steps:
        slices.append(n_steps)
    return slices


def write_snapshots(solution: EquilibriumSolution, path: str | Path, stride: int = 1) -> tuple[Path, Path]:
    """Write ``snapshots.csv`` and ``metadata.json`` into the directory ``path``.

    Floats are written with 17 significant digits so files round-trip
    exactly and are byte-identical for identical solutions.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    g = solution.grid
    n_steps = solution.densities.shape[1] - 1
    slices = snapshot_slices(n_steps, stride)
    blocks = []
    for n in slices:
        cols = [
            np.full(g.size, n * solution.config.dt),
            g.node_edge.astype(float),
            g.node_arclength,
            solution.densities[0, n], solution.densities[1, n],
            solution.values[0, n], solution.values[1, n],
            solution.theta[0, n], solution.theta[1, n],
            solution.controls[0, n], solution.controls[1, n],
        ]
        blocks.append(np.column_stack(cols))
    table = np.vstack(blocks)
    fmt = ["%.17g", "%d"] + ["%.17g"] * 9
    csv_path = out / SNAPSHOT_FILE
    np.savetxt(csv_path, table, fmt=fmt, delimiter=",", header=SNAPSHOT_HEADER, comments="")

    diag = diagnostics(solution)
    meta = {
        "config": solution.config.to_dict(),
        "converged": solution.converged,
        "iterations": solution.iterations,
        "history": [dataclasses.asdict(r) for r in solution.history],
        "grid": {"nodes": g.size, "dx": g.dx, "time_steps": n_steps, "reflections": solution.reflections},
        "snapshot_slices": slices,
        "transport_cost": solution.transport_cost.tolist(),
        "diagnostics": diag,
    }
    meta_path = out / METADATA_FILE
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, meta_path


def read_snapshots(path: str | Path) -> np.ndarray:
    """Load a snapshot CSV as a structured array with the header's field names."""
    return np.genfromtxt(path, delimiter=",", names=True)
