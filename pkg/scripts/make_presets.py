"""Regenerate the shipped scenario presets in src/urbanmfg/presets/.

The Test 3 road network is synthetic: a jittered 8x8 lattice on [0, 12]^2
whose edges are a degree-capped subset of the Delaunay triangulation.
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import Delaunay

OUT = Path(__file__).resolve().parents[1] / "src" / "urbanmfg" / "presets"

TABLE = {
    "rho": (1.0, 4.0), "a": (0.5, 0.1), "b": (4.0, 8.0), "C": (1.0, 1.0),
    "mu": (0.4, 0.2), "housing": (1.0, 1.0),
}


def populations(**override):
    table = {**TABLE, **override}
    return [
        {key: table[key][p] for key in ("rho", "a", "b", "C", "mu", "housing")}
        | {"control_bounds": [-5.0, 5.0]}
        for p in range(2)
    ]


def base(name, network, pops, initial, dx, dt, cost="lin"):
    return {
        "name": name,
        "network": network,
        "populations": pops,
        "interaction": {"delta": 0.1, "epsilon": 1e-5},
        "sigma": 0.5,
        "T": 2.0,
        "dx": dx,
        "dt": dt,
        "cost": cost,
        "distance": "geodesic",
        "initial": initial,
        "density_floor": 1e-3,
        "solver": {"tol": 1e-4, "max_iter": 50, "relaxation": 0.5, "control_samples": 41, "metric": "w1"},
        "sinkhorn": {"tol": 1e-8, "max_iter": 10000, "log_domain_below": 0.05},
    }


def triangle():
    pts = [(1.0, 0.0), (math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)),
           (math.cos(4 * math.pi / 3), math.sin(4 * math.pi / 3))]
    return {
        "vertices": [{"id": i, "x": x, "y": y} for i, (x, y) in enumerate(pts)],
        "edges": [{"tail": 0, "head": 1}, {"tail": 1, "head": 2}, {"tail": 0, "head": 2}],
    }


def square():
    pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    return {
        "vertices": [{"id": i, "x": x, "y": y} for i, (x, y) in enumerate(pts)],
        "edges": [{"tail": 0, "head": 1}, {"tail": 1, "head": 2}, {"tail": 2, "head": 3},
                  {"tail": 0, "head": 3}, {"tail": 0, "head": 2}],
    }


def city(n_edges=101, max_degree=6, seed=2024):
    rng = np.random.default_rng(seed)
    side = 8
    h = 12.0 / side
    g = (np.arange(side) + 0.5) * h
    xy = np.array([(x, y) for y in g for x in g]) + rng.uniform(-0.3, 0.3, size=(side * side, 2))
    tri = Delaunay(xy)
    cand = set()
    for s in tri.simplices:
        for i in range(3):
            a, b = sorted((int(s[i]), int(s[(i + 1) % 3])))
            cand.add((a, b))
    cand = sorted(cand, key=lambda e: (np.hypot(*(xy[e[0]] - xy[e[1]])), e))
    # spanning tree first (Kruskal), then shortest remaining edges under the degree cap
    parent = list(range(len(xy)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    chosen, degree = [], np.zeros(len(xy), dtype=int)
    for a, b in cand:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append((a, b))
            degree[[a, b]] += 1
    for a, b in cand:
        if len(chosen) == n_edges:
            break
        if (a, b) in chosen or degree[a] >= max_degree or degree[b] >= max_degree:
            continue
        chosen.append((a, b))
        degree[[a, b]] += 1
    assert len(chosen) == n_edges
    graph = coo_matrix((np.ones(n_edges), tuple(np.array(chosen).T)), shape=(len(xy), len(xy)))
    assert connected_components(graph, directed=False)[0] == 1
    lengths = [float(np.hypot(*(xy[a] - xy[b]))) for a, b in sorted(chosen)]
    assert min(lengths) >= 0.5, min(lengths)
    edges = []
    for a, b in sorted(chosen):
        mid = 0.5 * (xy[a] + xy[b])
        # renovated district west of the stadium area
        renovated = 2.5 <= mid[0] <= 6.5 and 3.0 <= mid[1] <= 7.0
        cost = 1.0 if renovated else 5.0
        edges.append({"tail": a, "head": b, "housing": [cost, cost]})
    vertices = [{"id": i, "x": round(float(x), 6), "y": round(float(y), 6)} for i, (x, y) in enumerate(xy)]
    return {"vertices": vertices, "edges": edges}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    levels = [
        {"kind": "levels", "high": 1.2, "low": 0.8, "normal": [1.0, 0.0], "offset": 0.0},
        {"kind": "levels", "high": 0.8, "low": 1.2, "normal": [1.0, 0.0], "offset": 0.0},
    ]
    uniform = [{"kind": "uniform"}, {"kind": "uniform"}]
    presets = {
        "test1a": base("test1a", triangle(), populations(), levels, 0.01, 0.01),
        "test1b": base("test1b", triangle(), populations(C=(5.0, 1.0)), levels, 0.01, 0.01),
        "test1c": base("test1c", triangle(), populations(b=(1.0, 2.0)), levels, 0.01, 0.01),
        "test1d": base("test1d", triangle(), populations(b=(1.0, 2.0)), uniform, 0.01, 0.01),
    }
    bump = [{"kind": "bump", "center": [0.5, 0.5], "radius": 0.3, "base": 1.0, "peak": 2.0},
            {"kind": "uniform"}]
    for cost in ("lin", "sqr", "quad"):
        presets[f"test2-{cost}"] = base(f"test2-{cost}", square(), populations(C=(5.0, 3.0)),
                                        bump, 0.01, 0.01, cost)
    gauss = [{"kind": "gaussian", "center": [8.94, 9.22], "gamma": 8.0},
             {"kind": "gaussian", "center": [8.55, 4.5], "gamma": 4.0}]
    pops = populations(b=(1.0, 2.0))
    for p in pops:
        del p["housing"]
    presets["test3"] = base("test3", city(), pops, gauss, 0.1, 0.05)
    for name, doc in presets.items():
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
