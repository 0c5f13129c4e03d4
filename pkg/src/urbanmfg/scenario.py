"""Scenario files: parsing, validation, shipped presets and initial densities.

A scenario is a JSON document::

    {
      "name": "test1a",
      "network": {"vertices": [{"id": 0, "x": 1.0, "y": 0.0}, ...],
                  "edges": [{"tail": 0, "head": 1, "housing": [5, 5]}, ...]},
      "populations": [{"rho": 1, "a": 0.5, "b": 4, "C": 1, "mu": 0.4,
                       "housing": 1, "control_bounds": [-5, 5]}, {...}],
      "interaction": {"delta": 0.1, "epsilon": 1e-5},
      "sigma": 0.5, "T": 2, "dx": 0.01, "dt": 0.01,
      "cost": "lin", "distance": "geodesic",
      "initial": [{"kind": "uniform"}, {"kind": "gaussian", "center": [8.55, 4.5], "gamma": 4}],
      "density_floor": 0.001,
      "solver": {"tol": 1e-4, "max_iter": 50, "relaxation": 0.5,
                 "control_samples": 41, "metric": "w1"},
      "sinkhorn": {"tol": 1e-8, "max_iter": 10000, "log_domain_below": 0.05}
    }

Only ``network``, ``populations`` and ``initial`` are required; everything
else falls back to the defaults of :class:`ScenarioConfig`.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .costs import CommutingCostKind, InteractionParams, PopulationParams
from .dynamics import check_time_step
from .fields import averaged_integral, vertex_ratio_projection
from .network import Grid, Network, NetworkError, build_network

PRESETS = ("test1a", "test1b", "test1c", "test1d", "test2-lin", "test2-sqr", "test2-quad", "test3")
INITIAL_KINDS = ("uniform", "levels", "gaussian", "bump")
STEP_TOL = 1e-9


class ScenarioError(ValueError):
    """Invalid scenario document; the message names the offending field."""


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    network_spec: Mapping[str, Any]
    populations: tuple[PopulationParams, PopulationParams]
    housing: tuple[Any, Any] = (0.0, 0.0)
    interaction: InteractionParams = InteractionParams()
    sigma: float = 0.5
    T: float = 2.0
    dx: float = 0.01
    dt: float = 0.01
    cost: CommutingCostKind = CommutingCostKind.LINEAR
    distance: str = "geodesic"
    initial: tuple[Mapping[str, Any], Mapping[str, Any]] = ({"kind": "uniform"}, {"kind": "uniform"})
    density_floor: float = 1e-3
    tol: float = 1e-4
    max_iter: int = 50
    relaxation: float = 0.5
    control_samples: int = 41
    metric: str = "w1"
    sinkhorn_tol: float = 1e-8
    sinkhorn_max_iter: int = 10_000
    log_domain_below: float = 0.05
    network: Network = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            net = build_network(
                self.network_spec,
                mu=tuple(p.mu for p in self.populations),
                housing=self.housing,
                control_bounds=tuple(p.control_bounds for p in self.populations),
            )
        except NetworkError as exc:
            raise ScenarioError(f"network: {exc}") from exc
        object.__setattr__(self, "network", net)
        self.validate()

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self) -> None:
        """Check cross-field constraints (time grid, step size, solver settings)."""
        if self.T <= 0.0 or self.dt <= 0.0 or self.dx <= 0.0:
            raise ScenarioError("T, dt and dx must be positive")
        if abs(self.n_steps * self.dt - self.T) > STEP_TOL * max(1.0, self.T):
            raise ScenarioError(f"T / dt must be an integer, got {self.T / self.dt!r}")
        if self.dx >= self.network.min_length():
            raise ScenarioError(f"dx = {self.dx} must be below the shortest edge {self.network.min_length():.6g}")
        try:
            check_time_step(self.network, self.dt)
        except NetworkError as exc:
            raise ScenarioError(f"dt: {exc}") from exc
        if not 0.0 < self.relaxation <= 1.0:
            raise ScenarioError(f"solver.relaxation must lie in (0, 1], got {self.relaxation}")
        if self.sigma < 0.0:
            raise ScenarioError("sigma must be nonnegative (0 selects the exact solver)")
        if self.tol <= 0.0 or self.max_iter < 1:
            raise ScenarioError("solver.tol must be positive and solver.max_iter at least 1")
        if self.control_samples < 1:
            raise ScenarioError("solver.control_samples must be at least 1")
        if self.metric not in ("w1", "linf"):
            raise ScenarioError(f"solver.metric must be 'w1' or 'linf', got {self.metric!r}")
        if self.distance not in ("geodesic", "euclidean"):
            raise ScenarioError(f"distance must be 'geodesic' or 'euclidean', got {self.distance!r}")
        if self.density_floor <= 0.0:
            raise ScenarioError("density_floor must be positive")
        for p, init in enumerate(self.initial, start=1):
            _check_initial(init, f"initial[{p - 1}]")

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with some fields changed, revalidated."""
        if "cost" in changes:
            changes["cost"] = CommutingCostKind.parse(changes["cost"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "network": _plain(self.network_spec),
            "populations": [
                {"rho": p.rho, "a": p.a, "b": p.b, "C": p.C, "mu": p.mu,
                 "housing": _plain(h), "control_bounds": list(p.control_bounds)}
                for p, h in zip(self.populations, self.housing)
            ],
            "interaction": {"delta": self.interaction.delta, "epsilon": self.interaction.epsilon},
            "sigma": self.sigma,
            "T": self.T,
            "dx": self.dx,
            "dt": self.dt,
            "cost": self.cost.value,
            "distance": self.distance,
            "initial": [_plain(i) for i in self.initial],
            "density_floor": self.density_floor,
            "solver": {"tol": self.tol, "max_iter": self.max_iter, "relaxation": self.relaxation,
                       "control_samples": self.control_samples, "metric": self.metric},
            "sinkhorn": {"tol": self.sinkhorn_tol, "max_iter": self.sinkhorn_max_iter,
                         "log_domain_below": self.log_domain_below},
        }


def _plain(obj):
    return json.loads(json.dumps(obj))


def _check_initial(init: Mapping[str, Any], where: str) -> None:
    if not isinstance(init, Mapping) or "kind" not in init:
        raise ScenarioError(f"{where}: expected an object with a 'kind'")
    kind = init["kind"]
    if kind not in INITIAL_KINDS:
        raise ScenarioError(f"{where}.kind: unknown initial density {kind!r}, expected one of {INITIAL_KINDS}")
    needed = {"levels": ("high", "low", "normal"), "gaussian": ("center", "gamma"),
              "bump": ("center", "radius", "peak")}.get(kind, ())
    for key in needed:
        if key not in init:
            raise ScenarioError(f"{where}.{key}: required for kind {kind!r}")
    if kind == "gaussian" and float(init["gamma"]) <= 0.0:
        raise ScenarioError(f"{where}.gamma: must be positive")


def _number(doc: Mapping[str, Any], key: str, where: str, default=None) -> float:
    name = f"{where}.{key}" if where else key
    if key not in doc:
        if default is None:
            raise ScenarioError(f"{name}: required field missing")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{name}: expected a number, got {value!r}")
    return float(value)


def parse_scenario(doc: Mapping[str, Any]) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig` from a decoded scenario document."""
    for key in ("network", "populations", "initial"):
        if key not in doc:
            raise ScenarioError(f"{key}: required field missing")
    pops_doc = doc["populations"]
    if not isinstance(pops_doc, list) or len(pops_doc) != 2:
        raise ScenarioError("populations: expected a list of two population objects")
    pops, housing = [], []
    for k, p in enumerate(pops_doc):
        where = f"populations[{k}]"
        bounds = p.get("control_bounds", [-5.0, 5.0])
        try:
            pops.append(PopulationParams(
                rho=_number(p, "rho", where), a=_number(p, "a", where), b=_number(p, "b", where),
                C=_number(p, "C", where), mu=_number(p, "mu", where),
                control_bounds=(float(bounds[0]), float(bounds[1])),
            ))
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{where}: {exc}") from exc
        housing.append(p.get("housing", 0.0))
    initial = doc["initial"]
    if not isinstance(initial, list) or len(initial) != 2:
        raise ScenarioError("initial: expected a list of two initial-density objects")
    inter = doc.get("interaction", {})
    solver = doc.get("solver", {})
    sink = doc.get("sinkhorn", {})
    try:
        cost = CommutingCostKind.parse(doc.get("cost", "lin"))
    except ValueError as exc:
        raise ScenarioError(f"cost: unknown commuting cost {doc.get('cost')!r}") from exc
    try:
        interaction = InteractionParams(
            delta=_number(inter, "delta", "interaction", 0.1),
            epsilon=_number(inter, "epsilon", "interaction", 1e-5),
        )
    except ValueError as exc:
        raise ScenarioError(f"interaction: {exc}") from exc
    return ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        network_spec=doc["network"],
        populations=(pops[0], pops[1]),
        housing=(housing[0], housing[1]),
        interaction=interaction,
        sigma=_number(doc, "sigma", "", 0.5),
        T=_number(doc, "T", "", 2.0),
        dx=_number(doc, "dx", "", 0.01),
        dt=_number(doc, "dt", "", 0.01),
        cost=cost,
        distance=str(doc.get("distance", "geodesic")),
        initial=(initial[0], initial[1]),
        density_floor=_number(doc, "density_floor", "", 1e-3),
        tol=_number(solver, "tol", "solver", 1e-4),
        max_iter=int(_number(solver, "max_iter", "solver", 50)),
        relaxation=_number(solver, "relaxation", "solver", 0.5),
        control_samples=int(_number(solver, "control_samples", "solver", 41)),
        metric=str(solver.get("metric", "w1")),
        sinkhorn_tol=_number(sink, "tol", "sinkhorn", 1e-8),
        sinkhorn_max_iter=int(_number(sink, "max_iter", "sinkhorn", 10_000)),
        log_domain_below=_number(sink, "log_domain_below", "sinkhorn", 0.05),
    )


def preset_document(name: str) -> dict[str, Any]:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}, expected one of {PRESETS}")
    text = resources.files("urbanmfg").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Load a scenario from a JSON file path or a shipped preset name."""
    path = Path(source)
    if path.is_file():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    elif str(source) in PRESETS:
        doc = preset_document(str(source))
    else:
        raise ScenarioError(f"{source}: no such file or preset")
    return parse_scenario(doc)


def _profile(init: Mapping[str, Any], xy: np.ndarray) -> np.ndarray:
    kind = init["kind"]
    if kind == "uniform":
        return np.ones(xy.shape[0])
    if kind == "levels":
        normal = np.asarray(init["normal"], dtype=float)
        side = xy @ normal >= float(init.get("offset", 0.0))
        return np.where(side, float(init["high"]), float(init["low"]))
    if kind == "gaussian":
        gamma = float(init["gamma"])
        r2 = ((xy - np.asarray(init["center"], dtype=float)) ** 2).sum(axis=1)
        return np.exp(-r2 / gamma) / (gamma * np.pi)
    # bump: base level plus a planar hat
    r = np.sqrt(((xy - np.asarray(init["center"], dtype=float)) ** 2).sum(axis=1))
    base = float(init.get("base", 1.0))
    return base + (float(init["peak"]) - base) * np.maximum(0.0, 1.0 - r / float(init["radius"]))


def initial_density(config: ScenarioConfig, pop: int, grid: Grid) -> np.ndarray:
    """Initial density at the grid nodes, floored and normalized to averaged integral one."""
    m = _profile(config.initial[pop - 1], grid.node_coords)
    m = m / averaged_integral(grid, m)
    m = np.maximum(m, config.density_floor)
    m = vertex_ratio_projection(grid, m, pop)
    return m / averaged_integral(grid, m)
