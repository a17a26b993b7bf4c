"""Run configuration and the built-in benchmark problems.

A configuration is one flat JSON object; every key is optional and falls
back to the defaults of the chosen ``problem``. The key table is in README.md.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import build_mechanical as bm
from . import build_thermal as bt
from . import fem
from . import overhang as oh
from .mesh import BUILD_DIRECTIONS, build_grid
from .objectives import LoadCase
from .optimizer import Problem, Settings, WeightParams

SIDE_TO_EDGE = {"U": "top", "D": "bottom", "L": "left", "R": "right"}
PROBLEMS = ("mbb", "cantilever", "heatsink", "custom")
OUTPUT_ENV = "AMTOPO_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class OptimizationConfig:
    problem: str = "mbb"
    width: float = 150.0
    height: float = 50.0
    nx: int = 150
    ny: int = 50
    side: str = "D"
    E: float = 75.0
    nu: float = 0.34
    k: float = 119.0
    load: float = 1.0
    heat_source: float = 1.0
    alpha: float = 0.0
    beta: float = 20.0
    gamma: float = 0.2
    K: float = 0.7
    tau: float = 5e-4
    dt: float = 0.1
    vmax: float = 0.5
    a: float = 5e-4
    L: float = 25.0
    theta0: float = 45.0
    eps_s: float = 1e-4
    b: float = 5.0
    m: int = 50
    n: int = 50
    strain_x: float = -0.0025
    strain_y: float = -0.0025
    overhang: bool = True
    thermal: bool = True
    distortion: bool = True
    c: float = 1e-3
    w: float = 0.5
    xi: float = 0.9
    rho: float = 10.0
    ramp_iters: int = 50
    max_iters: int = 300
    tol: float = 1e-3
    snapshot_every: int = 10
    output_dir: str = "output"
    threads: int = 1

    def validate(self) -> None:
        errors = []

        def check(cond, msg):
            if not cond:
                errors.append(msg)

        check(self.problem in PROBLEMS, f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        check(self.width > 0 and self.height > 0, "width and height must be positive")
        check(self.nx >= 1 and self.ny >= 1, "nx and ny must be at least 1")
        check(self.side in SIDE_TO_EDGE, f"side must be one of U, D, L, R, got {self.side!r}")
        check(self.E > 0, "E must be positive")
        check(0 <= self.nu < 0.5, f"nu must lie in [0, 0.5), got {self.nu}")
        check(self.k > 0, "k must be positive")
        check(0 <= self.alpha <= 1, f"alpha must lie in [0, 1], got {self.alpha}")
        check(self.beta >= 0, "beta must be nonnegative")
        check(self.gamma >= 0, "gamma must be nonnegative")
        check(self.K > 0 and self.tau > 0 and self.dt > 0, "K, tau and dt must be positive")
        check(0 < self.vmax <= 1, f"vmax must lie in (0, 1], got {self.vmax}")
        check(self.a > 0 and self.L > 0, "a and L must be positive")
        check(0 < self.theta0 < 90, f"theta0 must lie in (0, 90), got {self.theta0}")
        check(self.eps_s > 0, "eps_s must be positive")
        check(self.b >= 2, f"b must be at least 2, got {self.b}")
        check(self.m >= 1 and self.n >= 1, "m and n must be at least 1")
        check(0 < self.c < 1, "c must lie in (0, 1)")
        check(self.w > 0 and self.xi > 0, "w and xi must be positive")
        check(self.max_iters >= 0, "max_iters must be nonnegative")
        check(self.threads >= 1, "threads must be at least 1")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))


_FIELD_TYPES = {f.name: f.type for f in fields(OptimizationConfig)}

PROBLEM_DEFAULTS = {
    "mbb": dict(width=150.0, height=50.0, nx=150, ny=50, L=25.0, vmax=0.5),
    "cantilever": dict(width=100.0, height=50.0, nx=100, ny=50, L=25.0, vmax=0.5),
    "heatsink": dict(width=100.0, height=100.0, nx=100, ny=100, L=25.0, vmax=0.4),
    "custom": {},
}

#: Layer counts of the building-direction study: 25 along the short side, 50 along the long one.
SIDE_LAYERS = {"U": 25, "D": 25, "L": 50, "R": 50}


def _coerce(name: str, value):
    kind = _FIELD_TYPES[name]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if kind == "int":
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def config_from_dict(data: dict) -> OptimizationConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    problem = data.get("problem", "mbb")
    if problem not in PROBLEMS:
        raise ConfigError(f"problem must be one of {PROBLEMS}, got {problem!r}")
    values = dict(PROBLEM_DEFAULTS[problem])
    if "output_dir" not in data and os.environ.get(OUTPUT_ENV):
        values["output_dir"] = os.environ[OUTPUT_ENV]
    for key, val in data.items():
        values[key] = _coerce(key, val)
    cfg = OptimizationConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> OptimizationConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return config_from_dict(data)


def dump_config(cfg: OptimizationConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_overrides(cfg: OptimizationConfig, **overrides) -> OptimizationConfig:
    out = replace(cfg, **{k: _coerce(k, v) for k, v in overrides.items() if v is not None})
    out.validate()
    return out


# --------------------------------------------------------------------------- benchmarks


def _patch(mesh, side: str, lo: float, hi: float):
    along = 0 if side in ("bottom", "top") else 1
    nodes = mesh.side_nodes(side)
    t = mesh.node_coords[nodes, along]
    tol = 1e-9 * max(mesh.width, mesh.height)
    keep = (t >= lo - tol) & (t <= hi + tol)
    edges = np.stack([nodes[:-1], nodes[1:]], axis=1)[keep[:-1] & keep[1:]]
    return nodes[keep], edges


def build_problem(cfg: OptimizationConfig) -> Problem:
    """Mesh, loads, supports and base plate of the configured problem."""
    base_edge = SIDE_TO_EDGE[cfg.side]
    mesh = build_grid(cfg.width, cfg.height, cfg.nx, cfg.ny, {"base": base_edge})
    material = fem.MaterialParams(cfg.E, cfg.nu, cfg.k)
    span = 3 * mesh.hx
    vspan = 3 * mesh.hy
    fixed = []
    kind = "compliance"
    if cfg.problem in ("mbb", "custom"):
        # half beam: symmetry on the left edge, roller at the bottom-right, load at the top-left
        sym = mesh.side_nodes("left")
        load_nodes, load_edges = _patch(mesh, "top", 0.0, span)
        sup_nodes, _ = _patch(mesh, "bottom", cfg.width - span, cfg.width)
        load = LoadCase(
            traction=[(load_edges, (0.0, -cfg.load))],
            clamp=[(sym, (0,)), (sup_nodes, (1,))],
        )
        fixed = [load_nodes, sup_nodes]
    elif cfg.problem == "cantilever":
        clamp_nodes = mesh.side_nodes("left")
        mid = cfg.height / 2
        load_nodes, load_edges = _patch(mesh, "right", mid - vspan / 2, mid + vspan / 2)
        load = LoadCase(traction=[(load_edges, (0.0, -cfg.load))], clamp=[(clamp_nodes, (0, 1))])
        fixed = [load_nodes]
    elif cfg.problem == "heatsink":
        kind = "thermal_compliance"
        sink, _ = _patch(mesh, "left", 0.4 * cfg.height, 0.6 * cfg.height)
        load = LoadCase(heat_source=cfg.heat_source, sink_nodes=sink)
        fixed = [sink]
    else:
        raise ConfigError(f"unknown problem {cfg.problem!r}")
    return Problem(
        mesh=mesh,
        material=material,
        load=load,
        kind=kind,
        build_direction=tuple(BUILD_DIRECTIONS[base_edge]),
        base_nodes=mesh.nodes_of("base"),
        fixed_material=np.unique(np.concatenate(fixed)) if fixed else None,
    )


def build_settings(cfg: OptimizationConfig, problem: Problem | None = None) -> Settings:
    direction = problem.build_direction if problem else tuple(BUILD_DIRECTIONS[SIDE_TO_EDGE[cfg.side]])
    return Settings(
        weights=WeightParams(cfg.alpha, cfg.beta, cfg.gamma, cfg.K, cfg.tau, cfg.dt, cfg.vmax),
        overhang=oh.OverhangParams(cfg.a, cfg.L, cfg.theta0, cfg.eps_s, direction),
        thermal=bt.ThermalBuildParams(1.0, 1.0, 0.0, cfg.m),
        strain=bm.InherentStrainParams(cfg.strain_x, cfg.strain_y, cfg.n, cfg.b),
        enable_overhang=cfg.overhang,
        enable_thermal=cfg.thermal,
        enable_distortion=cfg.distortion,
        c=cfg.c,
        w=cfg.w,
        xi=cfg.xi,
        rho=cfg.rho,
        ramp_iters=cfg.ramp_iters,
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        threads=cfg.threads,
        snapshot_every=cfg.snapshot_every,
    )


def benchmark(problem_id: str, side: str | None = None, **overrides):
    """Configuration, problem and layer defaults of a built-in benchmark.

    With an explicit ``side`` the layer count follows the building-direction
    study (25 for U and D, 50 for L and R).
    """
    if problem_id not in PROBLEM_DEFAULTS or problem_id == "custom":
        raise ConfigError(f"unknown benchmark {problem_id!r}")
    data = {"problem": problem_id}
    if side is not None:
        data["side"] = side
        data["m"] = SIDE_LAYERS.get(side, 50)
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = config_from_dict(data)
    problem = build_problem(cfg)
    return cfg, problem
