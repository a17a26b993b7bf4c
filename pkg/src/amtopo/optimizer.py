"""Reaction-diffusion level-set optimization loop.

Every iteration evaluates the enabled analyses on the current design, folds
them into one penalized objective and one derivative field, adds the volume
multiplier, and advances the level set by one semi-implicit pseudo-time step
of ``dphi/dt = -K (J' - tau lap(phi))``.
"""
from __future__ import annotations

import logging
import time
import warnings
import weakref
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import build_mechanical as bm
from . import build_thermal as bt
from . import fem, objectives
from . import overhang as oh
from .field import characteristic, clamp, ersatz_factor, heaviside_smoothed, initialize_levelset, to_elements, to_nodes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightParams:
    alpha: float = 0.0
    beta: float = 20.0
    gamma: float = 0.2
    K: float = 0.7
    tau: float = 5e-4
    dt: float = 0.1
    vmax: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be nonnegative")
        if not (self.K > 0 and self.tau > 0 and self.dt > 0):
            raise ValueError("K, tau and dt must be positive")
        if not 0.0 < self.vmax <= 1.0:
            raise ValueError("vmax must lie in (0, 1]")


@dataclass
class IterationRecord:
    iteration: int
    J: float
    objective: float
    distortion: float
    overhang: float
    thermal: float
    volume: float
    volume_target: float
    multiplier: float
    overhang_audit: float
    wall_time: float

    FIELDS = (
        "iteration", "J", "objective", "distortion", "overhang", "thermal",
        "volume", "volume_target", "multiplier", "overhang_audit", "wall_time",
    )

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


# --------------------------------------------------------------------------- combine


@dataclass
class Normalizers:
    """Reference magnitudes of the normalized terms, captured once."""

    objective: float | None = None
    distortion: float | None = None
    thermal: float | None = None

    def capture(self, name: str, value: float, fallback: float = 1.0, floor: float = 0.0) -> float:
        """Fix the magnitude of ``name`` on first call; ``fallback`` if it is within ``floor`` of zero."""
        current = getattr(self, name)
        if current is None:
            current = abs(value) if abs(value) > floor else fallback
            setattr(self, name, current)
        return current


def combine(J_obj, G_u, G_o, G_t, normalizers, weights: WeightParams):
    """Weighted penalty objective and the matching derivative field.

    Each term is ``(value, derivative_field)``; ``normalizers`` is
    ``(N_obj, N_u, N_t)``. The overhang term enters unnormalized.
    """
    n_obj, n_u, n_t = normalizers
    for n in normalizers:
        if not n > 0:
            raise ValueError("normalizers must be positive")
    a, b, g = weights.alpha, weights.beta, weights.gamma
    J = (1 - a) * J_obj[0] / n_obj + a * G_u[0] / n_u + b * G_o[0] + g * G_t[0] / n_t
    dJ = (
        (1 - a) * np.asarray(J_obj[1]) / n_obj
        + a * np.asarray(G_u[1]) / n_u
        + b * np.asarray(G_o[1])
        + g * np.asarray(G_t[1]) / n_t
    )
    return float(J), dJ


# --------------------------------------------------------------------------- volume


@dataclass
class VolumeController:
    """Augmented-Lagrangian multiplier with a ramped volume target."""

    vmax: float
    rho: float = 10.0
    ramp_iters: int = 50
    initial_volume: float = 1.0
    multiplier: float = 0.0

    def target(self, iteration: int) -> float:
        if self.ramp_iters <= 0 or iteration >= self.ramp_iters:
            return self.vmax
        t = iteration / self.ramp_iters
        return self.initial_volume + t * (self.vmax - self.initial_volume)

    def update(self, volume: float, iteration: int) -> float:
        tgt = self.target(iteration)
        self.multiplier = max(0.0, self.multiplier + self.rho * (volume / tgt - 1.0))
        return self.multiplier


def volume_controller(volume: float, vmax: float, multiplier: float, rho: float = 10.0) -> float:
    """One multiplier update against a fixed target."""
    return max(0.0, multiplier + rho * (volume / vmax - 1.0))


# --------------------------------------------------------------------------- level-set update

_UPDATERS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _update_operator(mesh, coef: float, length: float, fixed: np.ndarray | None):
    cache = _UPDATERS.setdefault(mesh, {})
    key = (coef, length, None if fixed is None else fixed.tobytes())
    if key not in cache:
        ref = fem.layout(mesh).ref
        lumped = np.zeros(mesh.n_nodes)
        np.add.at(lumped, mesh.elements, np.broadcast_to(ref.load, mesh.elements.shape))
        lumped /= length**2
        S = fem.assemble_scalar(mesh, diffusivity=1.0, mass_coeff=0.0, dirichlet=(np.array([0]), 0.0)).matrix
        A = sp.diags(lumped) + coef * S
        system = fem.LinearSystem(
            A.tocsr(),
            np.zeros(mesh.n_nodes),
            np.empty(0, dtype=np.int64) if fixed is None else fixed,
            np.empty(0) if fixed is None else np.zeros(fixed.size),
            np.ones(mesh.n_nodes, dtype=bool),
        )
        cache[key] = (fem.Factorized(system), lumped)
    return cache[key]


def update_levelset(
    mesh,
    phi,
    dJ,
    K: float = 0.7,
    tau: float = 5e-4,
    dt: float = 0.1,
    length: float = 1.0,
    fixed=None,
) -> np.ndarray:
    """One step of ``(M + dt K tau S) phi' = M (phi - dt K J')``, clamped to [-1, 1].

    ``M`` is the lumped mass and ``S`` the Laplacian stiffness, both in
    coordinates divided by ``length``. ``fixed`` is a list of
    ``(nodes, value)`` pairs held constant, e.g. non-design material at 1.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    nodes = vals = None
    fixed = list(fixed.items()) if isinstance(fixed, dict) else list(fixed or [])
    if fixed:
        nodes = np.concatenate([np.asarray(n) for n, _ in fixed]).astype(np.int64)
        vals = np.concatenate([np.full(np.size(n), v, dtype=float) for n, v in fixed])
        nodes, first = np.unique(nodes, return_index=True)
        vals = vals[first]
    op, lumped = _update_operator(mesh, dt * K * tau, float(length), nodes)
    rhs = lumped * (np.asarray(phi) - dt * K * np.asarray(dJ))
    if nodes is not None:
        op.system.fixed_values = vals
    new = op.solve(rhs)
    return clamp(new)


# --------------------------------------------------------------------------- problem state


@dataclass
class Problem:
    """Everything the loop needs about one design problem."""

    mesh: object
    material: fem.MaterialParams
    load: objectives.LoadCase
    kind: str = "compliance"  # or "thermal_compliance"
    build_direction: tuple = (0.0, 1.0)
    base_nodes: np.ndarray | None = None
    fixed_material: np.ndarray | None = None
    fixed_void: np.ndarray | None = None


@dataclass
class Settings:
    weights: WeightParams = field(default_factory=WeightParams)
    overhang: oh.OverhangParams = field(default_factory=oh.OverhangParams)
    thermal: bt.ThermalBuildParams = field(default_factory=bt.ThermalBuildParams)
    strain: bm.InherentStrainParams = field(default_factory=bm.InherentStrainParams)
    enable_overhang: bool = True
    enable_thermal: bool = True
    enable_distortion: bool = True
    c: float = 1e-3
    w: float = 0.5
    xi: float = 0.9
    rho: float = 10.0
    ramp_iters: int = 50
    max_iters: int = 300
    tol: float = 1e-3
    patience: int = 5
    length: float | None = None  # pseudo-time length scale; default max(width, height)
    threads: int = 1
    init: str = "full"
    snapshot_every: int = 0
    snapshot_callback: object = None


@dataclass
class Evaluation:
    J: float
    dJ: np.ndarray  # nodal, per unit volume fraction, before the volume multiplier
    terms: dict
    volume: float
    psi: np.ndarray | None = None
    fields: dict = field(default_factory=dict)


class Optimizer:
    def __init__(self, problem: Problem, settings: Settings):
        self.problem = problem
        self.settings = settings
        self.normalizers = Normalizers()
        mesh = problem.mesh
        self.amat = bm.amat_tensor(problem.material.young_modulus, problem.material.poisson_ratio)
        from .mesh import partition_layers

        s = settings
        self.thermal_partition = None
        self.mech_partition = None
        if self._use("thermal"):
            self.thermal_partition = partition_layers(mesh, problem.build_direction, s.thermal.layer_count)
        if self._use("distortion"):
            self.mech_partition = partition_layers(mesh, problem.build_direction, s.strain.layer_count)

    def _use(self, term: str) -> bool:
        s, w = self.settings, self.settings.weights
        if term == "overhang":
            return s.enable_overhang and w.beta > 0
        if term == "thermal":
            return s.enable_thermal and w.gamma > 0
        if term == "distortion":
            return s.enable_distortion and w.alpha > 0
        raise KeyError(term)

    # ------------------------------------------------------------------ analyses

    def evaluate(self, phi: np.ndarray, sensitivities: bool = True) -> Evaluation:
        p, s = self.problem, self.settings
        mesh = p.mesh
        area = mesh.area
        chi_e = to_elements(mesh, characteristic(phi, s.xi))
        scale_e = to_elements(mesh, ersatz_factor(phi, s.w, s.c))
        volume = float(to_elements(mesh, heaviside_smoothed(phi, s.w)).mean())
        terms, derivs, fields = {}, {}, {}

        if p.kind == "compliance":
            v, f = objectives.solve_equilibrium(mesh, scale_e, p.material, p.load)
            terms["objective"] = objectives.compliance(v, f)
            derivs["objective"] = objectives.compliance_topo_derivative(mesh, v, self.amat)
            fields["displacement"] = v
        else:
            T = objectives.solve_thermal_equilibrium(mesh, scale_e, p.material.conductivity, p.load)
            terms["objective"] = objectives.thermal_compliance(mesh, T, p.load.heat_source, p.load.sink_temperature)
            derivs["objective"] = objectives.thermal_compliance_topo_derivative(mesh, T, p.material.conductivity)
            fields["temperature"] = T

        psi = None
        if self._use("overhang") or self._use("thermal"):
            op = s.overhang
            psi = oh.helmholtz_filter(mesh, chi_e, op.a, op.length)
            fields["psi"] = psi
        if self._use("overhang"):
            terms["overhang"] = oh.overhang_constraint(mesh, psi, s.overhang) / area
            if sensitivities:
                adj = oh.overhang_adjoint(mesh, psi, s.overhang)
                derivs["overhang"] = to_elements(mesh, oh.overhang_topo_derivative(adj)) / area
        if self._use("thermal"):
            res = bt.evaluate(
                mesh, self.thermal_partition, scale_e, psi, s.thermal, p.base_nodes,
                w=s.w, workers=s.threads, sensitivities=sensitivities,
            )
            terms["thermal"] = res.value
            derivs["thermal"] = res.topo_derivative
        if self._use("distortion"):
            res = bm.evaluate(
                mesh, self.mech_partition, scale_e, p.material, s.strain, p.base_nodes,
                workers=s.threads, sensitivities=sensitivities,
            )
            terms["distortion"] = res.value
            derivs["distortion"] = res.topo_derivative
            fields["distortion"] = res.displacement

        # energy densities of the material actually present: negligible in the ersatz void
        for name in ("objective", "thermal", "distortion"):
            if name in derivs:
                derivs[name] = derivs[name] * scale_e

        n_obj = self.normalizers.capture("objective", terms["objective"])
        n_u = self.normalizers.capture("distortion", terms.get("distortion", 0.0), floor=1e-300)
        t_ref = self._thermal_scale()
        n_t = self.normalizers.capture("thermal", terms.get("thermal", 0.0), fallback=t_ref, floor=1e-3 * t_ref)
        zero = np.zeros(mesh.n_elements)
        J, dJ = combine(
            (terms["objective"], derivs.get("objective", zero)),
            (terms.get("distortion", 0.0), derivs.get("distortion", zero)),
            (terms.get("overhang", 0.0), derivs.get("overhang", zero)),
            (terms.get("thermal", 0.0), derivs.get("thermal", zero)),
            (n_obj, n_u, n_t),
            s.weights,
        )
        dJ_nodes = to_nodes(mesh, dJ * area)
        return Evaluation(J, dJ_nodes, terms, volume, psi, fields)

    def _thermal_scale(self) -> float:
        """Reference for the thermal term while the design has no overhangs yet.

        One slab-height-wide overhang across the whole width, heated at the top
        of a column of full build height: ``(q H / k)^2 * width * H / m``.
        """
        mesh, t = self.problem.mesh, self.settings.thermal
        axis = int(np.argmax(np.abs(self.problem.build_direction)))
        H = mesh.height if axis == 1 else mesh.width
        span = mesh.width if axis == 1 else mesh.height
        return (t.flux * H / t.conductivity) ** 2 * span * H / t.layer_count

    # ------------------------------------------------------------------ loop

    def fixed_nodes(self) -> list:
        p = self.problem
        fixed = []
        if p.fixed_material is not None and np.size(p.fixed_material):
            fixed.append((np.asarray(p.fixed_material), 1.0))
        if p.fixed_void is not None and np.size(p.fixed_void):
            fixed.append((np.asarray(p.fixed_void), -1.0))
        return fixed

    def run(self, phi0: np.ndarray | None = None, callback=None):
        p, s = self.problem, self.settings
        mesh = p.mesh
        w = s.weights
        phi = initialize_levelset(mesh, s.init) if phi0 is None else np.array(phi0, dtype=float)
        fixed = self.fixed_nodes()
        for nodes, val in fixed:
            phi[nodes] = val
        history: list[IterationRecord] = []
        if s.max_iters <= 0:
            return Result(phi, history, converged=False, best_phi=phi.copy())

        length = s.length or max(mesh.width, mesh.height)
        vol0 = float(to_elements(mesh, heaviside_smoothed(phi, s.w)).mean())
        vc = VolumeController(w.vmax, s.rho, s.ramp_iters, initial_volume=max(vol0, w.vmax))
        from .audit import overhang_violation

        converged = False
        best = (np.inf, phi.copy(), -1)
        for it in range(s.max_iters):
            t0 = time.perf_counter()
            try:
                ev = self.evaluate(phi)
            except fem.SolverError as exc:
                raise fem.SolverError(f"iteration {it}: {exc}") from exc
            lam = vc.update(ev.volume, it)
            audit = overhang_violation(mesh, phi, p.build_direction, s.overhang.theta0)
            rec = IterationRecord(
                it, ev.J, ev.terms["objective"], ev.terms.get("distortion", 0.0),
                ev.terms.get("overhang", 0.0), ev.terms.get("thermal", 0.0),
                ev.volume, vc.target(it), lam, audit, 0.0,
            )
            feasible = it >= s.ramp_iters and abs(ev.volume - w.vmax) <= 0.01
            if feasible and ev.J < best[0]:
                best = (ev.J, phi.copy(), it)
            if s.snapshot_callback and s.snapshot_every and it % s.snapshot_every == 0:
                s.snapshot_callback(it, phi, ev)
            if self._converged(history + [rec], feasible):
                rec.wall_time = time.perf_counter() - t0
                history.append(rec)
                converged = True
                log.info("converged at iteration %d", it)
                break
            phi = update_levelset(mesh, phi, ev.dJ + lam, w.K, w.tau, w.dt, length, fixed)
            rec.wall_time = time.perf_counter() - t0
            history.append(rec)
            if callback:
                callback(rec)
            log.debug("it %d J=%.5g V=%.4f lam=%.4g", it, ev.J, ev.volume, lam)
        if not converged:
            warnings.warn(f"no convergence within {s.max_iters} iterations")
        return Result(phi, history, converged, best_phi=best[1], best_iteration=best[2])

    def _converged(self, history, feasible: bool) -> bool:
        s = self.settings
        if not feasible or len(history) < s.patience + 1:
            return False
        Js = np.array([r.J for r in history[-(s.patience + 1):]])
        rel = np.abs(np.diff(Js)) / np.maximum(np.abs(Js[1:]), 1e-30)
        return bool(np.all(rel < s.tol))


@dataclass
class Result:
    phi: np.ndarray
    history: list
    converged: bool
    best_phi: np.ndarray | None = None
    best_iteration: int = -1


def run(problem: Problem, settings: Settings, phi0=None, callback=None) -> Result:
    return Optimizer(problem, settings).run(phi0, callback)
