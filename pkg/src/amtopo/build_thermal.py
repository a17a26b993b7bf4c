"""Layer-by-layer heat dissipation during the build.

At step ``i`` the slabs ``1..i`` conduct heat to the base plate, and a flux
enters through the downward-facing material boundary of the slab just added.
Temperatures are nondimensional by default (``k = q = 1``, ``T_amb = 0``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .field import heaviside_derivative
from .mesh import LayerPartition, Mesh, active_elements, added_elements
from .parallel import map_ordered


@dataclass(frozen=True)
class ThermalBuildParams:
    conductivity: float = 1.0
    flux: float = 1.0
    base_temperature: float = 0.0
    layer_count: int = 50

    def __post_init__(self):
        if not self.conductivity > 0:
            raise ValueError("conductivity must be positive")
        if int(self.layer_count) < 1:
            raise ValueError("layer count must be at least 1")


@dataclass
class LayerState:
    step: int
    temperature: np.ndarray  # nodal, T_amb on inactive nodes
    factorized: fem.Factorized


def overhang_flux_weight(mesh: Mesh, psi, w: float = 0.5, build_dir=(0.0, 1.0)) -> np.ndarray:
    """Surface-delta weight of downward-facing interfaces at the Gauss points.

    ``dH(psi - 1/2; w)/dpsi * |grad psi| * H(n . d)`` with ``n = grad psi / |grad psi|``;
    integrating it over a region approximates the length of the overhang
    boundary inside that region.
    """
    if not w > 0:
        raise ValueError("half-width must be positive")
    grad = fem.gauss_gradients(mesh, psi)
    vals = fem.gauss_values(mesh, psi)
    norm = np.linalg.norm(grad, axis=-1)
    facing = grad @ np.asarray(build_dir, dtype=float)
    # vertical walls carry roundoff-level components along the build direction
    down = (norm > 1e-12) & (facing > 1e-9 * norm)
    return np.where(down, heaviside_derivative(vals - 0.5, w) * norm, 0.0)


def _flux_load(mesh: Mesh, partition: LayerPartition, step: int, weight: np.ndarray, q: float) -> np.ndarray:
    added = added_elements(partition, step)
    integrand = np.zeros_like(weight)
    integrand[added] = q * weight[added]
    return fem.scatter_gauss(mesh, integrand)


def solve_layer_temperature(
    mesh: Mesh,
    partition: LayerPartition,
    step: int,
    conductivity_scale,
    params: ThermalBuildParams,
    weight: np.ndarray,
    base_nodes: np.ndarray,
) -> LayerState:
    """Conduction on the slabs built so far with flux on the newest slab's overhangs."""
    elements = active_elements(partition, step)
    k = params.conductivity * np.asarray(conductivity_scale, dtype=float)
    system = fem.assemble_scalar(
        mesh,
        elements,
        diffusivity=k,
        flux_load=_flux_load(mesh, partition, step, weight, params.flux),
        dirichlet=(base_nodes, params.base_temperature),
    )
    f = fem.Factorized(system)
    T = f.solve()
    T[~system.active] = params.base_temperature
    return LayerState(step, T, f)


def _slab_mass(mesh: Mesh, partition: LayerPartition, step: int, nodal: np.ndarray) -> np.ndarray:
    """``int_{slab} f N`` for a nodal field ``f``."""
    ref = fem.layout(mesh).ref
    added = added_elements(partition, step)
    conn = mesh.elements[added]
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, conn, nodal[conn] @ ref.mass)
    return out


def layer_term(mesh: Mesh, partition: LayerPartition, state: LayerState, t_amb: float) -> float:
    excess = state.temperature - t_amb
    return float(excess @ _slab_mass(mesh, partition, state.step, excess))


def thermal_constraint(mesh: Mesh, partition: LayerPartition, states, t_amb: float = 0.0) -> float:
    """Sum over steps of the squared excess temperature on each step's new slab."""
    return float(sum(layer_term(mesh, partition, s, t_amb) for s in states))


def thermal_adjoint(mesh: Mesh, partition: LayerPartition, state: LayerState, t_amb: float = 0.0) -> np.ndarray:
    """Adjoint temperature for one step.

    Solves ``-div(k grad Ta) = 2 (T - T_amb)`` on the new slab, insulated
    elsewhere, ``Ta = T_amb`` on the base plate. With this sign the
    topological derivative is ``-k grad T . grad Ta``.
    """
    excess = state.temperature - t_amb
    rhs = 2.0 * _slab_mass(mesh, partition, state.step, excess)
    theta = state.factorized.solve(rhs, homogeneous=True)
    return theta + t_amb


def thermal_topo_derivative(mesh: Mesh, partition: LayerPartition, T, T_adj, conductivity: float, step: int) -> np.ndarray:
    """``-k grad T . grad Ta`` per element (Gauss average), zero off the active slabs."""
    gT = fem.gauss_gradients(mesh, T)
    gA = fem.gauss_gradients(mesh, T_adj)
    val = -conductivity * np.einsum("egd,egd->e", gT, gA) / gT.shape[1]
    out = np.zeros(mesh.n_elements)
    act = active_elements(partition, step)
    out[act] = val[act]
    return out


@dataclass
class ThermalResult:
    value: float
    states: list
    adjoints: list
    topo_derivative: np.ndarray  # per element
    density_sensitivity: np.ndarray  # dG/d(conductivity scale) per element
    weight: np.ndarray


def evaluate(
    mesh: Mesh,
    partition: LayerPartition,
    conductivity_scale,
    psi,
    params: ThermalBuildParams,
    base_nodes: np.ndarray,
    w: float = 0.5,
    weight: np.ndarray | None = None,
    workers: int = 1,
    sensitivities: bool = True,
) -> ThermalResult:
    """Run every layer, the constraint, and (optionally) its adjoints and derivatives."""
    if weight is None:
        weight = overhang_flux_weight(mesh, psi, w, partition.build_direction)
    scale = np.asarray(conductivity_scale, dtype=float)
    t_amb = params.base_temperature
    ref = fem.layout(mesh).ref
    Kref = params.conductivity * ref.stiffness

    def run(step):
        state = solve_layer_temperature(mesh, partition, step, scale, params, weight, base_nodes)
        term = layer_term(mesh, partition, state, t_amb)
        if not sensitivities:
            return state, term, None, None, None
        adj = thermal_adjoint(mesh, partition, state, t_amb)
        topo = thermal_topo_derivative(mesh, partition, state.temperature, adj, params.conductivity, step)
        act = active_elements(partition, step)
        Te = state.temperature[mesh.elements[act]]
        Ae = (adj - t_amb)[mesh.elements[act]]
        dens = np.zeros(mesh.n_elements)
        dens[act] = -np.einsum("ek,kl,el->e", Ae, Kref, Te)
        state.factorized = None
        return state, term, adj, topo, dens

    results = map_ordered(run, range(1, partition.layer_count + 1), workers)
    value = float(sum(r[1] for r in results))
    states = [r[0] for r in results]
    if not sensitivities:
        return ThermalResult(value, states, [], np.zeros(mesh.n_elements), np.zeros(mesh.n_elements), weight)
    topo = np.zeros(mesh.n_elements)
    dens = np.zeros(mesh.n_elements)
    for r in results:
        topo += r[3]
        dens += r[4]
    return ThermalResult(value, states, [r[2] for r in results], topo, dens, weight)
