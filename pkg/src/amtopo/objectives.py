"""Mean compliance and thermal compliance with their topological derivatives."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .mesh import Mesh


@dataclass
class LoadCase:
    """Loads and supports of one analysis.

    ``traction`` is a list of ``(edges, vector)``; ``clamp`` a list of
    ``(nodes, components)``. Thermal cases use ``heat_source`` over the whole
    domain and hold ``sink_nodes`` at ``sink_temperature``.
    """

    traction: list = field(default_factory=list)
    clamp: list = field(default_factory=list)
    heat_source: float = 0.0
    sink_nodes: np.ndarray | None = None
    sink_temperature: float = 0.0

    def __post_init__(self):
        has_clamp = any(np.size(nodes) for nodes, _ in self.clamp)
        has_sink = self.sink_nodes is not None and np.size(self.sink_nodes) > 0
        if not (has_clamp or has_sink):
            raise ValueError("load case needs a nonempty clamp or heat-sink set")


def _dirichlet(load: LoadCase):
    return [(np.asarray(nodes), comps, 0.0) for nodes, comps in load.clamp]


def solve_equilibrium(mesh: Mesh, stiffness_scale, material: fem.MaterialParams, load: LoadCase):
    """Static displacement over the whole domain; returns ``(v, load_vector)``."""
    if not load.clamp:
        raise ValueError("elastic load case needs a clamp set")
    system = fem.assemble_elasticity(
        mesh,
        stiffness_scale=stiffness_scale,
        material=material,
        traction=list(load.traction),
        dirichlet=_dirichlet(load),
    )
    v = fem.solve(system)
    return v, system.rhs


def compliance(v: np.ndarray, load_vector: np.ndarray) -> float:
    """Work of the boundary tractions, ``int_Gt t . v``."""
    return float(np.asarray(load_vector) @ np.asarray(v).reshape(-1))


def compliance_topo_derivative(mesh: Mesh, v: np.ndarray, amat) -> np.ndarray:
    """``-eps(v):A:eps(v)`` averaged over each element's Gauss points."""
    e = fem.gauss_strains(mesh, v)
    return -amat.contract(e, e).mean(axis=1)


def compliance_density_sensitivity(mesh: Mesh, v: np.ndarray, material: fem.MaterialParams) -> np.ndarray:
    """``dJ/ds_e = -v_e^T K_e v_e`` for the element stiffness scales ``s_e``."""
    Ke, _ = fem.elasticity_matrices(mesh, material)
    ve = np.asarray(v).reshape(-1)[fem.vector_dofs(mesh)]
    return -np.einsum("ek,kl,el->e", ve, Ke, ve)


def solve_thermal_equilibrium(mesh: Mesh, conductivity_scale, conductivity: float, load: LoadCase) -> np.ndarray:
    if load.sink_nodes is None or np.size(load.sink_nodes) == 0:
        raise ValueError("thermal load case needs heat-sink nodes")
    system = fem.assemble_scalar(
        mesh,
        diffusivity=conductivity * np.asarray(conductivity_scale, dtype=float),
        element_source=load.heat_source,
        dirichlet=(load.sink_nodes, load.sink_temperature),
    )
    return fem.solve(system)


def thermal_compliance(mesh: Mesh, p: np.ndarray, heat_source: float, p_amb: float = 0.0) -> float:
    """``int_D Q (p - p_amb)``."""
    ref = fem.layout(mesh).ref
    pe = (np.asarray(p) - p_amb)[mesh.elements]
    return float(heat_source * (pe @ ref.load).sum())


def thermal_compliance_topo_derivative(mesh: Mesh, p: np.ndarray, conductivity: float) -> np.ndarray:
    g = fem.gauss_gradients(mesh, p)
    return -conductivity * np.einsum("egd,egd->e", g, g) / g.shape[1]
